#pragma once

#include "errors.hpp"
#include "image.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ssdg {

using ImagePtr = std::shared_ptr<const Image>;

struct DomainExample {
    ImagePtr image;
    int label = 0;
};

// Images grouped by domain. Every domain holds at least one example of every
// class and all domains share the label set [0, num_classes).
struct MultiDomainDataset {
    std::vector<std::string> domains;
    std::vector<std::string> class_names;
    std::vector<std::vector<DomainExample>> examples;  // examples[domain][i]
    int num_classes = 0;

    int num_domains() const { return static_cast<int>(domains.size()); }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& d : examples) n += d.size();
        return n;
    }

    int domain_index(const std::string& name) const {
        for (std::size_t i = 0; i < domains.size(); ++i)
            if (domains[i] == name) return static_cast<int>(i);
        return -1;
    }

    // Per-class example counts of one domain.
    std::vector<int> class_counts(int domain) const {
        std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
        for (const auto& e : examples.at(static_cast<std::size_t>(domain))) ++counts[static_cast<std::size_t>(e.label)];
        return counts;
    }

    void validate() const {
        if (domains.empty()) throw IngestionError("dataset has no domains");
        if (num_classes < 1) throw IngestionError("dataset has no classes");
        if (examples.size() != domains.size()) throw IngestionError("domain list and example lists disagree");
        for (int d = 0; d < num_domains(); ++d) {
            for (const auto& e : examples[static_cast<std::size_t>(d)])
                if (e.label < 0 || e.label >= num_classes || !e.image)
                    throw IngestionError("domain " + domains[static_cast<std::size_t>(d)] + " has an invalid example");
            const auto counts = class_counts(d);
            for (int c = 0; c < num_classes; ++c)
                if (counts[static_cast<std::size_t>(c)] == 0)
                    throw IngestionError("domain " + domains[static_cast<std::size_t>(d)] + " lacks class " +
                                         std::to_string(c));
        }
    }
};

struct LabeledExample {
    ImagePtr image;
    int label = 0;
    int domain = 0;
    int index = 0;  // position within the domain's example list
};

class DiagnosticsChannel;

// An unlabeled training image. The ground-truth class is retained for
// diagnostics only: it is private and readable solely through
// DiagnosticsChannel, which the loss code never touches.
class UnlabeledExample {
public:
    UnlabeledExample() = default;
    UnlabeledExample(ImagePtr image, int domain, int index, int hidden_label)
        : image(std::move(image)), domain(domain), index(index), hidden_label_(hidden_label) {}

    ImagePtr image;
    int domain = 0;
    int index = 0;

private:
    int hidden_label_ = -1;
    friend class DiagnosticsChannel;
};

class DiagnosticsChannel {
public:
    static int hidden_label(const UnlabeledExample& u) {
        if (u.hidden_label_ < 0) throw MetricsError("unlabeled example carries no hidden label");
        return u.hidden_label_;
    }
};

} // namespace ssdg
