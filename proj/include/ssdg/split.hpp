#pragma once

// Semi-supervised domain generalization splits and minibatch streams.

#include "dataset.hpp"
#include "errors.hpp"
#include "rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ssdg {

struct SourcePartition {
    int domain = 0;
    std::vector<LabeledExample> labeled;
    std::vector<UnlabeledExample> unlabeled;

    std::size_t pool_size() const { return labeled.size() + unlabeled.size(); }

    // Pool index i addresses labeled[0..L) followed by unlabeled[0..U).
    const ImagePtr& pool_image(std::size_t i) const {
        return i < labeled.size() ? labeled[i].image : unlabeled[i - labeled.size()].image;
    }
};

struct SSDGSplit {
    int target_domain = 0;
    std::vector<SourcePartition> sources;
    std::uint64_t seed = 0;
    int labels_per_class = 0;
    int num_classes = 0;

    int num_sources() const { return static_cast<int>(sources.size()); }

    std::size_t total_labeled() const {
        std::size_t n = 0;
        for (const auto& s : sources) n += s.labeled.size();
        return n;
    }

    std::vector<int> source_domains() const {
        std::vector<int> out;
        for (const auto& s : sources) out.push_back(s.domain);
        return out;
    }

    // Position of `domain` in `sources`, or -1.
    int source_slot(int domain) const {
        for (std::size_t i = 0; i < sources.size(); ++i)
            if (sources[i].domain == domain) return static_cast<int>(i);
        return -1;
    }
};

namespace split_detail {

inline SourcePartition partition_domain(const MultiDomainDataset& ds, int domain,
                                        const std::vector<int>& labeled_indices) {
    SourcePartition part;
    part.domain = domain;
    const auto& examples = ds.examples[static_cast<std::size_t>(domain)];
    std::vector<char> is_labeled(examples.size(), 0);
    for (int idx : labeled_indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= examples.size())
            throw SplitError("labeled index out of range in domain " + ds.domains[static_cast<std::size_t>(domain)]);
        if (is_labeled[static_cast<std::size_t>(idx)]) throw SplitError("duplicate labeled index");
        is_labeled[static_cast<std::size_t>(idx)] = 1;
        const auto& e = examples[static_cast<std::size_t>(idx)];
        part.labeled.push_back({e.image, e.label, domain, idx});
    }
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (!is_labeled[i])
            part.unlabeled.emplace_back(examples[i].image, domain, static_cast<int>(i), examples[i].label);
    return part;
}

} // namespace split_detail

// Leave-one-domain-out split. For every source domain, exactly
// labels_per_class examples per class are drawn without replacement using a
// generator derived from (seed, domain index); the rest of the domain becomes
// unlabeled. `sources` restricts the source set (default: all non-target).
inline SSDGSplit build_split(const MultiDomainDataset& ds, int target_domain, int labels_per_class,
                             std::uint64_t seed, std::optional<std::vector<int>> sources = std::nullopt) {
    if (target_domain < 0 || target_domain >= ds.num_domains())
        throw SplitError("target domain index " + std::to_string(target_domain) + " out of range");
    if (labels_per_class < 1) throw SplitError("labels_per_class must be >= 1");
    std::vector<int> src;
    if (sources) {
        src = *sources;
        std::sort(src.begin(), src.end());
        if (std::adjacent_find(src.begin(), src.end()) != src.end()) throw SplitError("duplicate source domain");
    } else {
        for (int d = 0; d < ds.num_domains(); ++d)
            if (d != target_domain) src.push_back(d);
    }
    if (src.empty()) throw SplitError("split needs at least one source domain");

    SSDGSplit split;
    split.target_domain = target_domain;
    split.seed = seed;
    split.labels_per_class = labels_per_class;
    split.num_classes = ds.num_classes;
    for (int d : src) {
        if (d == target_domain) throw SplitError("target domain cannot also be a source");
        if (d < 0 || d >= ds.num_domains()) throw SplitError("source domain out of range");
        const auto& examples = ds.examples[static_cast<std::size_t>(d)];
        std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes));
        for (std::size_t i = 0; i < examples.size(); ++i)
            by_class[static_cast<std::size_t>(examples[i].label)].push_back(static_cast<int>(i));
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d), 0x5B17ull));
        std::vector<int> chosen;
        for (int c = 0; c < ds.num_classes; ++c) {
            auto& pool = by_class[static_cast<std::size_t>(c)];
            if (static_cast<int>(pool.size()) < labels_per_class)
                throw SplitError("domain " + ds.domains[static_cast<std::size_t>(d)] + " class " +
                                 std::to_string(c) + " has only " + std::to_string(pool.size()) +
                                 " examples, fewer than labels_per_class=" + std::to_string(labels_per_class));
            // Partial Fisher-Yates: the first labels_per_class slots are a uniform sample.
            for (int k = 0; k < labels_per_class; ++k) {
                const auto j = static_cast<std::size_t>(k) + rng.below(pool.size() - static_cast<std::size_t>(k));
                std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
                chosen.push_back(pool[static_cast<std::size_t>(k)]);
            }
        }
        std::sort(chosen.begin(), chosen.end());
        split.sources.push_back(split_detail::partition_domain(ds, d, chosen));
    }
    return split;
}

// Plain-text (JSON) record sufficient to rebuild a split from its dataset.
inline nlohmann::json split_to_json(const SSDGSplit& split, const MultiDomainDataset& ds) {
    nlohmann::json j;
    j["target_domain"] = split.target_domain;
    j["target_name"] = ds.domains.at(static_cast<std::size_t>(split.target_domain));
    j["seed"] = split.seed;
    j["labels_per_class"] = split.labels_per_class;
    j["num_classes"] = split.num_classes;
    auto& arr = j["sources"] = nlohmann::json::array();
    for (const auto& s : split.sources) {
        std::vector<int> idx;
        for (const auto& e : s.labeled) idx.push_back(e.index);
        arr.push_back({{"domain", s.domain},
                       {"name", ds.domains.at(static_cast<std::size_t>(s.domain))},
                       {"labeled_indices", idx},
                       {"num_unlabeled", s.unlabeled.size()}});
    }
    return j;
}

inline SSDGSplit split_from_json(const nlohmann::json& j, const MultiDomainDataset& ds) {
    try {
        SSDGSplit split;
        split.target_domain = j.at("target_domain").get<int>();
        split.seed = j.at("seed").get<std::uint64_t>();
        split.labels_per_class = j.at("labels_per_class").get<int>();
        split.num_classes = j.at("num_classes").get<int>();
        if (split.num_classes != ds.num_classes) throw SplitError("split record class count differs from dataset");
        for (const auto& s : j.at("sources")) {
            const int d = s.at("domain").get<int>();
            if (d < 0 || d >= ds.num_domains() || d == split.target_domain)
                throw SplitError("split record names an invalid source domain");
            split.sources.push_back(
                split_detail::partition_domain(ds, d, s.at("labeled_indices").get<std::vector<int>>()));
        }
        return split;
    } catch (const nlohmann::json::exception& e) {
        throw SplitError(std::string("malformed split record: ") + e.what());
    }
}

// One minibatch: per source, B_l labeled and B_u unlabeled examples.
struct BatchBundle {
    std::vector<std::vector<LabeledExample>> labeled;
    std::vector<std::vector<UnlabeledExample>> unlabeled;
    std::vector<int> domains;  // source domain of each slot

    std::size_t labeled_count() const {
        std::size_t n = 0;
        for (const auto& v : labeled) n += v.size();
        return n;
    }
    std::size_t unlabeled_count() const {
        std::size_t n = 0;
        for (const auto& v : unlabeled) n += v.size();
        return n;
    }
};

// Infinite per-domain sampler. Each (source, stream) pool is walked in a
// seeded random order that is reshuffled after every full pass.
class BatchStream {
public:
    BatchStream(const SSDGSplit& split, int batch_labeled, int batch_unlabeled, std::uint64_t seed)
        : split_(&split), batch_labeled_(batch_labeled), batch_unlabeled_(batch_unlabeled) {
        if (batch_labeled < 1 || batch_unlabeled < 1) throw StreamError("batch sizes must be >= 1");
        if (split.sources.empty()) throw StreamError("split has no source domains");
        for (const auto& s : split.sources) {
            if (s.labeled.empty()) throw StreamError("empty labeled pool in source domain " + std::to_string(s.domain));
            if (s.unlabeled.empty())
                throw StreamError("empty unlabeled pool in source domain " + std::to_string(s.domain));
            cursors_.push_back(Cursor(s.labeled.size(), derive_seed(seed, static_cast<std::uint64_t>(s.domain), 1)));
            cursors_.push_back(Cursor(s.unlabeled.size(), derive_seed(seed, static_cast<std::uint64_t>(s.domain), 2)));
        }
    }

    BatchBundle next() {
        BatchBundle b;
        for (std::size_t k = 0; k < split_->sources.size(); ++k) {
            const auto& s = split_->sources[k];
            b.domains.push_back(s.domain);
            auto& lab = b.labeled.emplace_back();
            for (int i = 0; i < batch_labeled_; ++i) lab.push_back(s.labeled[cursors_[2 * k].next()]);
            auto& unl = b.unlabeled.emplace_back();
            for (int i = 0; i < batch_unlabeled_; ++i) unl.push_back(s.unlabeled[cursors_[2 * k + 1].next()]);
        }
        return b;
    }

private:
    class Cursor {
    public:
        Cursor(std::size_t size, std::uint64_t seed) : order_(size), rng_(seed) {
            for (std::size_t i = 0; i < size; ++i) order_[i] = i;
            rng_.shuffle(order_.begin(), order_.end());
        }
        std::size_t next() {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_.begin(), order_.end());
                pos_ = 0;
            }
            return order_[pos_++];
        }

    private:
        std::vector<std::size_t> order_;
        std::size_t pos_ = 0;
        Rng rng_;
    };

    const SSDGSplit* split_;
    int batch_labeled_;
    int batch_unlabeled_;
    std::vector<Cursor> cursors_;
};

} // namespace ssdg
