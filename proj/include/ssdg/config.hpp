#pragma once

// Experiment configuration: a JSON document with the sections
// dataset / protocol / method / augment / output. Unknown keys are errors.

#include "augment.hpp"
#include "encoder.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ssdg {

using Json = nlohmann::json;

struct DatasetSection {
    std::string source = "synthetic";  // synthetic | folder
    std::string folder;
    std::uint64_t synthetic_seed = 0;
    SynthConfig synthetic;
};

struct ProtocolSection {
    int labels_per_class = 10;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<std::string> targets;  // empty = all domains
    std::optional<int> num_sources;    // empty = every non-target domain
};

struct MethodSection {
    std::vector<Method> methods{Method::stylematch};
    TrainConfig train;
    EncoderSpec encoder;
};

struct OutputSection {
    std::string run_dir = "runs";
    long checkpoint_interval = 0;  // 0 = final checkpoint only
};

struct ExperimentConfig {
    DatasetSection dataset;
    ProtocolSection protocol;
    MethodSection method;
    AugmentationPolicy augment;
    OutputSection output;
};

namespace config_detail {

inline void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("unknown key " + (where.empty() ? "" : where + ".") + it.key());
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

inline Json methods_to_json(const std::vector<Method>& ms) {
    if (ms.size() == 1) return method_name(ms.front());
    Json arr = Json::array();
    for (Method m : ms) arr.push_back(method_name(m));
    return arr;
}

inline std::vector<Method> methods_from_json(const Json& j) {
    std::vector<Method> out;
    if (j.is_string()) {
        out.push_back(parse_method(j.get<std::string>()));
    } else if (j.is_array()) {
        for (const auto& m : j) {
            if (!m.is_string()) throw ConfigError("method.method entries must be strings");
            out.push_back(parse_method(m.get<std::string>()));
        }
    } else {
        throw ConfigError("method.method must be a string or a list of strings");
    }
    if (out.empty()) throw ConfigError("method.method must name at least one method");
    return out;
}

} // namespace config_detail

inline Json to_json(const ExperimentConfig& c) {
    const auto& s = c.dataset.synthetic;
    const auto& t = c.method.train;
    const auto& e = c.method.encoder;
    Json j;
    j["dataset"] = {{"source", c.dataset.source},
                    {"folder", c.dataset.folder},
                    {"seed", c.dataset.synthetic_seed},
                    {"synthetic",
                     {{"num_domains", s.num_domains},
                      {"num_classes", s.num_classes},
                      {"samples_per_class_per_domain", s.samples_per_class_per_domain},
                      {"image_size", s.image_size},
                      {"class_color_prob", s.class_color_prob},
                      {"max_clutter", s.max_clutter}}}};
    j["protocol"] = {{"labels_per_class", c.protocol.labels_per_class},
                     {"seeds", c.protocol.seeds},
                     {"targets", c.protocol.targets.empty() ? Json("all") : Json(c.protocol.targets)},
                     {"num_sources", c.protocol.num_sources ? Json(*c.protocol.num_sources) : Json(nullptr)}};
    j["method"] = {{"method", config_detail::methods_to_json(c.method.methods)},
                   {"steps", t.steps},
                   {"lr_backbone", t.lr_backbone},
                   {"lr_classifier", t.lr_classifier},
                   {"confidence_threshold", t.confidence_threshold},
                   {"temperature", t.temperature},
                   {"ema_decay", t.ema_decay},
                   {"entmin_weight", t.entmin_weight},
                   {"consistency_weight", t.consistency_weight},
                   {"momentum", t.momentum},
                   {"weight_decay", t.weight_decay},
                   {"batch_labeled", t.batch_labeled},
                   {"batch_unlabeled", t.batch_unlabeled},
                   {"resample_noise_per_view", t.resample_noise_per_view},
                   {"metrics_both_streams", t.metrics_both_streams},
                   {"metrics_only_passing", t.metrics_only_passing},
                   {"encoder", {{"widths", e.widths}, {"norm_groups", e.norm_groups}}}};
    j["augment"] = {{"weak", {{"crop_padding", c.augment.weak.crop_padding}, {"flip_prob", c.augment.weak.flip_prob}}},
                    {"strong",
                     {{"num_ops", c.augment.strong.num_ops},
                      {"magnitude", c.augment.strong.magnitude},
                      {"cutout_fraction", c.augment.strong.cutout_fraction}}},
                    {"style", {{"epsilon", c.augment.style.epsilon}, {"mode", style_mode_name(c.augment.style.mode)}}}};
    j["output"] = {{"run_dir", c.output.run_dir}, {"checkpoint_interval", c.output.checkpoint_interval}};
    return j;
}

inline void validate(const ExperimentConfig& c) {
    if (c.dataset.source != "synthetic" && c.dataset.source != "folder")
        throw ConfigError("dataset.source must be synthetic or folder");
    if (c.dataset.source == "folder" && c.dataset.folder.empty())
        throw ConfigError("dataset.folder is required when dataset.source is folder");
    c.dataset.synthetic.validate();
    if (c.protocol.labels_per_class < 1) throw ConfigError("protocol.labels_per_class must be >= 1");
    if (c.protocol.seeds.empty()) throw ConfigError("protocol.seeds must be nonempty");
    if (c.protocol.num_sources && *c.protocol.num_sources < 1) throw ConfigError("protocol.num_sources must be >= 1");
    if (c.method.methods.empty()) throw ConfigError("method.method must name at least one method");
    c.method.train.validate();
    EncoderSpec e = c.method.encoder;
    e.input_size = c.dataset.synthetic.image_size;
    try {
        e.validate();
    } catch (const Error& err) {
        throw ConfigError(std::string("method.encoder: ") + err.what());
    }
    c.augment.validate();
    if (c.output.run_dir.empty()) throw ConfigError("output.run_dir must be nonempty");
    if (c.output.checkpoint_interval < 0) throw ConfigError("output.checkpoint_interval must be >= 0");
}

inline ExperimentConfig config_from_json(const Json& j) {
    using namespace config_detail;
    ExperimentConfig c;
    check_keys(j, "", {"dataset", "protocol", "method", "augment", "output"});
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        check_keys(d, "dataset", {"source", "folder", "seed", "synthetic"});
        read(d, "source", c.dataset.source, "dataset");
        read(d, "folder", c.dataset.folder, "dataset");
        read(d, "seed", c.dataset.synthetic_seed, "dataset");
        if (d.contains("synthetic")) {
            const auto& s = d["synthetic"];
            const std::string w = "dataset.synthetic";
            check_keys(s, w, {"num_domains", "num_classes", "samples_per_class_per_domain", "image_size",
                              "class_color_prob", "max_clutter"});
            auto& sc = c.dataset.synthetic;
            read(s, "num_domains", sc.num_domains, w);
            read(s, "num_classes", sc.num_classes, w);
            read(s, "samples_per_class_per_domain", sc.samples_per_class_per_domain, w);
            read(s, "image_size", sc.image_size, w);
            read(s, "class_color_prob", sc.class_color_prob, w);
            read(s, "max_clutter", sc.max_clutter, w);
        }
    }
    if (j.contains("protocol")) {
        const auto& p = j["protocol"];
        check_keys(p, "protocol", {"labels_per_class", "seeds", "targets", "num_sources"});
        read(p, "labels_per_class", c.protocol.labels_per_class, "protocol");
        read(p, "seeds", c.protocol.seeds, "protocol");
        if (p.contains("targets")) {
            const auto& t = p["targets"];
            if (t.is_string() && t.get<std::string>() == "all") {
                c.protocol.targets.clear();
            } else if (t.is_string()) {
                c.protocol.targets = {t.get<std::string>()};
            } else {
                read(p, "targets", c.protocol.targets, "protocol");
            }
        }
        if (p.contains("num_sources") && !p["num_sources"].is_null()) {
            int k = 0;
            read(p, "num_sources", k, "protocol");
            c.protocol.num_sources = k;
        }
    }
    if (j.contains("method")) {
        const auto& m = j["method"];
        const std::string w = "method";
        check_keys(m, w, {"method", "steps", "lr_backbone", "lr_classifier", "confidence_threshold", "temperature",
                          "ema_decay", "entmin_weight", "consistency_weight", "momentum", "weight_decay",
                          "batch_labeled", "batch_unlabeled", "resample_noise_per_view", "metrics_both_streams",
                          "metrics_only_passing", "encoder"});
        if (m.contains("method")) c.method.methods = methods_from_json(m["method"]);
        auto& t = c.method.train;
        read(m, "steps", t.steps, w);
        read(m, "lr_backbone", t.lr_backbone, w);
        read(m, "lr_classifier", t.lr_classifier, w);
        read(m, "confidence_threshold", t.confidence_threshold, w);
        read(m, "temperature", t.temperature, w);
        read(m, "ema_decay", t.ema_decay, w);
        read(m, "entmin_weight", t.entmin_weight, w);
        read(m, "consistency_weight", t.consistency_weight, w);
        read(m, "momentum", t.momentum, w);
        read(m, "weight_decay", t.weight_decay, w);
        read(m, "batch_labeled", t.batch_labeled, w);
        read(m, "batch_unlabeled", t.batch_unlabeled, w);
        read(m, "resample_noise_per_view", t.resample_noise_per_view, w);
        read(m, "metrics_both_streams", t.metrics_both_streams, w);
        read(m, "metrics_only_passing", t.metrics_only_passing, w);
        if (m.contains("encoder")) {
            const auto& e = m["encoder"];
            check_keys(e, "method.encoder", {"widths", "norm_groups"});
            read(e, "widths", c.method.encoder.widths, "method.encoder");
            read(e, "norm_groups", c.method.encoder.norm_groups, "method.encoder");
        }
    }
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        check_keys(a, "augment", {"weak", "strong", "style"});
        if (a.contains("weak")) {
            check_keys(a["weak"], "augment.weak", {"crop_padding", "flip_prob"});
            read(a["weak"], "crop_padding", c.augment.weak.crop_padding, "augment.weak");
            read(a["weak"], "flip_prob", c.augment.weak.flip_prob, "augment.weak");
        }
        if (a.contains("strong")) {
            check_keys(a["strong"], "augment.strong", {"num_ops", "magnitude", "cutout_fraction"});
            read(a["strong"], "num_ops", c.augment.strong.num_ops, "augment.strong");
            read(a["strong"], "magnitude", c.augment.strong.magnitude, "augment.strong");
            read(a["strong"], "cutout_fraction", c.augment.strong.cutout_fraction, "augment.strong");
        }
        if (a.contains("style")) {
            check_keys(a["style"], "augment.style", {"epsilon", "mode"});
            read(a["style"], "epsilon", c.augment.style.epsilon, "augment.style");
            if (a["style"].contains("mode")) {
                std::string mode;
                read(a["style"], "mode", mode, "augment.style");
                c.augment.style.mode = parse_style_mode(mode);
            }
        }
    }
    if (j.contains("output")) {
        const auto& o = j["output"];
        check_keys(o, "output", {"run_dir", "checkpoint_interval"});
        read(o, "run_dir", c.output.run_dir, "output");
        read(o, "checkpoint_interval", c.output.checkpoint_interval, "output");
    }
    validate(c);
    return c;
}

// Sets a dotted path (e.g. "method.confidence_threshold") in a config
// document. The value text is parsed as JSON when possible and taken as a
// plain string otherwise. Paths must exist in the full default document.
inline void apply_override(Json& doc, const std::string& path, const std::string& value) {
    const Json reference = to_json(ExperimentConfig{});
    Json* node = &doc;
    const Json* ref = &reference;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override path");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!ref->is_object() || !ref->contains(parts[i])) throw ConfigError("unknown key " + path);
        ref = &(*ref)[parts[i]];
        if (!node->is_object()) *node = Json::object();
        node = &(*node)[parts[i]];
    }
    Json parsed;
    try {
        parsed = Json::parse(value);
    } catch (const Json::exception&) {
        parsed = value;
    }
    *node = parsed;
}

// "key=value" pairs.
inline void apply_overrides(Json& doc, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like path=value: " + a);
        apply_override(doc, a.substr(0, eq), a.substr(eq + 1));
    }
}

inline Json read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// Hash over every field that can change a cell's training. The method list,
// seed list, target list and output section select cells and are left out.
// num_sources is resolved against the dataset's domain count by the caller.
inline std::string config_hash(const ExperimentConfig& c, int resolved_num_sources) {
    Json j = to_json(c);
    j.erase("output");
    j["protocol"].erase("seeds");
    j["protocol"].erase("targets");
    j["protocol"]["num_sources"] = resolved_num_sources;
    j["method"].erase("method");
    if (c.dataset.source == "folder") j["dataset"].erase("synthetic");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

} // namespace ssdg
