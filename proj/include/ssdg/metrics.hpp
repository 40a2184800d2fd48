#pragma once

// Per-step pseudo-labelling diagnostics, the per-step metric log, curve export
// and result aggregation into method x target tables.

#include "errors.hpp"
#include "losses.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace ssdg {

// A pseudo-label paired with the ground truth that produced it. Built only on
// the diagnostics path; hidden_label < 0 means the truth is unavailable.
struct PseudoLabelDiagnostic {
    PseudoLabel label;
    int hidden_label = -1;
    bool unlabeled_stream = true;
};

// Fraction of pseudo-labels matching the hidden label. With only_passing the
// fraction is over threshold-passing examples; an empty set yields nullopt.
inline std::optional<double> pseudo_label_accuracy(std::span<const PseudoLabelDiagnostic> batch,
                                                   bool only_passing = false) {
    if (batch.empty()) throw MetricsError("pseudo_label_accuracy: empty batch");
    std::size_t total = 0;
    std::size_t correct = 0;
    for (const auto& d : batch) {
        if (d.hidden_label < 0) throw MetricsError("pseudo_label_accuracy: hidden label missing");
        if (only_passing && !d.label.passes) continue;
        ++total;
        if (d.label.class_index == d.hidden_label) ++correct;
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
}

inline double overconfidence_rate(std::span<const PseudoLabelDiagnostic> batch, double threshold) {
    if (batch.empty()) throw MetricsError("overconfidence_rate: empty batch");
    std::size_t passing = 0;
    for (const auto& d : batch)
        if (d.label.confidence >= threshold) ++passing;
    return static_cast<double>(passing) / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Metric log
// ---------------------------------------------------------------------------

struct MetricRecord {
    long step = 0;
    std::optional<double> pseudo_label_accuracy;
    double overconfidence_rate = 0.0;
    double loss_labeled = 0.0;
    double loss_strong = 0.0;
    double loss_style = 0.0;
    double loss_total = 0.0;
    double learning_rate = 0.0;
    double mean_sigma = 0.0;  // mean softplus(sigma_raw) over the classifier

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["step"] = step;
        j["pseudo_label_accuracy"] =
            pseudo_label_accuracy ? nlohmann::json(*pseudo_label_accuracy) : nlohmann::json(nullptr);
        j["overconfidence_rate"] = overconfidence_rate;
        j["loss_labeled"] = loss_labeled;
        j["loss_strong"] = loss_strong;
        j["loss_style"] = loss_style;
        j["loss_total"] = loss_total;
        j["lr"] = learning_rate;
        j["mean_sigma"] = mean_sigma;
        return j;
    }

    static MetricRecord from_json(const nlohmann::json& j) {
        MetricRecord r;
        r.step = j.at("step").get<long>();
        if (!j.at("pseudo_label_accuracy").is_null()) r.pseudo_label_accuracy = j.at("pseudo_label_accuracy").get<double>();
        r.overconfidence_rate = j.at("overconfidence_rate").get<double>();
        r.loss_labeled = j.at("loss_labeled").get<double>();
        r.loss_strong = j.at("loss_strong").get<double>();
        r.loss_style = j.at("loss_style").get<double>();
        r.loss_total = j.at("loss_total").get<double>();
        r.learning_rate = j.at("lr").get<double>();
        r.mean_sigma = j.at("mean_sigma").get<double>();
        auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!in_unit(r.overconfidence_rate) || (r.pseudo_label_accuracy && !in_unit(*r.pseudo_label_accuracy)))
            throw MetricsError("rate outside [0, 1]");
        return r;
    }
};

// Newline-delimited JSON, one record per line.
inline std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MetricsError("cannot open metric log " + path.string());
    std::vector<MetricRecord> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(MetricRecord::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw MetricsError(path.string() + ":" + std::to_string(line_no) + ": corrupt metric record (" + e.what() +
                               ")");
        }
    }
    return out;
}

inline void write_metric_log(const std::filesystem::path& path, std::span<const MetricRecord> records) {
    std::ofstream out(path);
    if (!out) throw MetricsError("cannot write metric log " + path.string());
    for (const auto& r : records) out << r.to_json().dump() << '\n';
}

// Trailing moving average; window 1 is the identity.
inline std::vector<double> moving_average(std::span<const double> values, int window) {
    if (window < 1) throw MetricsError("smoothing window must be >= 1");
    std::vector<double> out(values.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        sum += values[i];
        if (i >= static_cast<std::size_t>(window)) sum -= values[i - static_cast<std::size_t>(window)];
        const auto n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
        out[i] = window == 1 ? values[i] : sum / static_cast<double>(n);
    }
    return out;
}

struct Series {
    std::string metric;
    int smoothing_window = 1;
    std::vector<long> steps;
    std::vector<double> raw;
    std::vector<double> smoothed;
};

inline const std::vector<std::string>& curve_metric_names() {
    static const std::vector<std::string> names{"pseudo_label_accuracy", "overconfidence_rate", "loss_labeled",
                                                "loss_strong",           "loss_style",          "loss_total",
                                                "lr",                    "mean_sigma"};
    return names;
}

// One (step, value) series per metric. Steps with an absent value (restricted
// pseudo-label accuracy with no passing examples) are skipped.
inline std::vector<Series> curve_export(std::span<const MetricRecord> log, int smoothing_window = 20) {
    std::vector<Series> out;
    for (const auto& name : curve_metric_names()) {
        Series s;
        s.metric = name;
        s.smoothing_window = smoothing_window;
        for (const auto& r : log) {
            std::optional<double> v;
            if (name == "pseudo_label_accuracy") v = r.pseudo_label_accuracy;
            else if (name == "overconfidence_rate") v = r.overconfidence_rate;
            else if (name == "loss_labeled") v = r.loss_labeled;
            else if (name == "loss_strong") v = r.loss_strong;
            else if (name == "loss_style") v = r.loss_style;
            else if (name == "loss_total") v = r.loss_total;
            else if (name == "lr") v = r.learning_rate;
            else v = r.mean_sigma;
            if (!v) continue;
            s.steps.push_back(r.step);
            s.raw.push_back(*v);
        }
        s.smoothed = moving_average(s.raw, smoothing_window);
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_series_files(std::span<const Series> series, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& s : series) {
        std::ofstream out(dir / (s.metric + ".csv"));
        if (!out) throw MetricsError("cannot write curve file for " + s.metric);
        out << "# metric=" << s.metric << " smoothing_window=" << s.smoothing_window << '\n';
        out << "step,value,smoothed\n";
        out << std::setprecision(10);
        for (std::size_t i = 0; i < s.steps.size(); ++i)
            out << s.steps[i] << ',' << s.raw[i] << ',' << s.smoothed[i] << '\n';
    }
}

// ---------------------------------------------------------------------------
// Results aggregation
// ---------------------------------------------------------------------------

struct RunResult {
    std::string method;
    std::string target;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

struct ResultsTable {
    std::vector<RunResult> rows;
    std::vector<std::string> methods;  // sorted
    std::vector<std::string> targets;  // sorted
    std::vector<std::uint64_t> seeds;  // sorted
    // per_target[method][target] = mean over seeds; absent when incomplete
    std::map<std::string, std::map<std::string, std::optional<double>>> per_target;
    std::map<std::string, std::optional<double>> average;
    std::vector<std::string> missing_cells;

    std::string to_csv() const {
        std::ostringstream os;
        os << "method,target,seed,accuracy\n" << std::setprecision(10);
        for (const auto& r : rows) os << r.method << ',' << r.target << ',' << r.seed << ',' << r.accuracy << '\n';
        return os.str();
    }

    // Methods as rows, targets as columns plus Avg, accuracies in percent.
    std::string to_text() const {
        std::size_t name_w = 6;
        for (const auto& m : methods) name_w = std::max(name_w, m.size());
        std::size_t col_w = 8;
        for (const auto& t : targets) col_w = std::max(col_w, t.size() + 1);
        std::ostringstream os;
        os << std::left << std::setw(static_cast<int>(name_w + 2)) << "Model";
        for (const auto& t : targets) os << std::right << std::setw(static_cast<int>(col_w)) << t;
        os << std::right << std::setw(static_cast<int>(col_w)) << "Avg" << '\n';
        os << std::string(name_w + 2 + col_w * (targets.size() + 1), '-') << '\n';
        auto cell = [&](const std::optional<double>& v) {
            std::ostringstream c;
            if (v) c << std::fixed << std::setprecision(2) << 100.0 * *v;
            else c << "n/a";
            return c.str();
        };
        for (const auto& m : methods) {
            os << std::left << std::setw(static_cast<int>(name_w + 2)) << m;
            for (const auto& t : targets)
                os << std::right << std::setw(static_cast<int>(col_w)) << cell(per_target.at(m).at(t));
            os << std::right << std::setw(static_cast<int>(col_w)) << cell(average.at(m)) << '\n';
        }
        return os.str();
    }
};

// Per-(method, target) mean over seeds and the cross-target average. The
// grid is every (target, seed) pair seen in `runs`; each method must fill all
// of it unless allow_missing, in which case incomplete aggregates are absent.
inline ResultsTable aggregate(std::span<const RunResult> runs, bool allow_missing = false) {
    ResultsTable t;
    t.rows.assign(runs.begin(), runs.end());
    std::set<std::uint64_t> seeds;
    std::map<std::string, std::map<std::string, std::map<std::uint64_t, double>>> cells;
    for (const auto& r : runs) {
        if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) t.methods.push_back(r.method);
        if (std::find(t.targets.begin(), t.targets.end(), r.target) == t.targets.end()) t.targets.push_back(r.target);
        seeds.insert(r.seed);
        auto [it, inserted] = cells[r.method][r.target].emplace(r.seed, r.accuracy);
        if (!inserted)
            throw AggregationError("duplicate row for method=" + r.method + " target=" + r.target +
                                   " seed=" + std::to_string(r.seed));
    }
    std::sort(t.methods.begin(), t.methods.end());
    std::sort(t.targets.begin(), t.targets.end());
    t.seeds.assign(seeds.begin(), seeds.end());
    for (const auto& m : t.methods) {
        bool complete = true;
        double avg_sum = 0.0;
        for (const auto& tg : t.targets) {
            bool target_complete = true;
            double sum = 0.0;
            for (auto s : t.seeds) {
                const auto& by_seed = cells[m][tg];
                auto it = by_seed.find(s);
                if (it == by_seed.end()) {
                    const std::string name = "method=" + m + " target=" + tg + " seed=" + std::to_string(s);
                    if (!allow_missing) throw AggregationError("missing grid cell " + name);
                    t.missing_cells.push_back(name);
                    target_complete = false;
                    continue;
                }
                sum += it->second;
            }
            if (target_complete) {
                const double mean = sum / static_cast<double>(t.seeds.size());
                t.per_target[m][tg] = mean;
                avg_sum += mean;
            } else {
                t.per_target[m][tg] = std::nullopt;
                complete = false;
            }
        }
        t.average[m] = complete && !t.targets.empty() ? std::optional<double>(avg_sum / t.targets.size())
                                                      : std::nullopt;
    }
    return t;
}

} // namespace ssdg
