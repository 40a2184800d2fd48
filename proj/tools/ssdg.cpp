// Command-line front end: generate-data, run, ablate, report, inspect-split.
//
// Any config field can be overridden with a dotted path, either as
//   --set method.confidence_threshold=0.9
// or directly as
//   --method.confidence_threshold=0.9

#include "ssdg/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace ssdg;

// Turns leftover "--a.b=v" / "--a.b v" arguments into "a.b=v" overrides.
std::vector<std::string> dotted_extras(const std::vector<std::string>& extras) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& a = extras[i];
        if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos)
            throw ConfigError("unrecognized argument " + a);
        std::string body = a.substr(2);
        if (body.find('=') == std::string::npos) {
            if (i + 1 >= extras.size()) throw ConfigError("missing value for " + a);
            body += "=" + extras[++i];
        }
        out.push_back(body);
    }
    return out;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Json doc = path.empty() ? to_json(ExperimentConfig{}) : read_config_file(path);
    apply_overrides(doc, overrides);
    return config_from_json(doc);
}

void print_progress(const CellKey& key, const MetricRecord& r, long total) {
    if (r.step % 100 != 0 && r.step + 1 != total) return;
    std::fprintf(stderr, "[%s] step %ld/%ld loss=%.4f pla=%s oc=%.3f\n", key.id().c_str(), r.step + 1, total,
                 r.loss_total,
                 r.pseudo_label_accuracy ? std::to_string(*r.pseudo_label_accuracy).substr(0, 5).c_str() : "n/a",
                 r.overconfidence_rate);
}

int report_summary(const ExperimentSummary& s) {
    std::printf("run directory: %s\n", s.run_dir.string().c_str());
    std::printf("training steps this invocation: %ld\n", s.steps_trained);
    for (const auto& c : s.cells) {
        std::printf("  %-40s %-8s", c.key.id().c_str(), c.status.c_str());
        if (c.accuracy) std::printf(" %.4f", *c.accuracy);
        if (!c.error.empty()) std::printf(" %s", c.error.c_str());
        std::printf("\n");
    }
    const ResultsTable t = aggregate(s.results, true);
    std::printf("\n%s", t.to_text().c_str());
    return s.failures() == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised domain generalization laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    auto add_config_flags = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "Experiment config (JSON)");
        sub->add_option("--set", sets, "Override a field: dotted.path=value");
        sub->allow_extras();
    };

    auto* gen = app.add_subcommand("generate-data", "Write the synthetic dataset as a folder tree");
    std::string out_dir;
    add_config_flags(gen);
    gen->add_option("-o,--out", out_dir, "Output root")->required();

    auto* run = app.add_subcommand("run", "Train and evaluate every (method, target, seed) cell");
    add_config_flags(run);

    auto* ablate = app.add_subcommand("ablate", "Run an ablation preset");
    std::string preset;
    ablate->add_option("preset", preset, "components | augmentations | num_sources")->required();
    add_config_flags(ablate);

    auto* report = app.add_subcommand("report", "Emit tables and curve files for a run directory");
    std::string report_dir;
    int window = 20;
    report->add_option("run_dir", report_dir, "Run directory (a config-hash directory or the run root)")->required();
    report->add_option("--window", window, "Moving-average window for curves");

    auto* inspect = app.add_subcommand("inspect-split", "Print the split record for one target and seed");
    std::string target;
    std::uint64_t seed = 0;
    std::string split_out;
    add_config_flags(inspect);
    inspect->add_option("--target", target, "Target domain name")->required();
    inspect->add_option("--seed", seed, "Split seed");
    inspect->add_option("-o,--out", split_out, "Write the record to a file instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        auto overrides = [&](CLI::App* sub) {
            std::vector<std::string> all = sets;
            const auto extra = dotted_extras(sub->remaining());
            all.insert(all.end(), extra.begin(), extra.end());
            return all;
        };
        if (gen->parsed()) {
            const ExperimentConfig c = load_config(config_path, overrides(gen));
            const MultiDomainDataset ds = load_dataset(c);
            save_folder_dataset(ds, out_dir);
            std::printf("wrote %zu images in %d domains to %s\n", ds.total_size(), ds.num_domains(), out_dir.c_str());
            return 0;
        }
        if (run->parsed()) {
            const ExperimentConfig c = load_config(config_path, overrides(run));
            CellRunOptions opts;
            opts.on_step = [&](const CellKey& k, const MetricRecord& r) { print_progress(k, r, c.method.train.steps); };
            return report_summary(run_experiment(c, opts));
        }
        if (ablate->parsed()) {
            const ExperimentConfig c = load_config(config_path, overrides(ablate));
            CellRunOptions opts;
            opts.on_step = [&](const CellKey& k, const MetricRecord& r) { print_progress(k, r, c.method.train.steps); };
            const AblationResult res = run_ablation_matrix(c, preset, opts);
            int status = 0;
            for (const auto& s : res.runs) status = std::max(status, s.failures() == 0 ? 0 : 2);
            std::printf("%s", res.table().to_text().c_str());
            return status;
        }
        if (report->parsed()) {
            const ReportOutcome r = emit_report(report_dir, window);
            if (!r.table.methods.empty()) std::printf("%s", r.table.to_text().c_str());
            for (const auto& p : r.written) std::printf("wrote %s\n", p.string().c_str());
            if (!r.complete) {
                std::fprintf(stderr, "incomplete: %zu missing cell(s)\n", r.missing_cells.size());
                for (const auto& m : r.missing_cells) std::fprintf(stderr, "  missing %s\n", m.c_str());
                return 3;
            }
            return 0;
        }
        if (inspect->parsed()) {
            const ExperimentConfig c = load_config(config_path, overrides(inspect));
            const MultiDomainDataset ds = load_dataset(c);
            const int t = ds.domain_index(target);
            if (t < 0) throw ConfigError("unknown target domain " + target);
            const int k = resolve_num_sources(c, ds);
            const auto combos = source_combinations(ds.num_domains(), t, k);
            Json out = Json::array();
            for (const auto& combo : combos)
                out.push_back(split_to_json(build_split(ds, t, c.protocol.labels_per_class, seed, combo), ds));
            const std::string text = (combos.size() == 1 ? out[0] : out).dump(2) + "\n";
            if (split_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream(split_out) << text;
            }
            return 0;
        }
    } catch (const ssdg::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
