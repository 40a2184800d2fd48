#pragma once

// Benchmark orchestration: the (method, target, seed) grid, per-cell
// persistence, the config-hash manifest, ablation presets and reports.
//
// Layout under the run root:
//   <hash>/manifest.json
//   <hash>/<method>/<target>/<seed>/{metrics.log, checkpoint, result.row}
// With fewer sources than the dataset allows, each cell trains once per
// source combination (combo-<i>/{metrics.log, checkpoint}) and result.row
// holds the mean accuracy.

#include "checkpoint.hpp"
#include "config.hpp"
#include "folder_dataset.hpp"
#include "metrics.hpp"
#include "split.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"

#include <nlohmann/json.hpp>

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ssdg {

namespace fs = std::filesystem;

inline constexpr const char* run_root_env = "SSDG_RUN_ROOT";

// The run root: $SSDG_RUN_ROOT when set, otherwise output.run_dir.
inline fs::path run_root(const ExperimentConfig& c) {
    if (const char* env = std::getenv(run_root_env); env && *env) return fs::path(env);
    return fs::path(c.output.run_dir);
}

inline MultiDomainDataset load_dataset(const ExperimentConfig& c) {
    if (c.dataset.source == "folder") return load_folder_dataset(c.dataset.folder, c.dataset.synthetic.image_size);
    return generate_synthetic(c.dataset.synthetic, c.dataset.synthetic_seed);
}

inline std::vector<int> resolve_targets(const ExperimentConfig& c, const MultiDomainDataset& ds) {
    std::vector<int> out;
    if (c.protocol.targets.empty()) {
        for (int d = 0; d < ds.num_domains(); ++d) out.push_back(d);
        return out;
    }
    for (const auto& name : c.protocol.targets) {
        const int d = ds.domain_index(name);
        if (d < 0) throw ConfigError("protocol.targets names unknown domain " + name);
        out.push_back(d);
    }
    return out;
}

inline int resolve_num_sources(const ExperimentConfig& c, const MultiDomainDataset& ds) {
    const int available = ds.num_domains() - 1;
    if (available < 1) throw ConfigError("dataset needs at least 2 domains for leave-one-domain-out");
    const int k = c.protocol.num_sources.value_or(available);
    if (k > available)
        throw ConfigError("protocol.num_sources=" + std::to_string(k) + " leaves no target domain in a " +
                          std::to_string(ds.num_domains()) + "-domain dataset");
    return k;
}

// Every k-subset of the non-target domains, in lexicographic order.
inline std::vector<std::vector<int>> source_combinations(int num_domains, int target, int k) {
    std::vector<int> pool;
    for (int d = 0; d < num_domains; ++d)
        if (d != target) pool.push_back(d);
    std::vector<std::vector<int>> out;
    std::vector<int> current;
    std::function<void(std::size_t)> rec = [&](std::size_t start) {
        if (static_cast<int>(current.size()) == k) {
            out.push_back(current);
            return;
        }
        for (std::size_t i = start; i < pool.size(); ++i) {
            current.push_back(pool[i]);
            rec(i + 1);
            current.pop_back();
        }
    };
    rec(0);
    return out;
}

struct CellKey {
    std::string method;
    std::string target;
    std::uint64_t seed = 0;

    std::string id() const { return method + "/" + target + "/" + std::to_string(seed); }
};

struct CellOutcome {
    CellKey key;
    std::string status;  // done | skipped | failed
    std::optional<double> accuracy;
    std::string error;
    long steps_trained = 0;
};

struct ExperimentSummary {
    fs::path run_dir;
    std::string config_hash;
    int num_sources = 0;
    std::vector<CellOutcome> cells;
    long steps_trained = 0;
    std::vector<RunResult> results;  // completed cells

    std::size_t failures() const {
        std::size_t n = 0;
        for (const auto& c : cells)
            if (c.status == "failed") ++n;
        return n;
    }
};

namespace experiment_detail {

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ReportError("cannot write " + tmp.string());
        out << text;
        if (!out) throw ReportError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Exclusive advisory lock held for the lifetime of the object.
class FileLock {
public:
    explicit FileLock(const fs::path& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ >= 0) ::flock(fd_, LOCK_EX);
    }
    ~FileLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

inline Json read_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) return Json::object();
    try {
        return Json::parse(read_text(p));
    } catch (const Json::exception& e) {
        throw ReportError("corrupt manifest " + p.string() + ": " + e.what());
    }
}

// Read-modify-write of the manifest under a lock with atomic replacement.
inline void update_manifest(const fs::path& dir, const std::function<void(Json&)>& edit) {
    FileLock lock(dir / "manifest.lock");
    Json m = read_manifest(dir);
    edit(m);
    write_text_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline std::string format_accuracy(double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", a);
    return buf;
}

inline std::string result_row_text(const CellKey& key, double accuracy) {
    return "method,target,seed,accuracy\n" + key.method + "," + key.target + "," + std::to_string(key.seed) + "," +
           format_accuracy(accuracy) + "\n";
}

inline std::optional<RunResult> read_result_row(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row)) return std::nullopt;
    std::stringstream ss(row);
    RunResult r;
    std::string seed, acc;
    if (!std::getline(ss, r.method, ',') || !std::getline(ss, r.target, ',') || !std::getline(ss, seed, ',') ||
        !std::getline(ss, acc))
        return std::nullopt;
    try {
        r.seed = std::stoull(seed);
        r.accuracy = std::stod(acc);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return r;
}

inline std::string git_state() {
    std::error_code ec;
    for (fs::path dir = fs::current_path(ec); !dir.empty(); dir = dir.parent_path()) {
        const fs::path head = dir / ".git" / "HEAD";
        if (fs::exists(head, ec)) {
            std::string line = read_text(head);
            while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
            if (line.rfind("ref: ", 0) == 0) {
                const std::string ref = line.substr(5);
                std::string sha = read_text(dir / ".git" / ref);
                while (!sha.empty() && (sha.back() == '\n' || sha.back() == '\r')) sha.pop_back();
                return sha.empty() ? ref : ref + "@" + sha;
            }
            return line;
        }
        if (dir == dir.root_path()) break;
    }
    return "unknown";
}

} // namespace experiment_detail

struct CellRunOptions {
    // Invoked for every metric record (e.g. progress printing).
    std::function<void(const CellKey&, const MetricRecord&)> on_step;
};

// Trains and evaluates one (method, target, seed) cell and writes its files.
// Returns the target accuracy.
inline double run_cell(const ExperimentConfig& c, const MultiDomainDataset& ds, const CellKey& key, Method method,
                       int target, int num_sources, const fs::path& cell_dir, const std::string& hash,
                       long& steps_trained, const CellRunOptions& options = {}) {
    fs::create_directories(cell_dir);
    const auto combos = source_combinations(ds.num_domains(), target, num_sources);
    const bool single = combos.size() == 1;
    TrainConfig tc = c.method.train;
    tc.method = method;
    tc.seed = key.seed;
    EncoderSpec es = c.method.encoder;
    es.input_size = c.dataset.synthetic.image_size;
    const auto& target_examples = ds.examples[static_cast<std::size_t>(target)];

    double sum = 0.0;
    for (std::size_t i = 0; i < combos.size(); ++i) {
        const fs::path dir = single ? cell_dir : cell_dir / ("combo-" + std::to_string(i));
        fs::create_directories(dir);
        const SSDGSplit split = build_split(ds, target, c.protocol.labels_per_class, key.seed, combos[i]);
        if (!single) {
            Json sj = split_to_json(split, ds);
            experiment_detail::write_text_atomic(dir / "split.json", sj.dump(2) + "\n");
        }
        const fs::path log_tmp = dir / "metrics.log.tmp";
        std::ofstream log(log_tmp, std::ios::trunc);
        if (!log) throw ReportError("cannot write " + log_tmp.string());
        TrainHooks hooks;
        hooks.on_step = [&](const MetricRecord& r) {
            log << r.to_json().dump() << '\n';
            if (options.on_step) options.on_step(key, r);
        };
        hooks.checkpoint_interval = c.output.checkpoint_interval;
        hooks.on_checkpoint = [&](const Model<Real>& m, long step) {
            save_checkpoint(dir / "checkpoint", m, step, hash, key.seed);
        };
        TrainResult res = run_training(split, es, tc, c.augment, hooks);
        log.close();
        fs::rename(log_tmp, dir / "metrics.log");
        steps_trained += tc.steps;
        save_checkpoint(dir / "checkpoint", res.model, tc.steps, hash, key.seed);
        sum += evaluate(res.model, target_examples);
    }
    const double accuracy = sum / static_cast<double>(combos.size());
    experiment_detail::write_text_atomic(cell_dir / "result.row", experiment_detail::result_row_text(key, accuracy));
    return accuracy;
}

// Runs every (method, target, seed) cell. Completed cells recorded in the
// manifest with an intact result.row are skipped. A failing cell is recorded
// and the remaining cells still run.
inline ExperimentSummary run_experiment(const ExperimentConfig& c, const CellRunOptions& options = {}) {
    validate(c);
    const MultiDomainDataset ds = load_dataset(c);
    const auto targets = resolve_targets(c, ds);
    const int k = resolve_num_sources(c, ds);
    if (c.dataset.synthetic.image_size < 4) throw ConfigError("dataset.synthetic.image_size must be >= 4");

    ExperimentSummary summary;
    summary.config_hash = config_hash(c, k);
    summary.num_sources = k;
    summary.run_dir = run_root(c) / summary.config_hash;
    fs::create_directories(summary.run_dir);

    Json cfg_json = to_json(c);
    experiment_detail::update_manifest(summary.run_dir, [&](Json& m) {
        m["config_hash"] = summary.config_hash;
        m["num_sources"] = k;
        m["domains"] = ds.domains;
        m["git"] = experiment_detail::git_state();
        if (!m.contains("cells")) m["cells"] = Json::object();
        // Union of every method/target/seed requested against this hash.
        auto merge = [&](const char* field, const Json& values) {
            Json& arr = m[field];
            if (!arr.is_array()) arr = Json::array();
            for (const auto& v : values)
                if (std::find(arr.begin(), arr.end(), v) == arr.end()) arr.push_back(v);
        };
        Json methods = Json::array(), tnames = Json::array();
        for (Method mm : c.method.methods) methods.push_back(std::string(method_name(mm)));
        for (int t : targets) tnames.push_back(ds.domains[static_cast<std::size_t>(t)]);
        merge("methods", methods);
        merge("targets", tnames);
        merge("seeds", Json(c.protocol.seeds));
        m["config"] = cfg_json;
    });

    for (Method method : c.method.methods)
        for (int target : targets)
            for (std::uint64_t seed : c.protocol.seeds) {
                CellKey key{std::string(method_name(method)), ds.domains[static_cast<std::size_t>(target)], seed};
                const fs::path cell_dir = summary.run_dir / key.method / key.target / std::to_string(seed);
                CellOutcome outcome;
                outcome.key = key;
                const Json manifest = experiment_detail::read_manifest(summary.run_dir);
                const bool recorded = manifest.contains("cells") && manifest["cells"].contains(key.id()) &&
                                      manifest["cells"][key.id()].value("status", "") == "done";
                if (recorded) {
                    if (auto row = experiment_detail::read_result_row(cell_dir / "result.row")) {
                        outcome.status = "skipped";
                        outcome.accuracy = row->accuracy;
                        summary.results.push_back(*row);
                        summary.cells.push_back(outcome);
                        continue;
                    }
                }
                long steps = 0;
                try {
                    const double acc = run_cell(c, ds, key, method, target, k, cell_dir, summary.config_hash, steps,
                                                options);
                    outcome.status = "done";
                    outcome.accuracy = acc;
                    summary.results.push_back({key.method, key.target, key.seed, acc});
                } catch (const std::exception& e) {
                    outcome.status = "failed";
                    outcome.error = e.what();
                    std::error_code ec;
                    fs::create_directories(cell_dir, ec);
                    std::ofstream(cell_dir / "error.txt") << e.what() << '\n';
                }
                outcome.steps_trained = steps;
                summary.steps_trained += steps;
                experiment_detail::update_manifest(summary.run_dir, [&](Json& m) {
                    Json entry = {{"status", outcome.status}};
                    if (outcome.accuracy) entry["accuracy"] = *outcome.accuracy;
                    if (!outcome.error.empty()) entry["error"] = outcome.error;
                    m["cells"][key.id()] = entry;
                });
                summary.cells.push_back(outcome);
            }
    return summary;
}

// Named ablation presets.
inline std::vector<Method> preset_methods(const std::string& preset) {
    if (preset == "components") return {Method::fixmatch, Method::fixmatch_snn, Method::stylematch};
    if (preset == "augmentations")
        return {Method::stylematch_strong_only, Method::stylematch_style_only, Method::stylematch};
    if (preset == "num_sources") return {Method::fixmatch, Method::stylematch};
    throw ConfigError("unknown ablation preset " + preset + " (expected components, augmentations or num_sources)");
}

struct AblationResult {
    std::string preset;
    // One summary per scheduled experiment; num_sources yields one per K.
    std::vector<ExperimentSummary> runs;

    // Rows labeled method or method@K=k for the num_sources preset.
    ResultsTable table() const {
        std::vector<RunResult> rows;
        for (const auto& r : runs)
            for (auto row : r.results) {
                if (preset == "num_sources") row.method += "@K=" + std::to_string(r.num_sources);
                rows.push_back(row);
            }
        return aggregate(rows, true);
    }
};

inline AblationResult run_ablation_matrix(const ExperimentConfig& base, const std::string& preset,
                                          const CellRunOptions& options = {}) {
    AblationResult out;
    out.preset = preset;
    ExperimentConfig c = base;
    c.method.methods = preset_methods(preset);
    if (preset != "num_sources") {
        out.runs.push_back(run_experiment(c, options));
        return out;
    }
    const int num_domains =
        base.dataset.source == "folder" ? load_dataset(base).num_domains() : base.dataset.synthetic.num_domains;
    if (num_domains < 4)
        throw ConfigError("num_sources preset needs K up to 3, which leaves no target in a " +
                          std::to_string(num_domains) + "-domain dataset");
    for (int k = 1; k <= 3; ++k) {
        c.protocol.num_sources = k;
        out.runs.push_back(run_experiment(c, options));
    }
    return out;
}

struct ReportOutcome {
    bool complete = true;
    std::vector<std::string> missing_cells;
    std::vector<fs::path> written;
    ResultsTable table;
};

// Writes <run_dir>/report/{results.csv, results.txt, manifest.json,
// curves/<method>/<target>/<seed>/...}. A run directory may also be a root
// that holds several config-hash directories, each reported in turn.
inline ReportOutcome emit_report(const fs::path& run_dir, int smoothing_window = 20) {
    using namespace experiment_detail;
    if (!fs::is_directory(run_dir)) throw ReportError("run directory does not exist: " + run_dir.string());
    if (fs::is_empty(run_dir)) throw ReportError("run directory is empty: " + run_dir.string());
    if (!fs::exists(run_dir / "manifest.json")) {
        ReportOutcome total;
        bool any = false;
        std::vector<fs::path> subdirs;
        for (const auto& e : fs::directory_iterator(run_dir))
            if (e.is_directory() && fs::exists(e.path() / "manifest.json")) subdirs.push_back(e.path());
        std::sort(subdirs.begin(), subdirs.end());
        for (const auto& d : subdirs) {
            any = true;
            auto r = emit_report(d, smoothing_window);
            total.complete = total.complete && r.complete;
            total.missing_cells.insert(total.missing_cells.end(), r.missing_cells.begin(), r.missing_cells.end());
            total.written.insert(total.written.end(), r.written.begin(), r.written.end());
        }
        if (!any) throw ReportError("no manifest found under " + run_dir.string());
        return total;
    }

    const Json manifest = read_manifest(run_dir);
    ReportOutcome out;
    std::vector<RunResult> rows;
    const fs::path report_dir = run_dir / "report";
    fs::create_directories(report_dir);
    const auto methods = manifest.value("methods", Json::array());
    const auto targets = manifest.value("targets", Json::array());
    const auto seeds = manifest.value("seeds", Json::array());
    for (const auto& m : methods)
        for (const auto& t : targets)
            for (const auto& s : seeds) {
                const std::string method = m.get<std::string>(), target = t.get<std::string>();
                const auto seed = s.get<std::uint64_t>();
                const fs::path cell = run_dir / method / target / std::to_string(seed);
                const auto row = read_result_row(cell / "result.row");
                if (!row) {
                    out.complete = false;
                    out.missing_cells.push_back("method=" + method + " target=" + target +
                                                " seed=" + std::to_string(seed));
                    continue;
                }
                rows.push_back(*row);
                std::vector<fs::path> logs;
                if (fs::exists(cell / "metrics.log")) logs.push_back(cell / "metrics.log");
                for (int i = 0; fs::exists(cell / ("combo-" + std::to_string(i))); ++i)
                    logs.push_back(cell / ("combo-" + std::to_string(i)) / "metrics.log");
                for (const auto& lp : logs) {
                    std::vector<MetricRecord> log;
                    try {
                        log = read_metric_log(lp);
                    } catch (const MetricsError& e) {
                        throw ReportError(e.what());
                    }
                    fs::path dest = report_dir / "curves" / method / target / std::to_string(seed);
                    if (lp.parent_path() != cell) dest /= lp.parent_path().filename();
                    const auto series = curve_export(log, smoothing_window);
                    write_series_files(series, dest);
                    out.written.push_back(dest);
                }
            }
    // Register the manifest's full grid so absent cells show as n/a.
    ResultsTable table = aggregate(rows, true);
    for (const auto& m : methods) {
        const std::string method = m.get<std::string>();
        if (std::find(table.methods.begin(), table.methods.end(), method) == table.methods.end()) {
            table.methods.push_back(method);
            table.average[method] = std::nullopt;
        }
        for (const auto& t : targets) {
            const std::string target = t.get<std::string>();
            if (std::find(table.targets.begin(), table.targets.end(), target) == table.targets.end())
                table.targets.push_back(target);
        }
    }
    for (const auto& method : table.methods) {
        for (const auto& target : table.targets) {
            if (!table.per_target[method].count(target)) table.per_target[method][target] = std::nullopt;
        }
    }
    for (const auto& mc : out.missing_cells) {
        if (std::find(table.missing_cells.begin(), table.missing_cells.end(), mc) == table.missing_cells.end())
            table.missing_cells.push_back(mc);
        // A method with a missing cell has no complete average.
        const auto pos = mc.find(" target=");
        const std::string method = mc.substr(7, pos - 7);
        const std::string target = mc.substr(pos + 8, mc.find(" seed=") - pos - 8);
        table.per_target[method][target] = std::nullopt;
        table.average[method] = std::nullopt;
    }

    write_text_atomic(report_dir / "results.csv", table.to_csv());
    std::string text = table.to_text();
    if (!out.complete) {
        text += "\nincomplete: " + std::to_string(out.missing_cells.size()) + " missing cell(s)\n";
        for (const auto& mc : out.missing_cells) text += "  missing " + mc + "\n";
    }
    write_text_atomic(report_dir / "results.txt", text);
    Json rep = {{"config_hash", manifest.value("config_hash", "")},
                {"config", manifest.value("config", Json::object())},
                {"methods", methods},
                {"targets", targets},
                {"seeds", seeds},
                {"git", git_state()},
                {"complete", out.complete},
                {"missing_cells", out.missing_cells},
                {"smoothing_window", smoothing_window}};
    write_text_atomic(report_dir / "manifest.json", rep.dump(2) + "\n");
    out.written.push_back(report_dir / "results.csv");
    out.written.push_back(report_dir / "results.txt");
    out.written.push_back(report_dir / "manifest.json");
    out.table = std::move(table);
    return out;
}

} // namespace ssdg
