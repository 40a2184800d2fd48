// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance --criteria 1,2,3 --run-root <dir>

#include "support.hpp"

#include "ssdg/experiment.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <set>

using namespace ssdg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

Mat<double> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat<double> m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

Mat<double> random_probs(int n, int c, Rng& rng) {
    Mat<double> p(n, c);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += (p(i, j) = std::exp(rng.normal(0.0, 3.0)));
        p.row(i) /= s;
    }
    return p;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// 1. Scalar-loop oracles.

double oracle_nll(const Mat<double>& p, const std::vector<int>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s -= std::log(p(static_cast<Eigen::Index>(i), y[i]));
    return s / static_cast<double>(y.size());
}

double oracle_pseudo(const Mat<double>& weak, const Mat<double>& view, double pi) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < weak.rows(); ++i) {
        int arg = 0;
        for (Eigen::Index c = 1; c < weak.cols(); ++c)
            if (weak(i, c) > weak(i, arg)) arg = static_cast<int>(c);
        if (weak(i, arg) >= pi) s -= std::log(view(i, arg));
    }
    return s / static_cast<double>(weak.rows());
}

std::vector<double> oracle_classify(const std::vector<double>& z, const Mat<double>& w, double tau) {
    std::vector<double> out;
    double zn = 0.0;
    for (double v : z) zn += v * v;
    for (Eigen::Index k = 0; k < w.rows(); ++k) {
        double dot = 0.0, wn = 0.0;
        for (std::size_t d = 0; d < z.size(); ++d) {
            dot += z[d] * w(k, static_cast<Eigen::Index>(d));
            wn += w(k, static_cast<Eigen::Index>(d)) * w(k, static_cast<Eigen::Index>(d));
        }
        out.push_back(dot / std::sqrt(zn * wn) / tau);
    }
    double mx = out[0], sum = 0.0;
    for (double v : out) mx = std::max(mx, v);
    for (double& v : out) sum += (v = std::exp(v - mx));
    for (double& v : out) v /= sum;
    return out;
}

Verdict criterion1() {
    Rng rng(101);
    double worst = 0.0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        const int n = 1 + static_cast<int>(rng.below(12)), c = 2 + static_cast<int>(rng.below(9));
        const int d = 1 + static_cast<int>(rng.below(16));
        const Mat<double> p = random_probs(n, c, rng);
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
        worst = std::max(worst, std::abs(labeled_loss<double>(p, y).loss - oracle_nll(p, y)));

        // Thresholds spread so some rows pass and some do not.
        const double pi = rng.uniform(0.3, 0.99);
        const Mat<double> weak = random_probs(n, c, rng);
        const auto targets = make_pseudo_labels(weak, pi);
        const Mat<double> strong = random_probs(n, c, rng), style = random_probs(n, c, rng);
        worst = std::max(worst, std::abs(strong_view_loss<double>(strong, targets).loss - oracle_pseudo(weak, strong, pi)));
        worst = std::max(worst, std::abs(style_view_loss<double>(style, targets).loss - oracle_pseudo(weak, style, pi)));

        StochasticClassifierParams<double> params;
        params.mu = random_mat(c, d, rng);
        params.sigma_raw = random_mat(c, d, rng, 2.0);
        const Mat<double> eps = random_mat(c, d, rng);
        const Mat<double> w = sample_prototypes(params, eps);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < d; ++j)
                worst = std::max(worst, std::abs(w(i, j) - (params.mu(i, j) + std::log1p(std::exp(params.sigma_raw(i, j))) *
                                                                                 eps(i, j))));

        std::vector<double> z(static_cast<std::size_t>(d));
        for (double& v : z) v = rng.normal();
        const double tau = rng.uniform(0.05, 1.0);
        const auto got = classify<double>(z, w, tau);
        const auto want = oracle_classify(z, w, tau);
        for (std::size_t k = 0; k < want.size(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
    }
    return {worst <= 1e-6, fmt("%.0f instances per function, max abs error %.2e (tol 1e-6)", trials, worst)};
}

// 2. Finite differences through sample_prototypes and the cosine softmax.
Verdict criterion2() {
    Rng rng(202);
    double worst = 0.0;
    const double h = 1e-4;
    for (int t = 0; t < 20; ++t) {
        const int c = 2 + static_cast<int>(rng.below(4)), d = 2 + static_cast<int>(rng.below(7)), n = 4;
        StochasticClassifierParams<double> p;
        p.mu = random_mat(c, d, rng, 1.0 / std::sqrt(d));
        p.sigma_raw = random_mat(c, d, rng, 1.0);
        p.temperature = rng.uniform(0.05, 1.0);
        const Mat<double> eps = random_mat(c, d, rng);
        const Mat<double> z = random_mat(n, d, rng);
        std::vector<int> y(n);
        for (int& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
        auto loss_of = [&](const StochasticClassifierParams<double>& q, CosineCache<double>* cache, Mat<double>* g) {
            Mat<double> probs = cosine_logits(z, sample_prototypes(q, eps), q.temperature, cache);
            softmax_rows_inplace(probs);
            auto l = labeled_loss<double>(probs, y);
            if (g) *g = l.grad_logits;
            return l.loss;
        };
        CosineCache<double> cache;
        Mat<double> g;
        loss_of(p, &cache, &g);
        Mat<double> gw = Mat<double>::Zero(c, d), gmu = Mat<double>::Zero(c, d), gs = Mat<double>::Zero(c, d);
        cosine_logits_backward(cache, g, gw);
        sample_prototypes_backward(p, eps, gw, gmu, gs);
        for (int which = 0; which < 2; ++which)
            for (int i = 0; i < c; ++i)
                for (int j = 0; j < d; ++j) {
                    auto a = p, b = p;
                    (which ? a.sigma_raw : a.mu)(i, j) += h;
                    (which ? b.sigma_raw : b.mu)(i, j) -= h;
                    const double fd = (loss_of(a, nullptr, nullptr) - loss_of(b, nullptr, nullptr)) / (2 * h);
                    const double an = (which ? gs : gmu)(i, j);
                    // Relative error with a floor so vanishing entries do not divide by zero.
                    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
                }
    }
    return {worst <= 1e-3, fmt("20 instances, max relative error %.2e (tol 1e-3)", worst)};
}

// 3. Label budgets.
Verdict criterion3() {
    SynthConfig small;
    small.samples_per_class_per_domain = 12;
    small.image_size = 8;
    const auto a = generate_synthetic(small, 0);
    SynthConfig big = small;
    big.num_classes = 65;
    big.samples_per_class_per_domain = 6;
    const auto b = generate_synthetic(big, 0);
    bool ok = true;
    std::size_t n210 = 0, n975 = 0;
    for (int target = 0; target < 4; ++target)
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            n210 = build_split(a, target, 10, seed).total_labeled();
            n975 = build_split(b, target, 5, seed).total_labeled();
            ok = ok && n210 == 210 && n975 == 975;
        }
    return {ok, "C=7 10/class -> " + std::to_string(n210) + ", C=65 5/class -> " + std::to_string(n975) +
                    " (every target, seeds 0-2)"};
}

// 4. Threshold predicate and removal invariance at 0.95.
Verdict criterion4() {
    const auto ds = generate_synthetic(testing::tiny_synth(), 0);
    const auto split = build_split(ds, 3, 2, 0);
    bool ok = true;
    double worst = 0.0;
    std::size_t passing = 0, failing = 0;
    for (Method m : {Method::fixmatch, Method::fixmatch_snn, Method::stylematch, Method::stylematch_strong_only,
                     Method::stylematch_style_only})
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            TrainConfig c;
            c.method = m;
            c.batch_labeled = 8;
            c.batch_unlabeled = 16;
            c.seed = seed;
            Model<Real> model(testing::tiny_encoder(), ds.num_classes, 0.05f, seed + 7);
            auto [mean, sd] = source_input_statistics(split);
            model.set_input_statistics(mean, sd);
            BatchStream stream(split, c.batch_labeled, c.batch_unlabeled, seed);
            const ViewBundle v = build_views(stream.next(), split, AugmentationPolicy{}, c, 0);
            c.temperature = testing::straddling_temperature(model, v, c, 0.95);
            const auto r = testing::removal_check(model, v, c);
            passing += r.passing;
            failing += r.failing;
            worst = std::max(worst, r.max_update_diff);
            ok = ok && r.predicate_exact && r.same_passing_set && r.passing > 0 && r.failing > 0;
        }
    ok = ok && worst <= 1e-7;
    return {ok, fmt("15 straddling batches, %.0f passing / %.0f failing, max update diff %.2e (tol 1e-7)",
                    static_cast<double>(passing), static_cast<double>(failing), worst)};
}

// 5. Style statistics and cross-domain partner choice.
Verdict criterion5() {
    Rng rng(505);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const int h = 4 + static_cast<int>(rng.below(29)), w = 4 + static_cast<int>(rng.below(29));
        Image content(h, w, 3), style(h, w, 3);
        const double lo = rng.uniform(0.0, 0.5), hi = rng.uniform(0.5, 1.0);
        for (auto& v : content.pixels) v = static_cast<float>(rng.uniform());
        for (auto& v : style.pixels) v = static_cast<float>(rng.uniform(lo, hi));
        const auto out = channel_stats(t_style_unclipped(content, style));
        const auto want = channel_stats(style);
        for (int c = 0; c < 3; ++c) {
            worst = std::max(worst, std::abs(out.mean[static_cast<std::size_t>(c)] - want.mean[static_cast<std::size_t>(c)]));
            worst = std::max(worst,
                             std::abs(out.std_dev[static_cast<std::size_t>(c)] - want.std_dev[static_cast<std::size_t>(c)]));
        }
    }
    const auto ds = generate_synthetic(testing::tiny_synth(), 0);
    const auto split = build_split(ds, 0, 2, 0);
    int violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const int query = split.sources[rng.below(3)].domain;
        const auto s = pick_style_source(query, 0, split, StyleMode::cross_domain, rng);
        if (s.domain == query || s.domain == split.target_domain || !s.warning.empty()) ++violations;
    }
    return {worst <= 1e-4 && violations == 0,
            fmt("1000 pairs, max stat error %.2e (tol 1e-4); %.0f bad partners in 10000 draws", worst, violations)};
}

// Benchmark profile used by criteria 6-10.
ExperimentConfig desk_profile(const fs::path& root) {
    ExperimentConfig c;
    c.dataset.synthetic.image_size = 16;
    c.protocol.labels_per_class = 5;
    c.protocol.seeds = {0, 1, 2};
    c.method.train.steps = 1000;
    c.method.encoder.widths = {16, 32, 32, 32};
    c.method.encoder.norm_groups = 4;
    c.output.run_dir = root.string();
    return c;
}

CellRunOptions progress() {
    CellRunOptions o;
    o.on_step = [](const CellKey& k, const MetricRecord& r) {
        if ((r.step + 1) % 250 == 0) std::cerr << "  " << k.id() << " step " << r.step + 1 << std::endl;
    };
    return o;
}

double mean_over(const std::vector<RunResult>& rows, const std::string& method) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.method == method) s += r.accuracy, ++n;
    return n ? s / n : std::nan("");
}

struct Curves {
    std::vector<double> pla, oc;  // averaged over cells, indexed by step
};

Curves averaged_curves(const ExperimentSummary& s, const std::string& method) {
    Curves out;
    std::vector<int> count;
    for (const auto& cell : s.cells) {
        if (cell.key.method != method) continue;
        const auto log = read_metric_log(s.run_dir / cell.key.method / cell.key.target /
                                         std::to_string(cell.key.seed) / "metrics.log");
        if (out.pla.size() < log.size()) {
            out.pla.resize(log.size());
            out.oc.resize(log.size());
            count.resize(log.size());
        }
        for (std::size_t i = 0; i < log.size(); ++i) {
            out.pla[i] += log[i].pseudo_label_accuracy.value_or(0.0);
            out.oc[i] += log[i].overconfidence_rate;
            ++count[i];
        }
    }
    for (std::size_t i = 0; i < count.size(); ++i) {
        out.pla[i] /= count[i];
        out.oc[i] /= count[i];
    }
    return out;
}

double tail_mean(const std::vector<double>& v, double fraction) {
    const auto start = static_cast<std::size_t>(std::floor(v.size() * (1.0 - fraction)));
    double s = 0.0;
    for (std::size_t i = start; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(v.size() - start);
}

std::map<int, Verdict> benchmark(const fs::path& root) {
    auto c = desk_profile(root);
    c.method.methods = {Method::vanilla, Method::fixmatch, Method::fixmatch_snn, Method::stylematch};
    const auto s = run_experiment(c, progress());
    std::map<int, Verdict> v;
    if (s.failures() > 0) {
        for (int k : {6, 7, 8}) v[k] = {false, std::to_string(s.failures()) + " benchmark cells failed"};
        return v;
    }
    const double van = mean_over(s.results, "vanilla"), fm = mean_over(s.results, "fixmatch"),
                 sm = mean_over(s.results, "stylematch");
    v[6] = {sm - fm >= 0.01 && fm - van >= 0.01,
            fmt("mean accuracy stylematch %.4f, fixmatch %.4f, vanilla %.4f (gaps >= 0.01)", sm, fm, van)};

    const auto cf = averaged_curves(s, "fixmatch"), cs = averaged_curves(s, "stylematch"),
               cn = averaged_curves(s, "fixmatch_snn");
    const double pla_f = tail_mean(cf.pla, 0.25), pla_s = tail_mean(cs.pla, 0.25);
    v[7] = {pla_s > pla_f, fmt("final-quarter pseudo-label accuracy stylematch %.4f, fixmatch %.4f", pla_s, pla_f)};

    // Curves averaged over targets and seeds, then smoothed over 20 steps.
    const int window = 20;
    const auto oc = moving_average(cf.oc, window), pla = moving_average(cf.pla, window);
    double max_gap = -1.0;
    long overshoot = 0;
    // Only full windows count: at step 0 the untrained model sits at chance
    // with some confident rows, which is not the overfitting overshoot.
    for (std::size_t i = window - 1; i < oc.size(); ++i) {
        max_gap = std::max(max_gap, oc[i] - pla[i]);
        if (oc[i] > pla[i]) ++overshoot;
    }
    std::vector<double> gap_f(cf.oc.size()), gap_n(cn.oc.size());
    for (std::size_t i = 0; i < gap_f.size(); ++i) gap_f[i] = cf.oc[i] - cf.pla[i];
    for (std::size_t i = 0; i < gap_n.size(); ++i) gap_n[i] = cn.oc[i] - cn.pla[i];
    const double term_f = tail_mean(gap_f, 0.1), term_n = tail_mean(gap_n, 0.1);
    v[8] = {overshoot > 0 && term_n < term_f,
            fmt("fixmatch max smoothed (oc - pla) %+.4f over full windows; terminal gap fixmatch_snn %+.4f vs fixmatch %+.4f", max_gap,
                term_n, term_f)};
    return v;
}

Verdict criterion9(const fs::path& root) {
    std::string detail;
    bool ok = true;
    for (int k = 1; k <= 3; ++k) {
        auto c = desk_profile(root);
        c.protocol.seeds = {0};
        c.protocol.num_sources = k;
        c.method.methods = {Method::fixmatch, Method::stylematch};
        const auto s = run_experiment(c, progress());
        const double fm = mean_over(s.results, "fixmatch"), sm = mean_over(s.results, "stylematch");
        ok = ok && s.failures() == 0 && sm >= fm;
        detail += fmt("K=%.0f stylematch %.4f fixmatch %.4f; ", k, sm, fm);
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict criterion10(const fs::path& root) {
    std::vector<std::string> rows, logs;
    for (const char* run : {"first", "second"}) {
        const fs::path dir = root / "reproducibility" / run;
        fs::remove_all(dir);
        auto c = desk_profile(dir);
        c.protocol.seeds = {1};
        c.protocol.targets = {"sketch"};
        c.method.methods = {Method::stylematch};
        const auto s = run_experiment(c, progress());
        const fs::path cell = s.run_dir / "stylematch" / "sketch" / "1";
        rows.push_back(slurp(cell / "result.row"));
        logs.push_back(slurp(cell / "metrics.log"));
    }
    const bool ok = !rows[0].empty() && rows[0] == rows[1] && logs[0] == logs[1];
    return {ok, "stylematch/sketch/1 rerun in a fresh root: result.row " +
                    std::string(rows[0] == rows[1] ? "identical" : "differs") + ", metrics.log " +
                    (logs[0] == logs[1] ? "identical" : "differs")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::string run_root = "acceptance_runs";
    app.add_option("--criteria", criteria, "criteria to evaluate")->delimiter(',');
    app.add_option("--run-root", run_root, "directory for training runs");
    CLI11_PARSE(app, argc, argv);
    // The flag is authoritative; an ambient run-root variable would redirect it.
    unsetenv(run_root_env);

    const std::set<int> wanted(criteria.begin(), criteria.end());
    std::map<int, std::function<Verdict()>> quick{{1, criterion1}, {2, criterion2}, {3, criterion3},
                                                  {4, criterion4}, {5, criterion5}};
    std::map<int, Verdict> results;
    auto guarded = [&](const std::vector<int>& ids, const std::function<std::map<int, Verdict>()>& f) {
        try {
            for (auto& [k, v] : f()) results[k] = v;
        } catch (const std::exception& e) {
            for (int k : ids) results[k] = {false, std::string("error: ") + e.what()};
        }
    };
    for (int k : wanted) {
        if (quick.count(k)) guarded({k}, [&] { return std::map<int, Verdict>{{k, quick[k]()}}; });
    }
    if (wanted.count(6) || wanted.count(7) || wanted.count(8)) {
        std::map<int, Verdict> all;
        guarded({6, 7, 8}, [&] { return benchmark(run_root); });
        for (int k : {6, 7, 8})
            if (!wanted.count(k)) results.erase(k);
    }
    if (wanted.count(9)) guarded({9}, [&] { return std::map<int, Verdict>{{9, criterion9(run_root)}}; });
    if (wanted.count(10)) guarded({10}, [&] { return std::map<int, Verdict>{{10, criterion10(run_root)}}; });

    bool all_pass = true;
    for (int k : wanted) {
        if (!results.count(k)) {
            std::cout << "criterion " << k << ": FAIL unknown criterion" << std::endl;
            all_pass = false;
            continue;
        }
        const auto& v = results[k];
        std::cout << "criterion " << k << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
        all_pass = all_pass && v.pass;
    }
    return all_pass ? 0 : 1;
}
