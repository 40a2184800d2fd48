#include "ssdg/metrics.hpp"
#include "ssdg/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

using namespace ssdg;
namespace fs = std::filesystem;

namespace {

std::vector<PseudoLabelDiagnostic> batch(int size, int correct, int passing) {
    std::vector<PseudoLabelDiagnostic> b(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        auto& d = b[static_cast<std::size_t>(i)];
        d.hidden_label = 2;
        d.label.class_index = i < correct ? 2 : 1;
        d.label.confidence = i < passing ? 0.99 : 0.5;
        d.label.passes = i < passing;
    }
    return b;
}

MetricRecord record(long step, double pla, double oc) {
    MetricRecord r;
    r.step = step;
    r.pseudo_label_accuracy = pla;
    r.overconfidence_rate = oc;
    r.loss_total = 1.0 + step;
    r.learning_rate = 0.003;
    return r;
}

std::vector<RunResult> grid(int targets, int seeds, const std::vector<std::string>& methods) {
    std::vector<RunResult> rows;
    for (const auto& m : methods)
        for (int t = 0; t < targets; ++t)
            for (int s = 0; s < seeds; ++s)
                rows.push_back({m, "d" + std::to_string(t), static_cast<std::uint64_t>(s), 0.1 * t + 0.01 * s});
    return rows;
}

} // namespace

TEST(PseudoLabelAccuracy, Examples) {
    EXPECT_DOUBLE_EQ(*pseudo_label_accuracy(batch(32, 32, 0)), 1.0);
    EXPECT_DOUBLE_EQ(*pseudo_label_accuracy(batch(32, 24, 0)), 0.75);
    EXPECT_FALSE(pseudo_label_accuracy(batch(32, 24, 0), true).has_value());
    // Passing examples are the first 8, all correct.
    EXPECT_DOUBLE_EQ(*pseudo_label_accuracy(batch(32, 24, 8), true), 1.0);
}

TEST(PseudoLabelAccuracy, Errors) {
    EXPECT_THROW(pseudo_label_accuracy({}), MetricsError);
    auto b = batch(4, 2, 2);
    b[1].hidden_label = -1;
    EXPECT_THROW(pseudo_label_accuracy(b), MetricsError);
}

TEST(OverconfidenceRate, Examples) {
    EXPECT_DOUBLE_EQ(overconfidence_rate(batch(32, 0, 8), 0.95), 0.25);
    EXPECT_DOUBLE_EQ(overconfidence_rate(batch(32, 0, 8), 0.0), 1.0);
    EXPECT_DOUBLE_EQ(overconfidence_rate(batch(32, 0, 32), 1.0 + 1e-9), 0.0);
    EXPECT_THROW(overconfidence_rate({}, 0.5), MetricsError);
}

TEST(OverconfidenceRate, NonIncreasingInThreshold) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<PseudoLabelDiagnostic> b(20);
        for (auto& d : b) d.label.confidence = rng.uniform();
        double prev = 1.0;
        for (double pi = 0.0; pi <= 1.0; pi += 0.01) {
            const double r = overconfidence_rate(b, pi);
            ASSERT_LE(r, prev);
            prev = r;
        }
    }
}

TEST(Aggregate, SingleRunIsIdentity) {
    const std::vector<RunResult> rows{{"fixmatch", "sketch", 0, 0.42}};
    const auto t = aggregate(rows);
    EXPECT_DOUBLE_EQ(*t.per_target.at("fixmatch").at("sketch"), 0.42);
    EXPECT_DOUBLE_EQ(*t.average.at("fixmatch"), 0.42);
}

TEST(Aggregate, SeedMean) {
    const std::vector<RunResult> rows{{"m", "t", 0, 0.6}, {"m", "t", 1, 0.8}};
    EXPECT_NEAR(*aggregate(rows).per_target.at("m").at("t"), 0.7, 1e-15);
}

TEST(Aggregate, GridShape) {
    const auto rows = grid(4, 5, {"fixmatch", "stylematch"});
    ASSERT_EQ(rows.size(), 40u);
    const auto t = aggregate(rows);
    std::size_t domain_aggregates = 0;
    for (const auto& [m, by_target] : t.per_target) domain_aggregates += by_target.size();
    EXPECT_EQ(domain_aggregates, 8u);
    EXPECT_EQ(t.average.size(), 2u);
    // Oracle: mean over seeds of 0.1 t + 0.01 s, then over targets.
    double expect = 0.0;
    for (int tg = 0; tg < 4; ++tg) {
        double s = 0.0;
        for (int sd = 0; sd < 5; ++sd) s += 0.1 * tg + 0.01 * sd;
        expect += s / 5;
    }
    EXPECT_NEAR(*t.average.at("stylematch"), expect / 4, 1e-12);
}

TEST(Aggregate, MissingAndDuplicateCells) {
    auto rows = grid(2, 2, {"a", "b"});
    rows.erase(std::remove_if(rows.begin(), rows.end(),
                              [](const RunResult& r) { return r.method == "b" && r.target == "d1" && r.seed == 1; }),
               rows.end());
    try {
        aggregate(rows);
        FAIL() << "expected an aggregation error";
    } catch (const AggregationError& e) {
        EXPECT_NE(std::string(e.what()).find("method=b target=d1 seed=1"), std::string::npos) << e.what();
    }
    const auto partial = aggregate(rows, true);
    EXPECT_EQ(partial.missing_cells.size(), 1u);
    EXPECT_FALSE(partial.average.at("b").has_value());
    EXPECT_TRUE(partial.average.at("a").has_value());

    auto dup = grid(1, 1, {"a"});
    dup.push_back(dup.front());
    EXPECT_THROW(aggregate(dup), AggregationError);
}

TEST(Aggregate, PermutationInvariant) {
    auto rows = grid(3, 3, {"x", "y", "z"});
    const auto ref = aggregate(rows);
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(rows.begin(), rows.end());
        const auto t = aggregate(rows);
        EXPECT_EQ(t.methods, ref.methods);
        EXPECT_EQ(t.targets, ref.targets);
        for (const auto& m : ref.methods) {
            EXPECT_EQ(*t.average.at(m), *ref.average.at(m));
            for (const auto& tg : ref.targets) EXPECT_EQ(*t.per_target.at(m).at(tg), *ref.per_target.at(m).at(tg));
        }
        EXPECT_EQ(t.to_text(), ref.to_text());
    }
}

TEST(Aggregate, Renderings) {
    const auto t = aggregate(grid(2, 1, {"vanilla"}));
    EXPECT_EQ(t.to_csv(), "method,target,seed,accuracy\nvanilla,d0,0,0\nvanilla,d1,0,0.1\n");
    const std::string text = t.to_text();
    EXPECT_NE(text.find("Avg"), std::string::npos);
    EXPECT_NE(text.find("5.00"), std::string::npos);
}

TEST(Curves, ThreeRecordsThreePoints) {
    const std::vector<MetricRecord> log{record(0, 0.5, 0.1), record(1, 0.6, 0.2), record(2, 0.7, 0.9)};
    const auto series = curve_export(log, 1);
    ASSERT_EQ(series.size(), curve_metric_names().size());
    for (const auto& s : series) {
        EXPECT_EQ(s.steps.size(), 3u) << s.metric;
        EXPECT_EQ(s.raw, s.smoothed) << s.metric;
    }
    EXPECT_EQ(series[1].raw, (std::vector<double>{0.1, 0.2, 0.9}));
}

TEST(Curves, ConstantSeriesStaysConstant) {
    std::vector<MetricRecord> log;
    for (long i = 0; i < 50; ++i) log.push_back(record(i, 0.25, 0.25));
    for (int w : {1, 3, 20, 100}) {
        const auto series = curve_export(log, w);
        for (double v : series[0].smoothed) EXPECT_DOUBLE_EQ(v, 0.25);
    }
}

TEST(Curves, MovingAverageOracle) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    EXPECT_EQ(moving_average(x, 2), (std::vector<double>{1, 1.5, 2.5, 3.5, 4.5}));
    EXPECT_THROW(moving_average(x, 0), MetricsError);
}

TEST(Curves, AbsentValuesSkipped) {
    std::vector<MetricRecord> log{record(0, 0.5, 0.0), record(1, 0.5, 0.5)};
    log[0].pseudo_label_accuracy.reset();
    const auto s = curve_export(log, 1);
    EXPECT_EQ(s[0].steps, (std::vector<long>{1}));
    EXPECT_EQ(s[1].steps.size(), 2u);
}

TEST(MetricLog, RoundTripAndFiles) {
    const fs::path dir = fs::temp_directory_path() / "ssdg_test_metrics";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<MetricRecord> log{record(0, 0.5, 0.1), record(1, 0.6, 0.2)};
    log[1].pseudo_label_accuracy.reset();
    write_metric_log(dir / "m.log", log);
    const auto back = read_metric_log(dir / "m.log");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].to_json(), log[0].to_json());
    EXPECT_FALSE(back[1].pseudo_label_accuracy.has_value());

    write_series_files(curve_export(back, 5), dir / "curves");
    std::ifstream f(dir / "curves" / "overconfidence_rate.csv");
    std::string header;
    std::getline(f, header);
    EXPECT_EQ(header, "# metric=overconfidence_rate smoothing_window=5");
}

TEST(MetricLog, CorruptLineReportsLineNumber) {
    const fs::path dir = fs::temp_directory_path() / "ssdg_test_metrics_corrupt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "m.log");
        out << record(0, 0.5, 0.1).to_json().dump() << '\n'
            << record(1, 0.5, 0.1).to_json().dump() << '\n'
            << "{\"step\": 2, \"truncated\n";
    }
    try {
        read_metric_log(dir / "m.log");
        FAIL() << "expected a metrics error";
    } catch (const MetricsError& e) {
        EXPECT_NE(std::string(e.what()).find("m.log:3"), std::string::npos) << e.what();
    }
    {
        std::ofstream out(dir / "bad_rate.log");
        auto j = record(0, 0.5, 0.1).to_json();
        j["overconfidence_rate"] = 1.5;
        out << j.dump() << '\n';
    }
    EXPECT_THROW(read_metric_log(dir / "bad_rate.log"), MetricsError);
    EXPECT_THROW(read_metric_log(dir / "absent.log"), MetricsError);
}
