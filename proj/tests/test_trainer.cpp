#include "support.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace ssdg;
using namespace ssdg::testing;

namespace {

const MultiDomainDataset& dataset() {
    static const MultiDomainDataset ds = generate_synthetic(tiny_synth(), 0);
    return ds;
}

const SSDGSplit& split3() {
    static const SSDGSplit s = build_split(dataset(), 3, 2, 0);
    return s;
}

TrainConfig small_config(Method m, long steps = 4) {
    TrainConfig c;
    c.method = m;
    c.steps = steps;
    c.batch_labeled = 4;
    c.batch_unlabeled = 4;
    c.seed = 1;
    return c;
}

Model<Real> fresh_model(std::uint64_t seed = 3) {
    Model<Real> m(tiny_encoder(), dataset().num_classes, 0.05f, seed);
    auto [mean, sd] = source_input_statistics(split3());
    m.set_input_statistics(mean, sd);
    return m;
}

ViewBundle views_for(const TrainConfig& c, long step = 0) {
    BatchStream stream(split3(), c.batch_labeled, c.batch_unlabeled, 5);
    return build_views(stream.next(), split3(), AugmentationPolicy{}, c, step);
}

bool params_equal(const ParamSet<Real>& a, const ParamSet<Real>& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (std::memcmp(a[k].values.data(), b[k].values.data(), a[k].values.size() * sizeof(Real)) != 0) return false;
    return true;
}

double max_abs_diff(const ParamSet<Real>& a, const ParamSet<Real>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k].values.size(); ++i)
            m = std::max(m, std::abs(static_cast<double>(a[k].values[i]) - b[k].values[i]));
    return m;
}

} // namespace

TEST(Views, ShapesFollowRecipe) {
    const auto v = views_for(small_config(Method::stylematch));
    EXPECT_EQ(v.weak_labeled.size(), 12u);
    EXPECT_EQ(v.weak_unlabeled.size(), 12u);
    EXPECT_EQ(v.strong_unlabeled.size(), 12u);
    EXPECT_EQ(v.style_labeled.size(), 12u);
    EXPECT_TRUE(v.teacher_labeled.empty());
    EXPECT_TRUE(v.warnings.empty());

    const auto f = views_for(small_config(Method::fixmatch));
    EXPECT_EQ(f.strong_labeled.size(), 12u);
    EXPECT_TRUE(f.style_labeled.empty());

    const auto van = views_for(small_config(Method::vanilla));
    EXPECT_TRUE(van.strong_labeled.empty());
    EXPECT_TRUE(van.style_unlabeled.empty());

    const auto mt = views_for(small_config(Method::meanteacher));
    EXPECT_EQ(mt.teacher_unlabeled.size(), 12u);

    const auto so = views_for(small_config(Method::stylematch_style_only));
    EXPECT_TRUE(so.strong_labeled.empty());
    EXPECT_EQ(so.style_labeled.size(), 12u);
}

TEST(Views, DeterministicPerStep) {
    const auto c = small_config(Method::stylematch);
    const auto a = views_for(c, 7);
    const auto b = views_for(c, 7);
    const auto d = views_for(c, 8);
    EXPECT_EQ(a.strong_unlabeled, b.strong_unlabeled);
    EXPECT_EQ(a.style_labeled, b.style_labeled);
    EXPECT_NE(a.strong_unlabeled, d.strong_unlabeled);
}

TEST(Views, SingleSourceStyleFallsBack) {
    const auto s = build_split(dataset(), 3, 2, 0, std::vector<int>{1});
    const auto c = small_config(Method::stylematch);
    BatchStream stream(s, 4, 4, 0);
    const auto v = build_views(stream.next(), s, AugmentationPolicy{}, c, 0);
    EXPECT_EQ(v.style_unlabeled.size(), 4u);
    ASSERT_EQ(v.warnings.size(), 1u);
}

TEST(Step, VanillaHasOnlyLabeledLoss) {
    const auto c = small_config(Method::vanilla);
    const auto g = compute_step_gradients(fresh_model(), views_for(c), c, 0);
    EXPECT_GT(g.output.losses.labeled, 0.0);
    EXPECT_EQ(g.output.losses.strong, 0.0);
    EXPECT_EQ(g.output.losses.style, 0.0);
    EXPECT_DOUBLE_EQ(g.output.loss_total, g.output.losses.labeled);
}

TEST(Step, StyleMatchLossIsUnweightedSum) {
    auto c = small_config(Method::stylematch);
    c.confidence_threshold = 0.2;  // make some pseudo-labels pass at initialization
    const auto g = compute_step_gradients(fresh_model(), views_for(c), c, 0);
    EXPECT_GT(g.output.losses.strong, 0.0);
    EXPECT_GT(g.output.losses.style, 0.0);
    EXPECT_NEAR(g.output.loss_total, g.output.losses.labeled + g.output.losses.strong + g.output.losses.style,
                1e-12);
}

TEST(Step, StrongAndStyleShareOnePseudoLabelSet) {
    // With identical strong and style images and one noise draw, both terms
    // score the same targets and must agree exactly.
    auto c = small_config(Method::stylematch);
    c.confidence_threshold = 0.2;
    ViewBundle v = views_for(c);
    v.style_labeled = v.strong_labeled;
    v.style_unlabeled = v.strong_unlabeled;
    const auto g = compute_step_gradients(fresh_model(), v, c, 0);
    EXPECT_GT(g.output.losses.strong, 0.0);
    EXPECT_DOUBLE_EQ(g.output.losses.strong, g.output.losses.style);
}

TEST(Step, HiddenLabelsNeverReachTheLoss) {
    const auto c = small_config(Method::stylematch);
    const Model<Real> model = fresh_model();
    ViewBundle v = views_for(c);
    const auto a = compute_step_gradients(model, v, c, 0);
    for (auto& h : v.hidden_labels) h = (h + 1) % dataset().num_classes;
    const auto b = compute_step_gradients(model, v, c, 0);
    EXPECT_TRUE(params_equal(a.grads, b.grads));
    EXPECT_EQ(a.output.loss_total, b.output.loss_total);
    for (auto& h : v.hidden_labels) h = -1;
    EXPECT_TRUE(params_equal(a.grads, compute_step_gradients(model, v, c, 0).grads));
}

TEST(Step, ThresholdRemovalLeavesUpdateUnchanged) {
    for (Method m : {Method::fixmatch, Method::stylematch, Method::fixmatch_snn}) {
        auto c = small_config(m);
        const Model<Real> model = fresh_model();
        const ViewBundle v = views_for(c);
        c.temperature = straddling_temperature(model, v, c, c.confidence_threshold);
        const RemovalCheck r = removal_check(model, v, c);
        EXPECT_TRUE(r.predicate_exact);
        EXPECT_TRUE(r.same_passing_set);
        EXPECT_GT(r.passing, 0u);
        EXPECT_GT(r.failing, 0u);
        EXPECT_LE(r.max_update_diff, 1e-7) << method_name(m);
    }
}

TEST(Step, DivisorDefaultsToScoredCount) {
    auto c = small_config(Method::fixmatch);
    c.confidence_threshold = 0.2;
    const Model<Real> model = fresh_model();
    ViewBundle v = views_for(c);
    const auto a = compute_step_gradients(model, v, c, 0);
    v.pseudo_label_divisor = 2 * (v.weak_labeled.size() + v.weak_unlabeled.size());
    const auto b = compute_step_gradients(model, v, c, 0);
    EXPECT_NEAR(b.output.losses.strong, a.output.losses.strong / 2, 1e-6);
}

TEST(Step, NonFiniteInputIsAnError) {
    // A NaN pixel poisons the feature norm; the step must refuse rather than
    // hand NaN gradients to the optimizer.
    const auto c = small_config(Method::fixmatch);
    ViewBundle v = views_for(c);
    v.weak_labeled[0].pixels[0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(compute_step_gradients(fresh_model(), v, c, 0), Error);
}

TEST(Step, SnnGetsSigmaGradientDeterministicDoesNot) {
    auto c = small_config(Method::fixmatch_snn);
    const Model<Real> model = fresh_model();
    const auto v = views_for(c);
    const auto snn = compute_step_gradients(model, v, c, 0);
    EXPECT_GT(snn.grads[model.sigma_index()].matrix().cwiseAbs().maxCoeff(), 0.0f);
    c.method = Method::fixmatch;
    const auto det = compute_step_gradients(model, v, c, 0);
    EXPECT_EQ(det.grads[model.sigma_index()].matrix().cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Step, NoiseResamplingChangesStrongTerm) {
    auto c = small_config(Method::stylematch);
    c.confidence_threshold = 0.2;
    const Model<Real> model = fresh_model();
    const auto v = views_for(c);
    const auto shared = compute_step_gradients(model, v, c, 0);
    c.resample_noise_per_view = true;
    const auto split = compute_step_gradients(model, v, c, 0);
    EXPECT_EQ(shared.output.losses.labeled, split.output.losses.labeled);
    EXPECT_NE(shared.output.losses.strong, split.output.losses.strong);
}

TEST(Step, EntMinAndMeanTeacherRun) {
    auto c = small_config(Method::entmin);
    const auto e = compute_step_gradients(fresh_model(), views_for(c), c, 0);
    EXPECT_GT(e.output.losses.entropy, 0.0);
    EXPECT_NEAR(e.output.loss_total, e.output.losses.labeled + e.output.losses.entropy, 1e-12);

    c.method = Method::meanteacher;
    TrainState state(fresh_model(), c);
    ASSERT_TRUE(state.teacher.has_value());
    const auto v = views_for(c);
    EXPECT_THROW(compute_step_gradients(state.model, v, c, 0), TrainerError);
    const auto before = *state.teacher;
    BatchStream stream(split3(), 4, 4, 5);
    const auto out = train_step(stream.next(), state, c, split3(), AugmentationPolicy{});
    EXPECT_GE(out.losses.consistency, 0.0);
    EXPECT_FALSE(params_equal(before, *state.teacher));
    EXPECT_LT(max_abs_diff(before, *state.teacher), max_abs_diff(before, state.model.params()) + 1e-9);
}

TEST(Update, ZeroGradientWithoutDecayKeepsParameters) {
    auto c = small_config(Method::fixmatch);
    c.weight_decay = 0.0;
    TrainState state(fresh_model(), c);
    const auto before = state.model.params();
    StepOutput out;
    apply_update(state, before.zeros_like(), c, out);
    EXPECT_TRUE(params_equal(before, state.model.params()));
    EXPECT_EQ(state.step, 1);
    EXPECT_DOUBLE_EQ(out.lr_backbone, c.lr_backbone);
    EXPECT_DOUBLE_EQ(out.lr_classifier, c.lr_classifier);
}

TEST(Update, BudgetExhaustedThrows) {
    auto c = small_config(Method::vanilla, 1);
    TrainState state(fresh_model(), c);
    BatchStream stream(split3(), 4, 4, 5);
    train_step(stream.next(), state, c, split3(), AugmentationPolicy{});
    EXPECT_THROW(train_step(stream.next(), state, c, split3(), AugmentationPolicy{}), TrainerError);
}

TEST(Training, BitIdenticalReruns) {
    const auto c = small_config(Method::stylematch, 3);
    const auto a = run_training(split3(), tiny_encoder(), c, AugmentationPolicy{});
    const auto b = run_training(split3(), tiny_encoder(), c, AugmentationPolicy{});
    EXPECT_TRUE(params_equal(a.model.params(), b.model.params()));
    ASSERT_EQ(a.log.size(), 3u);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].to_json(), b.log[i].to_json());

    auto other = c;
    other.seed = 2;
    const auto d = run_training(split3(), tiny_encoder(), other, AugmentationPolicy{});
    EXPECT_FALSE(params_equal(a.model.params(), d.model.params()));
}

TEST(Training, LogAndHooks) {
    auto c = small_config(Method::fixmatch, 5);
    int steps_seen = 0;
    std::vector<long> checkpoints;
    TrainHooks hooks;
    hooks.on_step = [&](const MetricRecord& r) { EXPECT_EQ(r.step, steps_seen++); };
    hooks.on_checkpoint = [&](const Model<Real>&, long s) { checkpoints.push_back(s); };
    hooks.checkpoint_interval = 2;
    const auto r = run_training(split3(), tiny_encoder(), c, AugmentationPolicy{}, hooks);
    EXPECT_EQ(steps_seen, 5);
    EXPECT_EQ(checkpoints, (std::vector<long>{2, 4}));
    for (const auto& rec : r.log) {
        ASSERT_TRUE(rec.pseudo_label_accuracy.has_value());
        EXPECT_GE(rec.overconfidence_rate, 0.0);
        EXPECT_LE(rec.overconfidence_rate, 1.0);
    }
    EXPECT_DOUBLE_EQ(r.log.front().learning_rate, c.lr_backbone);
    EXPECT_LT(r.log.back().learning_rate, c.lr_backbone);
}

TEST(Training, InvalidConfigRejected) {
    auto c = small_config(Method::fixmatch);
    c.confidence_threshold = 1.0;
    EXPECT_THROW(run_training(split3(), tiny_encoder(), c, AugmentationPolicy{}), ConfigError);
    c = small_config(Method::fixmatch);
    c.steps = 0;
    EXPECT_THROW(run_training(split3(), tiny_encoder(), c, AugmentationPolicy{}), ConfigError);
}

TEST(Evaluate, CountsTopOneAgreement) {
    const Model<Real> model = fresh_model();
    const auto& target = dataset().examples[3];
    std::vector<DomainExample> four(target.begin(), target.begin() + 4);
    std::vector<const Image*> imgs;
    for (const auto& e : four) imgs.push_back(e.image.get());
    const auto pred = model.predict(imgs);
    for (std::size_t i = 0; i < 4; ++i) four[i].label = pred[i];
    EXPECT_DOUBLE_EQ(evaluate(model, four), 1.0);
    four[0].label = (pred[0] + 1) % 7;
    EXPECT_DOUBLE_EQ(evaluate(model, four), 0.75);
    for (std::size_t i = 0; i < 4; ++i) four[i].label = (pred[i] + 1) % 7;
    EXPECT_DOUBLE_EQ(evaluate(model, four), 0.0);
    EXPECT_THROW(evaluate(model, std::vector<DomainExample>{}), TrainerError);
}

TEST(Evaluate, ChunkingDoesNotChangeResult) {
    const Model<Real> model = fresh_model();
    std::vector<DomainExample> all;
    for (const auto& d : dataset().examples) all.insert(all.end(), d.begin(), d.end());
    ASSERT_GT(all.size(), 256u);
    std::size_t correct = 0;
    for (const auto& e : all) {
        const Image* p = e.image.get();
        if (model.predict(std::span<const Image* const>(&p, 1))[0] == e.label) ++correct;
    }
    EXPECT_DOUBLE_EQ(evaluate(model, all), static_cast<double>(correct) / all.size());
}

TEST(Step, WeakBranchPerturbationLeavesGradientsUnchanged) {
    // Pseudo-labels are constants: nudging the unlabeled weak views (without
    // flipping any pseudo-label) must not move a single gradient bit.
    for (Method m : {Method::fixmatch, Method::stylematch}) {
        auto c = small_config(m);
        c.confidence_threshold = 0.2;
        const Model<Real> model = fresh_model();
        ViewBundle v = views_for(c);
        const auto a = compute_step_gradients(model, v, c, 0);
        for (auto& img : v.weak_unlabeled)
            for (auto& p : img.pixels) p = std::clamp(p + 1e-4f, 0.0f, 1.0f);
        const auto b = compute_step_gradients(model, v, c, 0);
        bool same_labels = true;
        for (std::size_t i = 0; i < a.output.pseudo_labels.size(); ++i)
            same_labels &= a.output.pseudo_labels[i].label.class_index == b.output.pseudo_labels[i].label.class_index &&
                           a.output.pseudo_labels[i].label.passes == b.output.pseudo_labels[i].label.passes;
        ASSERT_TRUE(same_labels);
        EXPECT_TRUE(params_equal(a.grads, b.grads)) << method_name(m);
        EXPECT_EQ(a.output.losses.strong, b.output.losses.strong);
    }
}

TEST(Training, DeviationsDoNotGrow) {
    auto c = small_config(Method::stylematch, 40);
    const auto r = run_training(split3(), tiny_encoder(), c, AugmentationPolicy{});
    EXPECT_LE(r.log.back().mean_sigma, r.initial_mean_sigma);
}
