#pragma once

// One optimization step of every method in the ladder, plus the training
// loop and top-1 evaluation.
//
// Step anatomy (stylematch):
//   views   weak(x) for all labeled and unlabeled images, strong(weak(x)) and
//           style(weak(x), partner) for both streams
//   noise   one C x D standard-normal draw per step (per view group when
//           resample_noise_per_view is set)
//   labels  pseudo-labels from the weak-view probabilities, held constant
//   losses  labeled CE + thresholded CE on strong + thresholded CE on style
//   update  SGD with momentum, backbone and classifier learning rates on a
//           cosine schedule

#include "augment.hpp"
#include "classifier.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "split.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ssdg {

using Real = float;

struct TrainConfig {
    Method method = Method::stylematch;
    long steps = 2000;
    double lr_backbone = 0.003;
    double lr_classifier = 0.01;
    double confidence_threshold = 0.95;
    double temperature = 0.05;
    double ema_decay = 0.999;
    double entmin_weight = 1.0;
    double consistency_weight = 1.0;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_labeled = 16;
    int batch_unlabeled = 16;
    std::uint64_t seed = 0;
    bool resample_noise_per_view = false;
    // Diagnostics: which stream feeds the per-step pseudo-label metrics and
    // whether accuracy is restricted to threshold-passing examples.
    bool metrics_both_streams = false;
    bool metrics_only_passing = false;

    MethodRecipe recipe() const { return recipe_for(method); }

    void validate() const {
        if (steps < 1) throw ConfigError("method.steps must be >= 1");
        if (!(lr_backbone > 0.0)) throw ConfigError("method.lr_backbone must be > 0");
        if (!(lr_classifier > 0.0)) throw ConfigError("method.lr_classifier must be > 0");
        if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
            throw ConfigError("method.confidence_threshold must lie in (0, 1)");
        if (!(temperature > 0.0)) throw ConfigError("method.temperature must be > 0");
        if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("method.ema_decay must lie in [0, 1)");
        if (batch_labeled < 1 || batch_unlabeled < 1) throw ConfigError("method batch sizes must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("method.momentum must lie in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("method.weight_decay must be >= 0");
    }
};

// The images a step trains on, already augmented.
struct ViewBundle {
    std::vector<Image> weak_labeled;
    std::vector<int> labels;
    std::vector<Image> weak_unlabeled;
    std::vector<int> hidden_labels;  // diagnostics only; -1 when unknown
    std::vector<Image> strong_labeled;
    std::vector<Image> strong_unlabeled;
    std::vector<Image> style_labeled;
    std::vector<Image> style_unlabeled;
    std::vector<Image> teacher_labeled;   // second weak view, MeanTeacher
    std::vector<Image> teacher_unlabeled;
    std::vector<std::string> warnings;
    // Divisor of the masked-mean pseudo-label losses; defaults to the number
    // of examples scored (labeled + unlabeled).
    std::optional<std::size_t> pseudo_label_divisor;
};

struct StepOutput {
    LossComponents losses;
    double loss_total = 0.0;
    std::vector<PseudoLabelDiagnostic> pseudo_labels;
    double lr_backbone = 0.0;
    double lr_classifier = 0.0;
    MetricRecord record;
};

struct TrainState {
    Model<Real> model;
    Sgd<Real> optimizer;
    std::optional<ParamSet<Real>> teacher;
    long step = 0;

    TrainState() = default;
    TrainState(Model<Real> m, const TrainConfig& config)
        : model(std::move(m)), optimizer(model.params(), SgdConfig{config.momentum, config.weight_decay}) {
        if (config.recipe().teacher) teacher = model.params();
    }
};

namespace trainer_detail {

enum : std::uint64_t {
    tag_weak = 1,
    tag_strong = 2,
    tag_style = 3,
    tag_teacher = 4,
    tag_noise = 5,
    tag_labeled = 10,
    tag_unlabeled = 11,
};

inline std::vector<const Image*> pointers(const std::vector<Image>& images) {
    std::vector<const Image*> out;
    out.reserve(images.size());
    for (const auto& i : images) out.push_back(&i);
    return out;
}

inline Mat<Real> softmax_copy(const Mat<Real>& logits) {
    Mat<Real> p = logits;
    softmax_rows_inplace(p);
    return p;
}

inline double mean_effective_std(const Model<Real>& model) {
    double sum = 0.0;
    const auto& raw = model.params()[model.sigma_index()].values;
    for (Real v : raw) sum += softplus(static_cast<double>(v));
    return raw.empty() ? 0.0 : sum / static_cast<double>(raw.size());
}

} // namespace trainer_detail

// Builds every view the method needs. Each example's randomness comes from
// its own generator derived from (seed, step, view, stream, source, position),
// so views do not depend on construction order.
inline ViewBundle build_views(const BatchBundle& bundle, const SSDGSplit& split, const AugmentationPolicy& policy,
                              const TrainConfig& config, long step) {
    using namespace trainer_detail;
    const MethodRecipe r = config.recipe();
    ViewBundle v;
    auto rng_for = [&](std::uint64_t view, std::uint64_t stream, std::size_t slot, std::size_t i) {
        return Rng(derive_seed(config.seed, static_cast<std::uint64_t>(step), view, stream,
                               static_cast<std::uint64_t>(slot), static_cast<std::uint64_t>(i)));
    };
    StyleMode mode = policy.style.mode;
    if (r.style_view && mode == StyleMode::cross_domain && split.num_sources() < 2) {
        mode = StyleMode::within_domain;
        v.warnings.push_back("cross_domain style mixing needs >= 2 source domains; using within_domain");
    }
    auto add_views = [&](const Image& x, int domain, int dataset_index, std::uint64_t stream, std::size_t slot,
                         std::size_t i, std::vector<Image>& weak, std::vector<Image>& strong,
                         std::vector<Image>& style, std::vector<Image>& teacher) {
        Rng wr = rng_for(tag_weak, stream, slot, i);
        weak.push_back(t_weak(x, policy.weak, wr));
        if (r.strong_view) {
            Rng sr = rng_for(tag_strong, stream, slot, i);
            const Image base = t_weak(x, policy.weak, sr);
            strong.push_back(t_strong(base, policy.strong, sr));
        }
        if (r.style_view) {
            Rng yr = rng_for(tag_style, stream, slot, i);
            const StyleSource partner = pick_style_source(domain, dataset_index, split, mode, yr);
            const Image base = t_weak(x, policy.weak, yr);
            style.push_back(t_style(base, *partner.image, policy.style.epsilon));
        }
        if (r.teacher) {
            Rng tr = rng_for(tag_teacher, stream, slot, i);
            teacher.push_back(t_weak(x, policy.weak, tr));
        }
    };
    for (std::size_t k = 0; k < bundle.labeled.size(); ++k)
        for (std::size_t i = 0; i < bundle.labeled[k].size(); ++i) {
            const auto& e = bundle.labeled[k][i];
            v.labels.push_back(e.label);
            add_views(*e.image, e.domain, e.index, tag_labeled, k, i, v.weak_labeled, v.strong_labeled,
                      v.style_labeled, v.teacher_labeled);
        }
    for (std::size_t k = 0; k < bundle.unlabeled.size(); ++k)
        for (std::size_t i = 0; i < bundle.unlabeled[k].size(); ++i) {
            const auto& e = bundle.unlabeled[k][i];
            v.hidden_labels.push_back(DiagnosticsChannel::hidden_label(e));
            add_views(*e.image, e.domain, e.index, tag_unlabeled, k, i, v.weak_unlabeled, v.strong_unlabeled,
                      v.style_unlabeled, v.teacher_unlabeled);
        }
    return v;
}

struct StepGradients {
    ParamSet<Real> grads;
    StepOutput output;
};

// Forward and backward for one step without touching the parameters.
inline StepGradients compute_step_gradients(const Model<Real>& model, const ViewBundle& views,
                                            const TrainConfig& config, long step,
                                            const ParamSet<Real>* teacher = nullptr) {
    using namespace trainer_detail;
    const MethodRecipe r = config.recipe();
    const std::size_t n_l = views.weak_labeled.size();
    const std::size_t n_u = views.weak_unlabeled.size();
    if (n_l == 0) throw TrainerError("labeled batch is empty");
    if (views.labels.size() != n_l) throw TrainerError("label count does not match labeled views");
    const auto temperature = static_cast<Real>(config.temperature);
    const int num_classes = model.num_classes();
    const int dim = model.feature_dim();
    const StochasticClassifierParams<Real> head = model.classifier();

    // Prototype draws: group 0 = weak views, 1 = strong, 2 = style.
    std::vector<Mat<Real>> noise(3);
    std::vector<Mat<Real>> protos(3);
    for (std::size_t g = 0; g < 3; ++g) {
        if (!r.stochastic_classifier) {
            protos[g] = mean_prototypes(head);
            continue;
        }
        if (g == 0 || config.resample_noise_per_view) {
            Rng nr(derive_seed(config.seed, static_cast<std::uint64_t>(step), tag_noise,
                               config.resample_noise_per_view ? g : 0));
            noise[g] = draw_prototype_noise<Real>(num_classes, dim, nr);
        } else {
            noise[g] = noise[0];
        }
        protos[g] = sample_prototypes(head, noise[g]);
    }

    // Gradient-carrying batch layout.
    struct Segment {
        const std::vector<Image>* images;
        std::size_t group;
        std::size_t offset = 0;
    };
    std::vector<Segment> segs;
    const bool weak_u_grad = r.entropy || r.teacher;
    segs.push_back({&views.weak_labeled, 0});
    std::size_t seg_weak_u = SIZE_MAX, seg_strong_l = SIZE_MAX, seg_strong_u = SIZE_MAX, seg_style_l = SIZE_MAX,
                seg_style_u = SIZE_MAX;
    if (weak_u_grad) {
        seg_weak_u = segs.size();
        segs.push_back({&views.weak_unlabeled, 0});
    }
    if (r.strong_view) {
        seg_strong_l = segs.size();
        segs.push_back({&views.strong_labeled, 1});
        seg_strong_u = segs.size();
        segs.push_back({&views.strong_unlabeled, 1});
    }
    if (r.style_view) {
        seg_style_l = segs.size();
        segs.push_back({&views.style_labeled, 2});
        seg_style_u = segs.size();
        segs.push_back({&views.style_unlabeled, 2});
    }
    std::vector<const Image*> batch;
    for (auto& s : segs) {
        s.offset = batch.size();
        for (const auto& img : *s.images) batch.push_back(&img);
    }
    if (r.strong_view && (views.strong_labeled.size() != n_l || views.strong_unlabeled.size() != n_u))
        throw TrainerError("strong views do not pair with weak views");
    if (r.style_view && (views.style_labeled.size() != n_l || views.style_unlabeled.size() != n_u))
        throw TrainerError("style views do not pair with weak views");

    const auto& encoder = model.encoder();
    const ParamSet<Real>& params = model.params();
    EncoderCache<Real> cache;
    const Mat<Real> input = encoder.prepare_input(batch);
    const Mat<Real> features = encoder.forward(params, input, static_cast<int>(batch.size()), &cache);

    std::vector<CosineCache<Real>> caches(segs.size());
    std::vector<Mat<Real>> probs(segs.size());
    for (std::size_t s = 0; s < segs.size(); ++s) {
        const auto rows = static_cast<Eigen::Index>(segs[s].images->size());
        if (rows == 0) continue;
        const Mat<Real> z = features.middleRows(static_cast<Eigen::Index>(segs[s].offset), rows);
        probs[s] = softmax_copy(cosine_logits(z, protos[segs[s].group], temperature, &caches[s]));
    }

    // Weak-view probabilities of the unlabeled stream: from the gradient batch
    // when it carries them, otherwise from a separate no-grad forward.
    Mat<Real> weak_u_probs;
    if (n_u > 0) {
        if (weak_u_grad) {
            weak_u_probs = probs[seg_weak_u];
        } else {
            const Mat<Real> zu = encoder.encode(params, pointers(views.weak_unlabeled));
            weak_u_probs = softmax_copy(cosine_logits(zu, protos[0], temperature));
        }
    }

    const double pi = config.confidence_threshold;
    std::vector<PseudoLabel> targets = make_pseudo_labels(probs[0], pi);
    if (n_u > 0) {
        auto tu = make_pseudo_labels(weak_u_probs, pi);
        targets.insert(targets.end(), tu.begin(), tu.end());
    }

    StepOutput out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        PseudoLabelDiagnostic d;
        d.label = targets[i];
        d.unlabeled_stream = i >= n_l;
        d.hidden_label = i < n_l ? views.labels[i]
                                 : (i - n_l < views.hidden_labels.size() ? views.hidden_labels[i - n_l] : -1);
        out.pseudo_labels.push_back(d);
    }

    std::vector<Mat<Real>> grad_logits(segs.size());
    for (std::size_t s = 0; s < segs.size(); ++s)
        grad_logits[s] = Mat<Real>::Zero(probs[s].rows(), probs[s].cols());

    const auto lab = labeled_loss(probs[0], std::span<const int>(views.labels));
    out.losses.labeled = lab.loss;
    grad_logits[0] += lab.grad_logits;

    const std::size_t divisor = views.pseudo_label_divisor.value_or(n_l + n_u);
    auto pseudo_term = [&](std::size_t seg_l, std::size_t seg_u) {
        Mat<Real> stacked(static_cast<Eigen::Index>(n_l + n_u), num_classes);
        stacked.topRows(static_cast<Eigen::Index>(n_l)) = probs[seg_l];
        if (n_u > 0) stacked.bottomRows(static_cast<Eigen::Index>(n_u)) = probs[seg_u];
        auto res = thresholded_pseudo_label_loss(stacked, std::span<const PseudoLabel>(targets), divisor);
        grad_logits[seg_l] += res.grad_logits.topRows(static_cast<Eigen::Index>(n_l));
        if (n_u > 0) grad_logits[seg_u] += res.grad_logits.bottomRows(static_cast<Eigen::Index>(n_u));
        return static_cast<double>(res.loss);
    };
    if (r.strong_view) out.losses.strong = pseudo_term(seg_strong_l, seg_strong_u);
    if (r.style_view) out.losses.style = pseudo_term(seg_style_l, seg_style_u);

    if (r.entropy && n_u > 0) {
        const auto ent = entropy_loss(probs[seg_weak_u]);
        out.losses.entropy = ent.loss;
        grad_logits[seg_weak_u] += static_cast<Real>(config.entmin_weight) * ent.grad_logits;
    }
    if (r.teacher) {
        if (!teacher) throw TrainerError("meanteacher step needs teacher parameters");
        if (views.teacher_labeled.size() != n_l || views.teacher_unlabeled.size() != n_u)
            throw TrainerError("teacher views do not pair with weak views");
        std::vector<const Image*> tb = pointers(views.teacher_labeled);
        for (const auto& img : views.teacher_unlabeled) tb.push_back(&img);
        const Mat<Real> zt = encoder.encode(*teacher, tb);
        const auto& tmu = (*teacher)[model.mu_index()];
        const Mat<Real> teacher_protos = tmu.matrix();
        const Mat<Real> tprobs = softmax_copy(cosine_logits(zt, teacher_protos, temperature));
        Mat<Real> student(static_cast<Eigen::Index>(n_l + n_u), num_classes);
        student.topRows(static_cast<Eigen::Index>(n_l)) = probs[0];
        if (n_u > 0) student.bottomRows(static_cast<Eigen::Index>(n_u)) = probs[seg_weak_u];
        const auto cons = consistency_mse(student, tprobs);
        out.losses.consistency = cons.loss;
        const auto w = static_cast<Real>(config.consistency_weight);
        grad_logits[0] += w * cons.grad_logits.topRows(static_cast<Eigen::Index>(n_l));
        if (n_u > 0) grad_logits[seg_weak_u] += w * cons.grad_logits.bottomRows(static_cast<Eigen::Index>(n_u));
    }

    LossWeights weights{config.entmin_weight, config.consistency_weight};
    out.loss_total = total_loss(out.losses, config.method, weights);
    if (!std::isfinite(out.loss_total)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (labeled=" << out.losses.labeled
            << " strong=" << out.losses.strong << " style=" << out.losses.style
            << " entropy=" << out.losses.entropy << " consistency=" << out.losses.consistency << ")";
        throw TrainerError(msg.str());
    }

    // Backward.
    StepGradients result{params.zeros_like(), std::move(out)};
    std::vector<Mat<Real>> grad_protos(3);
    for (auto& g : grad_protos) g = Mat<Real>::Zero(num_classes, dim);
    Mat<Real> grad_features = Mat<Real>::Zero(features.rows(), features.cols());
    for (std::size_t s = 0; s < segs.size(); ++s) {
        const auto rows = static_cast<Eigen::Index>(segs[s].images->size());
        if (rows == 0) continue;
        grad_features.middleRows(static_cast<Eigen::Index>(segs[s].offset), rows) =
            cosine_logits_backward(caches[s], grad_logits[s], grad_protos[segs[s].group]);
    }
    Mat<Real> grad_mu = Mat<Real>::Zero(num_classes, dim);
    Mat<Real> grad_sigma = Mat<Real>::Zero(num_classes, dim);
    for (std::size_t g = 0; g < 3; ++g) {
        if (r.stochastic_classifier)
            sample_prototypes_backward(head, noise[g], grad_protos[g], grad_mu, grad_sigma);
        else
            grad_mu += grad_protos[g];
    }
    result.grads[model.mu_index()].matrix() += grad_mu;
    result.grads[model.sigma_index()].matrix() += grad_sigma;
    encoder.backward(params, cache, grad_features, result.grads);
    return result;
}

inline MetricRecord make_metric_record(const StepOutput& out, long step, const TrainConfig& config,
                                       double mean_sigma) {
    MetricRecord rec;
    rec.step = step;
    std::vector<PseudoLabelDiagnostic> diag;
    for (const auto& d : out.pseudo_labels)
        if (config.metrics_both_streams || d.unlabeled_stream) diag.push_back(d);
    if (!diag.empty()) {
        rec.pseudo_label_accuracy = pseudo_label_accuracy(diag, config.metrics_only_passing);
        rec.overconfidence_rate = overconfidence_rate(diag, config.confidence_threshold);
    }
    rec.loss_labeled = out.losses.labeled;
    rec.loss_strong = out.losses.strong;
    rec.loss_style = out.losses.style;
    rec.loss_total = out.loss_total;
    rec.learning_rate = out.lr_backbone;
    rec.mean_sigma = mean_sigma;
    return rec;
}

// Applies precomputed gradients at the scheduled learning rates.
inline void apply_update(TrainState& state, const ParamSet<Real>& grads, const TrainConfig& config,
                         StepOutput& out) {
    out.lr_backbone = lr_schedule(state.step, config.steps, config.lr_backbone);
    out.lr_classifier = lr_schedule(state.step, config.steps, config.lr_classifier);
    state.optimizer.step(state.model.params(), grads, out.lr_backbone, out.lr_classifier);
    if (state.teacher) ema_update(*state.teacher, state.model.params(), config.ema_decay);
    ++state.step;
}

inline StepOutput train_step(const BatchBundle& bundle, TrainState& state, const TrainConfig& config,
                             const SSDGSplit& split, const AugmentationPolicy& policy) {
    if (state.step >= config.steps) throw TrainerError("train_step: step budget exhausted");
    const ViewBundle views = build_views(bundle, split, policy, config, state.step);
    StepGradients g = compute_step_gradients(state.model, views, config, state.step,
                                             state.teacher ? &*state.teacher : nullptr);
    const long step = state.step;
    apply_update(state, g.grads, config, g.output);
    g.output.record = make_metric_record(g.output, step, config, trainer_detail::mean_effective_std(state.model));
    return std::move(g.output);
}

// Top-1 accuracy with mean prototypes and no augmentation.
template <typename Examples>
double evaluate(const Model<Real>& model, const Examples& examples) {
    if (examples.empty()) throw TrainerError("evaluate: empty evaluation set");
    constexpr std::size_t chunk = 256;
    std::size_t correct = 0;
    std::vector<const Image*> batch;
    std::vector<int> labels;
    auto flush = [&]() {
        if (batch.empty()) return;
        const auto pred = model.predict(batch);
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == labels[i]) ++correct;
        batch.clear();
        labels.clear();
    };
    for (const auto& e : examples) {
        batch.push_back(e.image.get());
        labels.push_back(e.label);
        if (batch.size() == chunk) flush();
    }
    flush();
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

// Per-channel mean/std over every source image of the split.
inline std::pair<std::vector<float>, std::vector<float>> source_input_statistics(const SSDGSplit& split) {
    std::vector<double> sum(3, 0.0), sq(3, 0.0);
    double count = 0.0;
    int channels = 0;
    for (const auto& s : split.sources)
        for (std::size_t i = 0; i < s.pool_size(); ++i) {
            const Image& img = *s.pool_image(i);
            channels = img.channels;
            if (sum.size() != static_cast<std::size_t>(channels)) {
                sum.assign(static_cast<std::size_t>(channels), 0.0);
                sq.assign(static_cast<std::size_t>(channels), 0.0);
            }
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    for (int c = 0; c < channels; ++c) {
                        const double v = img.at(y, x, c);
                        sum[static_cast<std::size_t>(c)] += v;
                        sq[static_cast<std::size_t>(c)] += v * v;
                    }
            count += static_cast<double>(img.height) * img.width;
        }
    std::vector<float> mean(sum.size()), std_dev(sum.size());
    for (std::size_t c = 0; c < sum.size(); ++c) {
        const double m = count > 0 ? sum[c] / count : 0.5;
        const double var = count > 0 ? sq[c] / count - m * m : 0.0625;
        mean[c] = static_cast<float>(m);
        std_dev[c] = static_cast<float>(std::sqrt(std::max(var, 1e-6)));
    }
    return {mean, std_dev};
}

struct TrainResult {
    Model<Real> model;
    std::vector<MetricRecord> log;
    std::vector<std::string> warnings;
    double initial_mean_sigma = 0.0;
};

struct TrainHooks {
    std::function<void(const MetricRecord&)> on_step;
    // Called with the model after every `checkpoint_interval` completed steps.
    std::function<void(const Model<Real>&, long)> on_checkpoint;
    long checkpoint_interval = 0;
};

// Full run on one split.
inline TrainResult run_training(const SSDGSplit& split, const EncoderSpec& encoder_spec,
                                const TrainConfig& config, const AugmentationPolicy& policy,
                                const TrainHooks& hooks = {}) {
    config.validate();
    policy.validate();
    Model<Real> model(encoder_spec, split.num_classes, static_cast<Real>(config.temperature),
                      derive_seed(config.seed, 0x40DE1ull));
    auto [mean, std_dev] = source_input_statistics(split);
    model.set_input_statistics(mean, std_dev);
    TrainState state(std::move(model), config);
    TrainResult result;
    result.initial_mean_sigma = trainer_detail::mean_effective_std(state.model);
    BatchStream stream(split, config.batch_labeled, config.batch_unlabeled, derive_seed(config.seed, 0xBA7C4ull));
    if (config.recipe().style_view && policy.style.mode == StyleMode::cross_domain && split.num_sources() < 2)
        result.warnings.push_back("cross_domain style mixing needs >= 2 source domains; using within_domain");
    result.log.reserve(static_cast<std::size_t>(config.steps));
    while (state.step < config.steps) {
        const BatchBundle bundle = stream.next();
        StepOutput out = train_step(bundle, state, config, split, policy);
        if (hooks.on_step) hooks.on_step(out.record);
        result.log.push_back(out.record);
        if (hooks.on_checkpoint && hooks.checkpoint_interval > 0 && state.step % hooks.checkpoint_interval == 0 &&
            state.step < config.steps)
            hooks.on_checkpoint(state.model, state.step);
    }
    result.model = std::move(state.model);
    return result;
}

} // namespace ssdg
