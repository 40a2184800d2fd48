#pragma once

// Fixtures shared by the trainer tests and the acceptance binary.

#include "ssdg/synthetic.hpp"
#include "ssdg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ssdg::testing {

inline SynthConfig tiny_synth(int image_size = 8, int per_class = 12) {
    SynthConfig c;
    c.image_size = image_size;
    c.samples_per_class_per_domain = per_class;
    return c;
}

inline EncoderSpec tiny_encoder(int image_size = 8) {
    EncoderSpec e;
    e.input_size = image_size;
    e.widths = {8, 16};
    e.norm_groups = 2;
    return e;
}

// Unlabeled-stream pseudo-label confidences of a step.
inline std::vector<double> unlabeled_confidences(const StepOutput& out) {
    std::vector<double> c;
    for (const auto& d : out.pseudo_labels)
        if (d.unlabeled_stream) c.push_back(d.label.confidence);
    return c;
}

// Bisects the softmax temperature until the median unlabeled confidence sits
// at `threshold`, so the batch straddles it.
inline double straddling_temperature(const Model<Real>& model, const ViewBundle& views, TrainConfig config,
                                     double threshold) {
    double lo = 1e-3, hi = 2.0;
    for (int it = 0; it < 60; ++it) {
        config.temperature = std::sqrt(lo * hi);
        auto c = unlabeled_confidences(compute_step_gradients(model, views, config, 0).output);
        std::nth_element(c.begin(), c.begin() + static_cast<long>(c.size() / 2), c.end());
        if (c[c.size() / 2] > threshold)
            lo = config.temperature;
        else
            hi = config.temperature;
    }
    return std::sqrt(lo * hi);
}

// Keeps only the unlabeled examples whose mask entry is true.
inline ViewBundle keep_unlabeled(const ViewBundle& v, const std::vector<bool>& keep) {
    ViewBundle out = v;
    auto filter = [&](auto& dst, const auto& src) {
        dst.clear();
        if (src.empty()) return;
        for (std::size_t i = 0; i < src.size(); ++i)
            if (keep[i]) dst.push_back(src[i]);
    };
    filter(out.weak_unlabeled, v.weak_unlabeled);
    filter(out.hidden_labels, v.hidden_labels);
    filter(out.strong_unlabeled, v.strong_unlabeled);
    filter(out.style_unlabeled, v.style_unlabeled);
    filter(out.teacher_unlabeled, v.teacher_unlabeled);
    return out;
}

struct RemovalCheck {
    std::size_t passing = 0;
    std::size_t failing = 0;
    bool predicate_exact = true;     // passes <=> confidence >= threshold, every example
    bool same_passing_set = true;    // after removal
    double max_update_diff = 0.0;    // first-step SGD update, all parameters
};

// Computes one step on the full batch and on the batch with every
// non-passing unlabeled example removed (same loss divisor), and compares the
// resulting parameter updates.
inline RemovalCheck removal_check(const Model<Real>& model, const ViewBundle& views, const TrainConfig& config) {
    RemovalCheck r;
    const std::size_t n_l = views.weak_labeled.size();
    const std::size_t n_u = views.weak_unlabeled.size();
    const auto full = compute_step_gradients(model, views, config, 0);
    std::vector<bool> keep(n_u);
    for (std::size_t i = 0; i < full.output.pseudo_labels.size(); ++i) {
        const auto& d = full.output.pseudo_labels[i];
        if (d.label.passes != (d.label.confidence >= config.confidence_threshold)) r.predicate_exact = false;
        if (i >= n_l) {
            keep[i - n_l] = d.label.passes;
            (d.label.passes ? r.passing : r.failing)++;
        }
    }
    ViewBundle reduced = keep_unlabeled(views, keep);
    reduced.pseudo_label_divisor = n_l + n_u;
    ViewBundle full_views = views;
    full_views.pseudo_label_divisor = n_l + n_u;
    const auto a = compute_step_gradients(model, full_views, config, 0);
    const auto b = compute_step_gradients(model, reduced, config, 0);
    std::size_t j = n_l;
    for (std::size_t i = n_l; i < a.output.pseudo_labels.size(); ++i) {
        if (!a.output.pseudo_labels[i].label.passes) continue;
        if (j >= b.output.pseudo_labels.size() || !b.output.pseudo_labels[j].label.passes ||
            b.output.pseudo_labels[j].label.class_index != a.output.pseudo_labels[i].label.class_index)
            r.same_passing_set = false;
        ++j;
    }
    if (j != b.output.pseudo_labels.size()) r.same_passing_set = false;
    // Update of the first SGD step from zero velocity: lr * (g + wd * p).
    const ParamSet<Real>& p = model.params();
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double lr = p[k].group == ParamGroup::backbone ? config.lr_backbone : config.lr_classifier;
        const double wd = p[k].weight_decay ? config.weight_decay : 0.0;
        for (std::size_t i = 0; i < p[k].values.size(); ++i) {
            const double ua = lr * (a.grads[k].values[i] + wd * p[k].values[i]);
            const double ub = lr * (b.grads[k].values[i] + wd * p[k].values[i]);
            r.max_update_diff = std::max(r.max_update_diff, std::abs(ua - ub));
        }
    }
    return r;
}

} // namespace ssdg::testing
