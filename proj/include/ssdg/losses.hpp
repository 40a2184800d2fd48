#pragma once

// Loss terms of the training objective. Every function takes probability
// rows (softmax outputs) and returns the scalar loss together with its
// gradient with respect to the pre-softmax logits, so the trainer can chain
// it into cosine_logits_backward.

#include "errors.hpp"
#include "params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssdg {

enum class Method {
    vanilla,
    entmin,
    meanteacher,
    fixmatch,
    fixmatch_snn,
    stylematch,
    stylematch_strong_only,
    stylematch_style_only,
};

inline constexpr std::string_view method_name(Method m) {
    switch (m) {
        case Method::vanilla: return "vanilla";
        case Method::entmin: return "entmin";
        case Method::meanteacher: return "meanteacher";
        case Method::fixmatch: return "fixmatch";
        case Method::fixmatch_snn: return "fixmatch_snn";
        case Method::stylematch: return "stylematch";
        case Method::stylematch_strong_only: return "stylematch_strong_only";
        case Method::stylematch_style_only: return "stylematch_style_only";
    }
    return "unknown";
}

inline Method parse_method(std::string_view name) {
    for (Method m : {Method::vanilla, Method::entmin, Method::meanteacher, Method::fixmatch, Method::fixmatch_snn,
                     Method::stylematch, Method::stylematch_strong_only, Method::stylematch_style_only})
        if (method_name(m) == name) return m;
    throw ConfigError("method.method: unknown method '" + std::string(name) + "'");
}

// Which ingredients a method's recipe turns on.
struct MethodRecipe {
    bool stochastic_classifier = false;
    bool strong_view = false;
    bool style_view = false;
    bool entropy = false;
    bool teacher = false;
};

inline constexpr MethodRecipe recipe_for(Method m) {
    switch (m) {
        case Method::vanilla: return {};
        case Method::entmin: return {.entropy = true};
        case Method::meanteacher: return {.teacher = true};
        case Method::fixmatch: return {.strong_view = true};
        case Method::fixmatch_snn:
        case Method::stylematch_strong_only: return {.stochastic_classifier = true, .strong_view = true};
        case Method::stylematch: return {.stochastic_classifier = true, .strong_view = true, .style_view = true};
        case Method::stylematch_style_only: return {.stochastic_classifier = true, .style_view = true};
    }
    return {};
}

template <typename T>
struct LossWithGrad {
    T loss = T(0);
    Mat<T> grad_logits;  // same shape as the probability matrix
};

template <typename T>
void check_probability_rows(const Mat<T>& probs, const char* where) {
    if (probs.rows() == 0) throw TrainerError(std::string(where) + ": empty batch");
}

// Mean over the batch of -log p(y_i).
template <typename T>
LossWithGrad<T> labeled_loss(const Mat<T>& probs, std::span<const int> labels) {
    check_probability_rows(probs, "labeled_loss");
    if (static_cast<std::size_t>(probs.rows()) != labels.size())
        throw TrainerError("labeled_loss: label count does not match batch");
    const auto n = probs.rows();
    LossWithGrad<T> out;
    out.grad_logits = probs / static_cast<T>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= probs.cols()) throw TrainerError("labeled_loss: label out of range");
        out.loss -= std::log(std::max(probs(i, y), std::numeric_limits<T>::min()));
        out.grad_logits(i, y) -= T(1) / static_cast<T>(n);
    }
    out.loss /= static_cast<T>(n);
    return out;
}

struct PseudoLabel {
    int class_index = 0;
    double confidence = 0.0;
    bool passes = false;
};

// argmax with ties toward the lowest index; passes <=> confidence >= threshold.
template <typename T>
PseudoLabel make_pseudo_label(std::span<const T> q, double threshold) {
    if (q.empty()) throw TrainerError("make_pseudo_label: empty probability vector");
    double total = 0.0;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < q.size(); ++c) {
        total += static_cast<double>(q[c]);
        if (q[c] > q[arg]) arg = c;
    }
    if (std::abs(total - 1.0) > 1e-4) throw TrainerError("make_pseudo_label: probabilities do not sum to 1");
    const double conf = static_cast<double>(q[arg]);
    return {static_cast<int>(arg), conf, conf >= threshold};
}

template <typename T>
std::vector<PseudoLabel> make_pseudo_labels(const Mat<T>& probs, double threshold) {
    std::vector<PseudoLabel> out;
    out.reserve(static_cast<std::size_t>(probs.rows()));
    std::vector<T> row(static_cast<std::size_t>(probs.cols()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        for (Eigen::Index c = 0; c < probs.cols(); ++c) row[static_cast<std::size_t>(c)] = probs(i, c);
        out.push_back(make_pseudo_label<T>(row, threshold));
    }
    return out;
}

// -(1/divisor) * sum_i 1[passes_i] log p_i(class_i). The divisor defaults to
// the full batch size (masked mean); passing an explicit divisor lets a
// caller evaluate a sub-batch on the same scale.
template <typename T>
LossWithGrad<T> thresholded_pseudo_label_loss(const Mat<T>& probs, std::span<const PseudoLabel> targets,
                                              std::optional<std::size_t> divisor = std::nullopt) {
    check_probability_rows(probs, "pseudo-label loss");
    if (static_cast<std::size_t>(probs.rows()) != targets.size())
        throw TrainerError("pseudo-label loss: target count does not match batch");
    const T denom = static_cast<T>(divisor.value_or(targets.size()));
    if (!(denom > T(0))) throw TrainerError("pseudo-label loss: divisor must be positive");
    LossWithGrad<T> out;
    out.grad_logits = Mat<T>::Zero(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const auto& t = targets[static_cast<std::size_t>(i)];
        if (!t.passes) continue;
        out.loss -= std::log(std::max(probs(i, t.class_index), std::numeric_limits<T>::min()));
        out.grad_logits.row(i) = probs.row(i) / denom;
        out.grad_logits(i, t.class_index) -= T(1) / denom;
    }
    out.loss /= denom;
    return out;
}

// Pseudo-labels come from the weak view; the strong view is scored against them.
template <typename T>
LossWithGrad<T> strong_view_loss(const Mat<T>& strong_probs, std::span<const PseudoLabel> weak_targets) {
    return thresholded_pseudo_label_loss(strong_probs, weak_targets);
}

// Same structure as strong_view_loss with the style view in place of the strong one.
template <typename T>
LossWithGrad<T> style_view_loss(const Mat<T>& style_probs, std::span<const PseudoLabel> weak_targets) {
    return thresholded_pseudo_label_loss(style_probs, weak_targets);
}

// Mean Shannon entropy of the rows.
template <typename T>
LossWithGrad<T> entropy_loss(const Mat<T>& probs) {
    check_probability_rows(probs, "entropy_loss");
    const auto n = static_cast<T>(probs.rows());
    LossWithGrad<T> out;
    out.grad_logits.resize(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        T h = 0;
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            const T p = probs(i, c);
            if (p > T(0)) h -= p * std::log(p);
        }
        out.loss += h;
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            const T p = probs(i, c);
            const T logp = p > T(0) ? std::log(p) : T(0);
            out.grad_logits(i, c) = -p * (logp + h) / n;
        }
    }
    out.loss /= n;
    return out;
}

// Mean over rows of sum_c (p - target)^2, target held constant.
template <typename T>
LossWithGrad<T> consistency_mse(const Mat<T>& probs, const Mat<T>& target) {
    check_probability_rows(probs, "consistency_mse");
    if (probs.rows() != target.rows() || probs.cols() != target.cols())
        throw TrainerError("consistency_mse: shape mismatch");
    const auto n = static_cast<T>(probs.rows());
    const Mat<T> diff = probs - target;
    LossWithGrad<T> out;
    out.loss = diff.squaredNorm() / n;
    const Mat<T> gp = T(2) * diff / n;
    out.grad_logits.resize(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const T dot = gp.row(i).dot(probs.row(i));
        out.grad_logits.row(i) = probs.row(i).cwiseProduct((gp.row(i).array() - dot).matrix());
    }
    return out;
}

// Per-step loss components. Terms a method does not use stay at zero.
struct LossComponents {
    double labeled = 0.0;
    double strong = 0.0;
    double style = 0.0;
    double entropy = 0.0;
    double consistency = 0.0;
};

struct LossWeights {
    double entmin = 1.0;
    double consistency = 1.0;
};

// Unweighted sum for the pseudo-labelling family; the EntMin and MeanTeacher
// baselines carry their declared weights.
inline double total_loss(const LossComponents& c, Method method, const LossWeights& w = {}) {
    switch (method) {
        case Method::stylematch: return c.labeled + c.strong + c.style;
        case Method::fixmatch:
        case Method::fixmatch_snn:
        case Method::stylematch_strong_only: return c.labeled + c.strong;
        case Method::stylematch_style_only: return c.labeled + c.style;
        case Method::vanilla: return c.labeled;
        case Method::entmin: return c.labeled + w.entmin * c.entropy;
        case Method::meanteacher: return c.labeled + w.consistency * c.consistency;
    }
    throw ConfigError("unknown method");
}

} // namespace ssdg
