#pragma once

#include "classifier.hpp"
#include "encoder.hpp"
#include "image.hpp"
#include "params.hpp"

#include <span>
#include <vector>

namespace ssdg {

// Encoder plus cosine-prototype head. All learnable state lives in `params`
// (encoder.block{i}.*, classifier.mu, classifier.sigma_raw) so a Model copy
// is an immutable snapshot, and optimizers/EMA/checkpoints walk one layout.
template <typename T>
class Model {
public:
    Model() = default;

    Model(EncoderSpec spec, int num_classes, T temperature, std::uint64_t seed)
        : num_classes_(num_classes), temperature_(temperature) {
        if (num_classes < 1) throw ModelError("num_classes must be positive");
        if (!(temperature > T(0))) throw ModelError("temperature must be positive");
        Rng rng(derive_seed(seed, 0xE2C0DEull));
        encoder_ = Encoder<T>(std::move(spec), params_, rng);
        const int dim = encoder_.output_dim();
        const auto head = init_classifier<T>(num_classes, dim, seed, temperature);
        mu_ = params_.add("classifier.mu", {num_classes, dim}, ParamGroup::classifier, true);
        sigma_ = params_.add("classifier.sigma_raw", {num_classes, dim}, ParamGroup::classifier, false);
        params_[mu_].matrix() = head.mu;
        params_[sigma_].matrix() = head.sigma_raw;
    }

    int num_classes() const { return num_classes_; }
    int feature_dim() const { return encoder_.output_dim(); }
    T temperature() const { return temperature_; }
    const EncoderSpec& encoder_spec() const { return encoder_.spec(); }
    void set_input_statistics(std::vector<float> mean, std::vector<float> std_dev) {
        encoder_.spec().input_mean = std::move(mean);
        encoder_.spec().input_std = std::move(std_dev);
        encoder_.spec().validate();
    }

    const Encoder<T>& encoder() const { return encoder_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    std::size_t mu_index() const { return mu_; }
    std::size_t sigma_index() const { return sigma_; }

    StochasticClassifierParams<T> classifier() const {
        StochasticClassifierParams<T> p;
        p.mu = params_[mu_].matrix();
        p.sigma_raw = params_[sigma_].matrix();
        p.temperature = temperature_;
        return p;
    }

    Mat<T> encode(std::span<const Image* const> images) const { return encoder_.encode(params_, images); }

    // Evaluation-mode class probabilities (mean prototypes, no sampling).
    Mat<T> predict_proba(std::span<const Image* const> images) const {
        Mat<T> logits = cosine_logits(encode(images), mean_prototypes(classifier()), temperature_);
        softmax_rows_inplace(logits);
        return logits;
    }

    std::vector<int> predict(std::span<const Image* const> images) const {
        const Mat<T> logits = cosine_logits(encode(images), mean_prototypes(classifier()), temperature_);
        std::vector<int> out(static_cast<std::size_t>(logits.rows()));
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            Eigen::Index arg = 0;
            logits.row(i).maxCoeff(&arg);
            out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        }
        return out;
    }

private:
    int num_classes_ = 0;
    T temperature_ = T(0.05);
    ParamSet<T> params_;
    Encoder<T> encoder_;
    std::size_t mu_ = 0;
    std::size_t sigma_ = 0;
};

} // namespace ssdg
