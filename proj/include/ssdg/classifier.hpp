#pragma once

// Stochastic cosine-prototype classifier.
//
// Each class c owns a Gaussian over its prototype vector with mean mu_c and
// standard deviation softplus(sigma_raw_c). During training one prototype
// matrix is drawn per step as w = mu + softplus(sigma_raw) * noise; at test
// time the means are used directly. Scores are cosine similarities divided by
// a fixed temperature, followed by a softmax. There is no bias term.

#include "errors.hpp"
#include "params.hpp"
#include "rng.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace ssdg {

template <typename T>
T softplus(T x) {
    // log(1 + e^x) without overflow for large |x|.
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
struct StochasticClassifierParams {
    Mat<T> mu;         // C x D
    Mat<T> sigma_raw;  // C x D, effective std = softplus(sigma_raw)
    T temperature = T(0.05);

    int num_classes() const { return static_cast<int>(mu.rows()); }
    int dim() const { return static_cast<int>(mu.cols()); }

    void validate() const {
        if (mu.rows() != sigma_raw.rows() || mu.cols() != sigma_raw.cols())
            throw ModelError("classifier mu and sigma_raw shapes disagree");
        if (!(temperature > T(0))) throw ModelError("temperature must be positive");
    }
};

// mu ~ N(0, 1/D), sigma_raw = -4 (effective std softplus(-4) ~ 0.018).
template <typename T>
StochasticClassifierParams<T> init_classifier(int num_classes, int dim, std::uint64_t seed, T temperature = T(0.05)) {
    if (num_classes < 1 || dim < 1) throw ModelError("classifier dimensions must be positive");
    StochasticClassifierParams<T> p;
    Rng rng(derive_seed(seed, 0xC1A55ull));
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(dim));
    p.mu.resize(num_classes, dim);
    for (Eigen::Index i = 0; i < p.mu.size(); ++i) p.mu.data()[i] = static_cast<T>(rng.normal(0.0, std_dev));
    p.sigma_raw = Mat<T>::Constant(num_classes, dim, T(-4));
    p.temperature = temperature;
    return p;
}

// Standard-normal noise for one training step.
template <typename T>
Mat<T> draw_prototype_noise(int num_classes, int dim, Rng& rng) {
    Mat<T> noise(num_classes, dim);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<T>(rng.normal());
    return noise;
}

template <typename T>
Mat<T> effective_std(const Mat<T>& sigma_raw) {
    return sigma_raw.unaryExpr([](T v) { return softplus(v); });
}

// w = mu + softplus(sigma_raw) * noise, elementwise.
template <typename T>
Mat<T> sample_prototypes(const StochasticClassifierParams<T>& params, const Mat<T>& noise) {
    params.validate();
    if (noise.rows() != params.mu.rows() || noise.cols() != params.mu.cols())
        throw ModelError("prototype noise must be C x D");
    return params.mu + effective_std(params.sigma_raw).cwiseProduct(noise);
}

template <typename T>
Mat<T> mean_prototypes(const StochasticClassifierParams<T>& params) {
    return params.mu;
}

// Backpropagates dL/dW through the reparameterization.
template <typename T>
void sample_prototypes_backward(const StochasticClassifierParams<T>& params, const Mat<T>& noise,
                                const Mat<T>& grad_w, Mat<T>& grad_mu, Mat<T>& grad_sigma_raw) {
    grad_mu += grad_w;
    grad_sigma_raw += grad_w.cwiseProduct(noise).cwiseProduct(
        params.sigma_raw.unaryExpr([](T v) { return sigmoid(v); }));
}

template <typename T>
void softmax_rows_inplace(Mat<T>& logits) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        const T m = row.maxCoeff();
        row = (row.array() - m).exp().matrix();
        row /= row.sum();
    }
}

// Cosine-similarity logits for a batch: logits(i, c) = cos(z_i, w_c) / temperature.
// The cache keeps what the backward pass needs.
template <typename T>
struct CosineCache {
    Mat<T> z_unit;   // N x D
    Mat<T> w_unit;   // C x D
    std::vector<T> z_norm;
    std::vector<T> w_norm;
    Mat<T> cosine;   // N x C
    T temperature = T(1);
};

template <typename T>
Mat<T> cosine_logits(const Mat<T>& z, const Mat<T>& w, T temperature, CosineCache<T>* cache = nullptr) {
    if (z.cols() != w.cols()) throw ModelError("feature and prototype dimensions disagree");
    if (!(temperature > T(0))) throw ModelError("temperature must be positive");
    Mat<T> z_unit(z.rows(), z.cols());
    Mat<T> w_unit(w.rows(), w.cols());
    std::vector<T> z_norm(static_cast<std::size_t>(z.rows()));
    std::vector<T> w_norm(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const T n = z.row(i).norm();
        if (!(n > T(0))) throw ModelError("zero-norm feature vector; cosine undefined");
        z_norm[static_cast<std::size_t>(i)] = n;
        z_unit.row(i) = z.row(i) / n;
    }
    for (Eigen::Index c = 0; c < w.rows(); ++c) {
        const T n = w.row(c).norm();
        if (!(n > T(0))) throw ModelError("zero-norm prototype; cosine undefined");
        w_norm[static_cast<std::size_t>(c)] = n;
        w_unit.row(c) = w.row(c) / n;
    }
    Mat<T> cosine = z_unit * w_unit.transpose();
    Mat<T> logits = cosine / temperature;
    if (cache) {
        cache->z_unit = std::move(z_unit);
        cache->w_unit = std::move(w_unit);
        cache->z_norm = std::move(z_norm);
        cache->w_norm = std::move(w_norm);
        cache->cosine = std::move(cosine);
        cache->temperature = temperature;
    }
    return logits;
}

// Given dL/dlogits, returns dL/dz and accumulates dL/dw.
template <typename T>
Mat<T> cosine_logits_backward(const CosineCache<T>& cache, const Mat<T>& grad_logits, Mat<T>& grad_w) {
    const Mat<T> g = grad_logits / cache.temperature;  // dL/dcos
    const Mat<T> gc = g.cwiseProduct(cache.cosine);
    Mat<T> grad_z = g * cache.w_unit;
    for (Eigen::Index i = 0; i < grad_z.rows(); ++i) {
        grad_z.row(i) -= gc.row(i).sum() * cache.z_unit.row(i);
        grad_z.row(i) /= cache.z_norm[static_cast<std::size_t>(i)];
    }
    Mat<T> gw = g.transpose() * cache.z_unit;
    for (Eigen::Index c = 0; c < gw.rows(); ++c) {
        gw.row(c) -= gc.col(c).sum() * cache.w_unit.row(c);
        gw.row(c) /= cache.w_norm[static_cast<std::size_t>(c)];
    }
    grad_w += gw;
    return grad_z;
}

// Probability vector for a single feature vector.
template <typename T>
std::vector<T> classify(std::span<const T> z, const Mat<T>& w, T temperature) {
    Mat<T> zm(1, static_cast<Eigen::Index>(z.size()));
    for (std::size_t i = 0; i < z.size(); ++i) zm(0, static_cast<Eigen::Index>(i)) = z[i];
    Mat<T> p = cosine_logits(zm, w, temperature);
    softmax_rows_inplace(p);
    return std::vector<T>(p.data(), p.data() + p.size());
}

} // namespace ssdg
