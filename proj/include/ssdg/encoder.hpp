#pragma once

// Convolutional feature extractor. Activations are kept channel-major as a
// (channels x batch*height*width) row-major matrix so that every 3x3
// convolution is a single GEMM against an im2col buffer.
//
// Block: conv3x3 (no bias) -> GroupNorm (affine) -> ReLU -> 2x2 average pool.
// The last block is followed by global average pooling, giving D = widths.back().
// GroupNorm normalizes each sample independently, so the forward pass of an
// example never depends on the rest of the batch and training and evaluation
// modes coincide.

#include "errors.hpp"
#include "image.hpp"
#include "params.hpp"
#include "rng.hpp"

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace ssdg {

struct EncoderSpec {
    int in_channels = 3;
    int input_size = 32;
    std::vector<int> widths{32, 64, 128, 128};
    int norm_groups = 8;
    std::vector<float> input_mean{0.5f, 0.5f, 0.5f};
    std::vector<float> input_std{0.25f, 0.25f, 0.25f};

    int output_dim() const { return widths.empty() ? 0 : widths.back(); }

    void validate() const {
        if (in_channels <= 0 || input_size <= 0) throw ModelError("encoder input dimensions must be positive");
        if (widths.empty()) throw ModelError("encoder needs at least one block");
        int size = input_size;
        for (int w : widths) {
            if (w <= 0) throw ModelError("encoder widths must be positive");
            if (size % 2 != 0) throw ModelError("input_size must stay even through every pooling stage");
            size /= 2;
            if (groups_for(w) <= 0 || w % groups_for(w) != 0)
                throw ModelError("norm_groups must divide every width");
        }
        if (static_cast<int>(input_mean.size()) != in_channels || static_cast<int>(input_std.size()) != in_channels)
            throw ModelError("input normalization statistics must have one entry per channel");
        for (float s : input_std)
            if (!(s > 0.0f)) throw ModelError("input_std entries must be positive");
    }

    int groups_for(int width) const { return std::min(norm_groups, width); }
};

template <typename T>
struct EncoderBlockCache {
    int height = 0;  // spatial size at the block input
    int width = 0;
    Mat<T> col;      // im2col buffer (cin*9 x n*h*w)
    Mat<T> xhat;     // normalized conv output (cout x n*h*w)
    std::vector<T> inv_std;  // per (sample, group)
    Mat<T> act;      // post-ReLU activations (cout x n*h*w)
};

template <typename T>
struct EncoderCache {
    int batch = 0;
    std::vector<EncoderBlockCache<T>> blocks;
    int final_hw = 0;
};

namespace detail {

// col(ci*9 + ky*3 + kx, n*hw + y*w + x) = in(ci, n*hw + (y+ky-1)*w + (x+kx-1)), zero padded.
template <typename T>
void im2col3x3(const Mat<T>& in, int batch, int h, int w, Mat<T>& col) {
    const int cin = static_cast<int>(in.rows());
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    col.setZero(static_cast<Eigen::Index>(cin) * 9, hw * batch);
    for (int ci = 0; ci < cin; ++ci) {
        const T* src = in.row(ci).data();
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col.row(ci * 9 + ky * 3 + kx).data();
                const int dy = ky - 1;
                const int dx = kx - 1;
                const int x_lo = std::max(0, -dx);
                const int x_hi = std::min(w, w - dx);
                for (int n = 0; n < batch; ++n) {
                    const T* s = src + n * hw;
                    T* d = dst + n * hw;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) continue;
                        const T* srow = s + static_cast<Eigen::Index>(sy) * w + dx;
                        T* drow = d + static_cast<Eigen::Index>(y) * w;
                        for (int x = x_lo; x < x_hi; ++x) drow[x] = srow[x];
                    }
                }
            }
    }
}

template <typename T>
void col2im3x3(const Mat<T>& col, int batch, int h, int w, Mat<T>& out) {
    const int cin = static_cast<int>(col.rows() / 9);
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    out.setZero(cin, hw * batch);
    for (int ci = 0; ci < cin; ++ci) {
        T* dst = out.row(ci).data();
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col.row(ci * 9 + ky * 3 + kx).data();
                const int dy = ky - 1;
                const int dx = kx - 1;
                const int x_lo = std::max(0, -dx);
                const int x_hi = std::min(w, w - dx);
                for (int n = 0; n < batch; ++n) {
                    const T* s = src + n * hw;
                    T* d = dst + n * hw;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) continue;
                        const T* srow = s + static_cast<Eigen::Index>(y) * w;
                        T* drow = d + static_cast<Eigen::Index>(sy) * w + dx;
                        for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
                    }
                }
            }
    }
}

template <typename T>
Mat<T> avg_pool2(const Mat<T>& in, int batch, int h, int w) {
    const int oh = h / 2;
    const int ow = w / 2;
    Mat<T> out(in.rows(), static_cast<Eigen::Index>(batch) * oh * ow);
    for (Eigen::Index c = 0; c < in.rows(); ++c) {
        const T* s = in.row(c).data();
        T* d = out.row(c).data();
        for (int n = 0; n < batch; ++n) {
            const T* sn = s + static_cast<Eigen::Index>(n) * h * w;
            T* dn = d + static_cast<Eigen::Index>(n) * oh * ow;
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const T* p = sn + static_cast<Eigen::Index>(2 * y) * w + 2 * x;
                    dn[y * ow + x] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
                }
        }
    }
    return out;
}

template <typename T>
Mat<T> avg_pool2_backward(const Mat<T>& grad_out, int batch, int h, int w) {
    const int oh = h / 2;
    const int ow = w / 2;
    Mat<T> grad_in(grad_out.rows(), static_cast<Eigen::Index>(batch) * h * w);
    for (Eigen::Index c = 0; c < grad_out.rows(); ++c) {
        const T* g = grad_out.row(c).data();
        T* d = grad_in.row(c).data();
        for (int n = 0; n < batch; ++n) {
            const T* gn = g + static_cast<Eigen::Index>(n) * oh * ow;
            T* dn = d + static_cast<Eigen::Index>(n) * h * w;
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const T v = T(0.25) * gn[y * ow + x];
                    T* p = dn + static_cast<Eigen::Index>(2 * y) * w + 2 * x;
                    p[0] = v;
                    p[1] = v;
                    p[w] = v;
                    p[w + 1] = v;
                }
        }
    }
    return grad_in;
}

} // namespace detail

template <typename T>
class Encoder {
public:
    static constexpr T norm_eps = T(1e-5);

    Encoder() = default;

    // Registers the encoder's parameters in `params` under encoder.block{i}.*
    // and initializes them (He-normal conv weights, unit/zero norm affine).
    Encoder(EncoderSpec spec, ParamSet<T>& params, Rng& rng) : spec_(std::move(spec)) {
        spec_.validate();
        int cin = spec_.in_channels;
        for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
            const int cout = spec_.widths[i];
            const std::string prefix = "encoder.block" + std::to_string(i) + ".";
            BlockIndex b;
            b.conv = params.add(prefix + "conv.weight", {cout, cin, 3, 3}, ParamGroup::backbone, true);
            b.gamma = params.add(prefix + "norm.weight", {cout}, ParamGroup::backbone, true, T(1));
            b.beta = params.add(prefix + "norm.bias", {cout}, ParamGroup::backbone, true, T(0));
            const double std_dev = std::sqrt(2.0 / (cin * 9.0));
            for (auto& v : params[b.conv].values) v = static_cast<T>(rng.normal(0.0, std_dev));
            blocks_.push_back(b);
            cin = cout;
        }
    }

    const EncoderSpec& spec() const { return spec_; }
    EncoderSpec& spec() { return spec_; }
    int output_dim() const { return spec_.output_dim(); }

    // Converts images to the normalized channel-major input layout.
    Mat<T> prepare_input(std::span<const Image* const> images) const {
        const int s = spec_.input_size;
        const int c = spec_.in_channels;
        const Eigen::Index hw = static_cast<Eigen::Index>(s) * s;
        Mat<T> in(c, hw * static_cast<Eigen::Index>(images.size()));
        for (std::size_t n = 0; n < images.size(); ++n) {
            const Image& img = *images[n];
            if (img.height != s || img.width != s || img.channels != c)
                throw ModelError("image shape does not match encoder input");
            for (int ch = 0; ch < c; ++ch) {
                const T mean = static_cast<T>(spec_.input_mean[static_cast<std::size_t>(ch)]);
                const T inv = T(1) / static_cast<T>(spec_.input_std[static_cast<std::size_t>(ch)]);
                T* dst = in.row(ch).data() + static_cast<Eigen::Index>(n) * hw;
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x) dst[y * s + x] = (static_cast<T>(img.at(y, x, ch)) - mean) * inv;
            }
        }
        return in;
    }

    // Returns features as a (batch x D) matrix. Fills `cache` when given.
    Mat<T> forward(const ParamSet<T>& params, const Mat<T>& input, int batch, EncoderCache<T>* cache) const {
        const Eigen::Index expected = static_cast<Eigen::Index>(batch) * spec_.input_size * spec_.input_size;
        if (input.rows() != spec_.in_channels || input.cols() != expected)
            throw ModelError("encoder input has wrong shape");
        if (cache) {
            cache->batch = batch;
            cache->blocks.assign(blocks_.size(), {});
        }
        Mat<T> x = input;
        int h = spec_.input_size;
        int w = spec_.input_size;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            EncoderBlockCache<T> local;
            EncoderBlockCache<T>& bc = cache ? cache->blocks[i] : local;
            bc.height = h;
            bc.width = w;
            const auto& b = blocks_[i];
            detail::im2col3x3(x, batch, h, w, bc.col);
            Mat<T> y = params[b.conv].matrix() * bc.col;
            group_norm_forward(params, b, y, batch, h * w, bc);
            bc.act = y.cwiseMax(T(0));
            x = detail::avg_pool2(bc.act, batch, h, w);
            if (!cache) {
                bc.col.resize(0, 0);
                bc.act.resize(0, 0);
                bc.xhat.resize(0, 0);
            }
            h /= 2;
            w /= 2;
        }
        const int hw = h * w;
        if (cache) cache->final_hw = hw;
        Mat<T> features(batch, x.rows());
        for (Eigen::Index c = 0; c < x.rows(); ++c)
            for (int n = 0; n < batch; ++n)
                features(n, c) = x.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw).mean();
        return features;
    }

    // Accumulates parameter gradients into `grads` given dL/dfeatures.
    void backward(const ParamSet<T>& params, const EncoderCache<T>& cache, const Mat<T>& grad_features,
                  ParamSet<T>& grads) const {
        const int batch = cache.batch;
        const int hw = cache.final_hw;
        if (grad_features.rows() != batch || grad_features.cols() != output_dim())
            throw ModelError("feature gradient has wrong shape");
        Mat<T> g(output_dim(), static_cast<Eigen::Index>(batch) * hw);
        for (Eigen::Index c = 0; c < g.rows(); ++c)
            for (int n = 0; n < batch; ++n)
                g.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw).setConstant(grad_features(n, c) / T(hw));

        for (std::size_t i = blocks_.size(); i-- > 0;) {
            const auto& b = blocks_[i];
            const auto& bc = cache.blocks[i];
            const int h = bc.height;
            const int w = bc.width;
            Mat<T> ga = detail::avg_pool2_backward(g, batch, h, w);
            ga = ga.cwiseProduct((bc.act.array() > T(0)).template cast<T>().matrix());
            Mat<T> gy = group_norm_backward(params, grads, b, bc, ga, batch, h * w);
            grads[b.conv].matrix().noalias() += gy * bc.col.transpose();
            if (i > 0) {
                Mat<T> gcol = params[b.conv].matrix().transpose() * gy;
                detail::col2im3x3(gcol, batch, h, w, g);
            }
        }
    }

    Mat<T> encode(const ParamSet<T>& params, std::span<const Image* const> images) const {
        const Mat<T> in = prepare_input(images);
        return forward(params, in, static_cast<int>(images.size()), nullptr);
    }

private:
    struct BlockIndex {
        std::size_t conv = 0;
        std::size_t gamma = 0;
        std::size_t beta = 0;
    };

    void group_norm_forward(const ParamSet<T>& params, const BlockIndex& b, Mat<T>& y, int batch, int hw,
                            EncoderBlockCache<T>& bc) const {
        const int channels = static_cast<int>(y.rows());
        const int groups = spec_.groups_for(channels);
        const int per_group = channels / groups;
        const auto& gamma = params[b.gamma].values;
        const auto& beta = params[b.beta].values;
        bc.inv_std.assign(static_cast<std::size_t>(batch) * groups, T(0));
        bc.xhat.resize(y.rows(), y.cols());
        const T count = static_cast<T>(per_group) * static_cast<T>(hw);
        for (int n = 0; n < batch; ++n)
            for (int g = 0; g < groups; ++g) {
                T sum = 0;
                for (int c = g * per_group; c < (g + 1) * per_group; ++c)
                    sum += y.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw).sum();
                const T mean = sum / count;
                T var = 0;
                for (int c = g * per_group; c < (g + 1) * per_group; ++c)
                    var += (y.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw).array() - mean).square().sum();
                var /= count;
                const T inv = T(1) / std::sqrt(var + norm_eps);
                bc.inv_std[static_cast<std::size_t>(n * groups + g)] = inv;
                for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
                    auto seg = y.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw);
                    auto xh = bc.xhat.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw);
                    xh = ((seg.array() - mean) * inv).matrix();
                    seg = (xh.array() * gamma[static_cast<std::size_t>(c)] + beta[static_cast<std::size_t>(c)]).matrix();
                }
            }
    }

    Mat<T> group_norm_backward(const ParamSet<T>& params, ParamSet<T>& grads, const BlockIndex& b,
                               const EncoderBlockCache<T>& bc, const Mat<T>& grad_out, int batch, int hw) const {
        const int channels = static_cast<int>(grad_out.rows());
        const int groups = spec_.groups_for(channels);
        const int per_group = channels / groups;
        const auto& gamma = params[b.gamma].values;
        auto& dgamma = grads[b.gamma].values;
        auto& dbeta = grads[b.beta].values;
        Mat<T> grad_in(grad_out.rows(), grad_out.cols());
        const T count = static_cast<T>(per_group) * static_cast<T>(hw);
        for (int n = 0; n < batch; ++n)
            for (int g = 0; g < groups; ++g) {
                T mean_dxhat = 0;
                T mean_dxhat_xhat = 0;
                for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
                    const auto go = grad_out.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw);
                    const auto xh = bc.xhat.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw);
                    const T s_go = go.sum();
                    const T s_go_xh = go.dot(xh);
                    dgamma[static_cast<std::size_t>(c)] += s_go_xh;
                    dbeta[static_cast<std::size_t>(c)] += s_go;
                    mean_dxhat += gamma[static_cast<std::size_t>(c)] * s_go;
                    mean_dxhat_xhat += gamma[static_cast<std::size_t>(c)] * s_go_xh;
                }
                mean_dxhat /= count;
                mean_dxhat_xhat /= count;
                const T inv = bc.inv_std[static_cast<std::size_t>(n * groups + g)];
                for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
                    const auto go = grad_out.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw);
                    const auto xh = bc.xhat.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw);
                    grad_in.row(c).segment(static_cast<Eigen::Index>(n) * hw, hw) =
                        (inv * (go.array() * gamma[static_cast<std::size_t>(c)] - mean_dxhat -
                                xh.array() * mean_dxhat_xhat))
                            .matrix();
                }
            }
        return grad_in;
    }

    EncoderSpec spec_;
    std::vector<BlockIndex> blocks_;
};

} // namespace ssdg
