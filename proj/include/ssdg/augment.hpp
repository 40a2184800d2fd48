#pragma once

// View-generating transforms: weak (pad-crop + flip), strong (RandAugment-style
// op sequence + Cutout) and style (per-channel AdaIN against a partner image).
// Randomized transforms are pure functions of (input, rng state).

#include "errors.hpp"
#include "image.hpp"
#include "rng.hpp"
#include "split.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace ssdg {

enum class StyleMode { cross_domain, within_domain };

inline std::string_view style_mode_name(StyleMode m) {
    return m == StyleMode::cross_domain ? "cross_domain" : "within_domain";
}

inline StyleMode parse_style_mode(std::string_view s) {
    if (s == "cross_domain") return StyleMode::cross_domain;
    if (s == "within_domain") return StyleMode::within_domain;
    throw ConfigError("augment.style.mode: expected cross_domain or within_domain, got '" + std::string(s) + "'");
}

struct WeakPolicy {
    int crop_padding = 4;
    double flip_prob = 0.5;
};

struct StrongPolicy {
    int num_ops = 2;
    int magnitude = 9;  // on a 0..30 scale
    double cutout_fraction = 0.5;
};

struct StylePolicy {
    double epsilon = 1e-5;
    StyleMode mode = StyleMode::cross_domain;
};

struct AugmentationPolicy {
    WeakPolicy weak;
    StrongPolicy strong;
    StylePolicy style;

    void validate() const {
        if (weak.crop_padding < 0) throw ConfigError("augment.weak.crop_padding must be >= 0");
        if (weak.flip_prob < 0.0 || weak.flip_prob > 1.0) throw ConfigError("augment.weak.flip_prob must lie in [0, 1]");
        if (strong.num_ops < 0) throw ConfigError("augment.strong.num_ops must be >= 0");
        if (strong.magnitude < 0 || strong.magnitude > 30)
            throw ConfigError("augment.strong.magnitude must lie in [0, 30]");
        if (!(strong.cutout_fraction > 0.0) || strong.cutout_fraction > 1.0)
            throw ConfigError("augment.strong.cutout_fraction must lie in (0, 1]");
        if (!(style.epsilon > 0.0)) throw ConfigError("augment.style.epsilon must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Weak view
// ---------------------------------------------------------------------------

inline Image t_weak(const Image& image, const WeakPolicy& policy, Rng& rng) {
    validate_image(image, "t_weak");
    const int pad = policy.crop_padding;
    const int h = image.height;
    const int w = image.width;
    Image out = image;
    if (pad > 0) {
        const int oy = rng.uniform_int(0, 2 * pad) - pad;
        const int ox = rng.uniform_int(0, 2 * pad) - pad;
        // Reflection padding keeps the crop inside the image's own content.
        auto reflect = [](int i, int n) {
            if (n == 1) return 0;
            const int period = 2 * (n - 1);
            i %= period;
            if (i < 0) i += period;
            return i < n ? i : period - i;
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < image.channels; ++c)
                    out.at(y, x, c) = image.at(reflect(y + oy, h), reflect(x + ox, w), c);
    }
    if (policy.flip_prob > 0.0 && rng.bernoulli(policy.flip_prob)) out = mirror_horizontal(out);
    return out;
}

// ---------------------------------------------------------------------------
// Strong view
// ---------------------------------------------------------------------------

enum class AugOp {
    autocontrast,
    equalize,
    posterize,
    solarize,
    rotate,
    shear_x,
    shear_y,
    translate_x,
    translate_y,
    brightness,
    contrast,
    color_balance,
    sharpness,
    identity,
};

inline constexpr std::array<AugOp, 14> all_aug_ops{
    AugOp::autocontrast, AugOp::equalize,    AugOp::posterize,   AugOp::solarize,   AugOp::rotate,
    AugOp::shear_x,      AugOp::shear_y,     AugOp::translate_x, AugOp::translate_y, AugOp::brightness,
    AugOp::contrast,     AugOp::color_balance, AugOp::sharpness, AugOp::identity};

namespace augment_detail {

constexpr float fill_gray = 0.5f;

// out(y, x) = in(A * (y, x) about the centre); inverse mapping, bilinear.
inline Image affine_warp(const Image& in, double a, double b, double c, double d, double ty, double tx) {
    Image out(in.height, in.width, in.channels);
    const double cy = (in.height - 1) / 2.0;
    const double cx = (in.width - 1) / 2.0;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            const double dy = y - cy;
            const double dx = x - cx;
            const double sy = a * dy + b * dx + cy + ty;
            const double sx = c * dy + d * dx + cx + tx;
            for (int ch = 0; ch < in.channels; ++ch)
                out.at(y, x, ch) = sample_bilinear(in, static_cast<float>(sy), static_cast<float>(sx), ch, fill_gray);
        }
    return out;
}

inline Image blend(const Image& degenerate, const Image& image, double factor) {
    Image out = image;
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = static_cast<float>(degenerate.pixels[i] + factor * (image.pixels[i] - degenerate.pixels[i]));
    clamp01(out);
    return out;
}

inline Image grayscale(const Image& in) {
    Image out = in;
    if (in.channels != 3) return out;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            const float g = 0.299f * in.at(y, x, 0) + 0.587f * in.at(y, x, 1) + 0.114f * in.at(y, x, 2);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = g;
        }
    return out;
}

inline double signed_level(double level, Rng& rng) { return rng.bernoulli(0.5) ? level : -level; }

} // namespace augment_detail

// Applies one op at `magnitude` (0..30). Ops with a direction pick the sign
// from rng; magnitude 0 leaves every geometric op at the identity.
inline Image apply_aug_op(const Image& image, AugOp op, int magnitude, Rng& rng) {
    using namespace augment_detail;
    validate_image(image, "apply_aug_op");
    const double level = std::clamp(magnitude, 0, 30) / 30.0;
    switch (op) {
        case AugOp::identity: return image;
        case AugOp::autocontrast: {
            Image out = image;
            for (int c = 0; c < image.channels; ++c) {
                float lo = 1.0f, hi = 0.0f;
                for (int y = 0; y < image.height; ++y)
                    for (int x = 0; x < image.width; ++x) {
                        lo = std::min(lo, image.at(y, x, c));
                        hi = std::max(hi, image.at(y, x, c));
                    }
                if (hi - lo < 1e-6f) continue;
                for (int y = 0; y < image.height; ++y)
                    for (int x = 0; x < image.width; ++x) out.at(y, x, c) = (image.at(y, x, c) - lo) / (hi - lo);
            }
            clamp01(out);
            return out;
        }
        case AugOp::equalize: {
            Image out = image;
            const int n = image.height * image.width;
            for (int c = 0; c < image.channels; ++c) {
                std::array<int, 256> hist{};
                for (int y = 0; y < image.height; ++y)
                    for (int x = 0; x < image.width; ++x)
                        ++hist[static_cast<std::size_t>(std::lround(image.at(y, x, c) * 255.0f))];
                std::array<int, 256> cdf{};
                int run = 0;
                for (std::size_t i = 0; i < 256; ++i) cdf[i] = (run += hist[i]);
                int cdf_min = 0;
                for (int v : cdf)
                    if (v > 0) {
                        cdf_min = v;
                        break;
                    }
                if (n == cdf_min) continue;
                for (int y = 0; y < image.height; ++y)
                    for (int x = 0; x < image.width; ++x) {
                        const auto bin = static_cast<std::size_t>(std::lround(image.at(y, x, c) * 255.0f));
                        out.at(y, x, c) = static_cast<float>(cdf[bin] - cdf_min) / static_cast<float>(n - cdf_min);
                    }
            }
            clamp01(out);
            return out;
        }
        case AugOp::posterize: {
            const int bits = 8 - static_cast<int>(std::lround(level * 4.0));
            const float levels = static_cast<float>(1 << bits);
            Image out = image;
            for (auto& v : out.pixels) v = std::min(std::floor(v * levels), levels - 1.0f) / (levels - 1.0f);
            clamp01(out);
            return out;
        }
        case AugOp::solarize: {
            const float threshold = static_cast<float>(1.0 - level);
            Image out = image;
            for (auto& v : out.pixels)
                if (v >= threshold && level > 0.0) v = 1.0f - v;
            return out;
        }
        case AugOp::rotate: {
            const double angle = signed_level(level * 30.0, rng) * std::numbers::pi / 180.0;
            if (angle == 0.0) return image;
            const double cs = std::cos(angle);
            const double sn = std::sin(angle);
            return affine_warp(image, cs, -sn, sn, cs, 0.0, 0.0);
        }
        case AugOp::shear_x: {
            const double s = signed_level(level * 0.3, rng);
            return s == 0.0 ? image : affine_warp(image, 1.0, 0.0, s, 1.0, 0.0, 0.0);
        }
        case AugOp::shear_y: {
            const double s = signed_level(level * 0.3, rng);
            return s == 0.0 ? image : affine_warp(image, 1.0, s, 0.0, 1.0, 0.0, 0.0);
        }
        case AugOp::translate_x: {
            const double t = signed_level(level * 0.3 * image.width, rng);
            return t == 0.0 ? image : affine_warp(image, 1.0, 0.0, 0.0, 1.0, 0.0, t);
        }
        case AugOp::translate_y: {
            const double t = signed_level(level * 0.3 * image.height, rng);
            return t == 0.0 ? image : affine_warp(image, 1.0, 0.0, 0.0, 1.0, t, 0.0);
        }
        case AugOp::brightness: {
            const Image black(image.height, image.width, image.channels, 0.0f);
            return blend(black, image, 1.0 + signed_level(level * 0.9, rng));
        }
        case AugOp::contrast: {
            double mean = 0.0;
            for (float v : grayscale(image).pixels) mean += v;
            mean /= static_cast<double>(image.pixels.size());
            const Image gray(image.height, image.width, image.channels, static_cast<float>(mean));
            return blend(gray, image, 1.0 + signed_level(level * 0.9, rng));
        }
        case AugOp::color_balance: return blend(grayscale(image), image, 1.0 + signed_level(level * 0.9, rng));
        case AugOp::sharpness: {
            // PIL-style smoothing kernel [1 1 1; 1 5 1; 1 1 1] / 13 on interior pixels.
            Image smooth = image;
            for (int y = 1; y + 1 < image.height; ++y)
                for (int x = 1; x + 1 < image.width; ++x)
                    for (int c = 0; c < image.channels; ++c) {
                        float s = 4.0f * image.at(y, x, c);
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) s += image.at(y + dy, x + dx, c);
                        smooth.at(y, x, c) = s / 13.0f;
                    }
            return blend(smooth, image, 1.0 + signed_level(level * 0.9, rng));
        }
    }
    return image;
}

// Mid-gray square of side round(fraction * min(h, w)), centred uniformly at
// random (clipped at the borders).
inline Image cutout(const Image& image, double fraction, Rng& rng) {
    validate_image(image, "cutout");
    Image out = image;
    const int side = std::max(1, static_cast<int>(std::lround(fraction * std::min(image.height, image.width))));
    const int cy = rng.uniform_int(0, image.height - 1);
    const int cx = rng.uniform_int(0, image.width - 1);
    const int y0 = std::max(0, cy - side / 2);
    const int x0 = std::max(0, cx - side / 2);
    const int y1 = std::min(image.height, cy - side / 2 + side);
    const int x1 = std::min(image.width, cx - side / 2 + side);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = augment_detail::fill_gray;
    return out;
}

inline Image t_strong(const Image& image, const StrongPolicy& policy, Rng& rng) {
    validate_image(image, "t_strong");
    Image out = image;
    for (int i = 0; i < policy.num_ops; ++i) {
        const AugOp op = all_aug_ops[rng.below(all_aug_ops.size())];
        out = apply_aug_op(out, op, policy.magnitude, rng);
    }
    return cutout(out, policy.cutout_fraction, rng);
}

// ---------------------------------------------------------------------------
// Style view
// ---------------------------------------------------------------------------

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std_dev;  // population standard deviation
};

inline ChannelStats channel_stats(const Image& image) {
    ChannelStats s;
    const double n = static_cast<double>(image.height) * image.width;
    s.mean.assign(static_cast<std::size_t>(image.channels), 0.0);
    s.std_dev.assign(static_cast<std::size_t>(image.channels), 0.0);
    for (int c = 0; c < image.channels; ++c) {
        double sum = 0.0;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) sum += image.at(y, x, c);
        const double mean = sum / n;
        double sq = 0.0;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                const double d = image.at(y, x, c) - mean;
                sq += d * d;
            }
        s.mean[static_cast<std::size_t>(c)] = mean;
        s.std_dev[static_cast<std::size_t>(c)] = std::sqrt(sq / n);
    }
    return s;
}

// Per channel: sigma(style) * (content - mu(content)) / (sigma(content) + eps) + mu(style),
// before clipping to [0, 1].
inline Image t_style_unclipped(const Image& content, const Image& style, double epsilon = 1e-5) {
    validate_image(content, "t_style");
    validate_image(style, "t_style");
    if (!content.same_shape(style)) throw TransformError("t_style: content and style shapes differ");
    const ChannelStats cs = channel_stats(content);
    const ChannelStats ss = channel_stats(style);
    Image out(content.height, content.width, content.channels);
    for (int c = 0; c < content.channels; ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double scale = ss.std_dev[k] / (cs.std_dev[k] + epsilon);
        for (int y = 0; y < content.height; ++y)
            for (int x = 0; x < content.width; ++x)
                out.at(y, x, c) = static_cast<float>(scale * (content.at(y, x, c) - cs.mean[k]) + ss.mean[k]);
    }
    return out;
}

inline Image t_style(const Image& content, const Image& style, double epsilon = 1e-5) {
    Image out = t_style_unclipped(content, style, epsilon);
    clamp01(out);
    return out;
}

struct StyleSource {
    ImagePtr image;
    int domain = 0;
    int pool_index = 0;    // index into the source partition's pool
    int dataset_index = 0; // index within the domain of the dataset
    std::string warning;   // non-empty when cross_domain fell back to within_domain
};

// Picks the partner image whose statistics the style view borrows.
// cross_domain: uniform source domain != query_domain, then a uniform image of
// its pool. within_domain (or cross_domain with a single source): a different
// random image of the query's own domain.
inline StyleSource pick_style_source(int query_domain, int query_index, const SSDGSplit& split, StyleMode mode,
                                     Rng& rng) {
    if (split.sources.empty()) throw TransformError("pick_style_source: split has no sources");
    StyleSource out;
    if (mode == StyleMode::cross_domain && split.num_sources() < 2) {
        mode = StyleMode::within_domain;
        out.warning = "cross_domain style mixing needs >= 2 source domains; using within_domain";
    }
    const int own_slot = split.source_slot(query_domain);
    auto dataset_index_of = [](const SourcePartition& p, std::size_t i) {
        return i < p.labeled.size() ? p.labeled[i].index : p.unlabeled[i - p.labeled.size()].index;
    };
    if (mode == StyleMode::cross_domain) {
        std::vector<int> candidates;
        for (std::size_t i = 0; i < split.sources.size(); ++i)
            if (split.sources[i].domain != query_domain) candidates.push_back(static_cast<int>(i));
        const auto slot = static_cast<std::size_t>(candidates[rng.below(candidates.size())]);
        const auto& part = split.sources[slot];
        const auto i = rng.below(part.pool_size());
        out.image = part.pool_image(i);
        out.domain = part.domain;
        out.pool_index = static_cast<int>(i);
        out.dataset_index = dataset_index_of(part, i);
        return out;
    }
    if (own_slot < 0) throw TransformError("pick_style_source: query domain is not a source of the split");
    const auto& part = split.sources[static_cast<std::size_t>(own_slot)];
    std::size_t i = rng.below(part.pool_size());
    if (part.pool_size() >= 2)
        while (dataset_index_of(part, i) == query_index) i = rng.below(part.pool_size());
    out.image = part.pool_image(i);
    out.domain = part.domain;
    out.pool_index = static_cast<int>(i);
    out.dataset_index = dataset_index_of(part, i);
    return out;
}

} // namespace ssdg
