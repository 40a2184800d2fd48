#pragma once

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace ssdg {

// Row-major height x width x channels image with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t size() const { return pixels.size(); }
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
    float at(int y, int x, int c) const { return pixels[index(y, x, c)]; }

    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }

    bool operator==(const Image& other) const = default;
};

inline void validate_image(const Image& image, const char* where) {
    if (image.height <= 0 || image.width <= 0 || image.channels <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
        throw TransformError(std::string(where) + ": malformed image shape");
    }
}

inline void clamp01(Image& image) {
    for (auto& v : image.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

inline bool in_unit_range(const Image& image) {
    return std::all_of(image.pixels.begin(), image.pixels.end(),
                       [](float v) { return v >= 0.0f && v <= 1.0f; });
}

inline Image mirror_horizontal(const Image& image) {
    Image out(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c)
                out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
    return out;
}

// Bilinear sample with a constant fill outside the image.
inline float sample_bilinear(const Image& image, float y, float x, int c, float fill) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const float fy = y - static_cast<float>(y0);
    const float fx = x - static_cast<float>(x0);
    auto px = [&](int yy, int xx) {
        if (yy < 0 || yy >= image.height || xx < 0 || xx >= image.width) return fill;
        return image.at(yy, xx, c);
    };
    return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
           fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

// Nearest-neighbour/bilinear resize used when ingesting folder datasets.
inline Image resize_bilinear(const Image& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    Image out(height, width, image.channels);
    const float sy = static_cast<float>(image.height) / static_cast<float>(height);
    const float sx = static_cast<float>(image.width) / static_cast<float>(width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const float src_y = std::clamp((static_cast<float>(y) + 0.5f) * sy - 0.5f, 0.0f,
                                           static_cast<float>(image.height - 1));
            const float src_x = std::clamp((static_cast<float>(x) + 0.5f) * sx - 0.5f, 0.0f,
                                           static_cast<float>(image.width - 1));
            for (int c = 0; c < image.channels; ++c)
                out.at(y, x, c) = sample_bilinear(image, src_y, src_x, c, 0.0f);
        }
    return out;
}

} // namespace ssdg
