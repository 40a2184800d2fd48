#pragma once

// PNG (via libpng) and binary PPM/PGM reading and writing. Images are always
// returned as 3-channel RGB in [0, 1]; grayscale and alpha inputs are
// expanded or dropped.

#include "errors.hpp"
#include "image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace ssdg {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IngestionError("cannot open " + path.string());
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw IngestionError("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("libpng init failed for " + path.string());
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("corrupt PNG: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const auto rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * static_cast<std::size_t>(height));
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image image(height, width, 3);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = buffer[i] / 255.0f;
    return image;
}

inline Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path.string());
    std::string magic;
    in >> magic;
    auto next_int = [&]() {
        int v = 0;
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        if (!(in >> v)) throw IngestionError("corrupt PNM header: " + path.string());
        return v;
    };
    if (magic != "P6" && magic != "P5") throw IngestionError("unsupported PNM variant: " + path.string());
    const int width = next_int();
    const int height = next_int();
    const int maxval = next_int();
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
        throw IngestionError("unsupported PNM dimensions: " + path.string());
    in.get();
    const int src_channels = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * src_channels);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw IngestionError("truncated PNM data: " + path.string());
    Image image(height, width, 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const auto src = (static_cast<std::size_t>(y) * width + x) * src_channels +
                                 (src_channels == 3 ? c : 0);
                image.at(y, x, c) = static_cast<float>(raw[src]) / static_cast<float>(maxval);
            }
    return image;
}

} // namespace detail

inline bool is_supported_image_file(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

inline Image read_image(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".png") return detail::read_png(path);
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return detail::read_pnm(path);
    throw IngestionError("unsupported image format: " + path.string());
}

// Writes an 8-bit RGB PNG. Single-channel images are written as gray.
inline void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 3 && image.channels != 1)
        throw IngestionError("write_png supports 1 or 3 channels: " + path.string());
    detail::FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IngestionError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("libpng init failed for " + path.string());
    }
    std::vector<png_byte> buffer(image.pixels.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = detail::to_byte(image.pixels[i]);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    const auto stride = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + stride * y;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("PNG encode failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace ssdg
