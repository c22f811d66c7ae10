#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vince/errors.hpp"
#include "vince/tensor.hpp"

namespace vince {

/// 8-bit RGB, interleaved, row-major. This is the on-disk frame representation.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

    bool operator==(const RgbImage&) const = default;
};

/// Planar float RGB in [0, 1]: the model-facing representation.
struct FloatImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> planes;  // 3 x height x width

    FloatImage() = default;
    FloatImage(std::size_t w, std::size_t h) : width(w), height(h), planes(3 * w * h, 0.0f) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return planes[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return planes[(c * height + y) * width + x]; }

    bool operator==(const FloatImage&) const = default;
};

inline void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    auto next_token = [&]() {
        std::string token;
        for (;;) {
            int ch = in.get();
            if (ch == EOF) break;
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(ch)) {
                if (!token.empty()) break;
                continue;
            }
            token.push_back(static_cast<char>(ch));
        }
        return token;
    };
    if (next_token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_token());
        h = std::stoul(next_token());
        maxval = std::stoul(next_token());
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed PPM header");
    }
    if (maxval != 255 || w == 0 || h == 0) throw FormatError(path.string() + ": only 8-bit non-empty PPM supported");
    RgbImage image(w, h);
    in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
        throw FormatError(path.string() + ": truncated pixel data");
    }
    return image;
}

inline FloatImage to_float(const RgbImage& image) {
    FloatImage out(image.width, image.height);
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = image.at(x, y, c) / 255.0f;
    return out;
}

/// Bilinear resample of the axis-aligned region [x0, x0+w) x [y0, y0+h) (source pixels,
/// fractional allowed) onto an out_w x out_h grid. Samples outside the image repeat the edge.
inline FloatImage crop_resize(const FloatImage& src, double x0, double y0, double w, double h, std::size_t out_w,
                              std::size_t out_h) {
    if (out_w == 0 || out_h == 0 || w <= 0.0 || h <= 0.0) throw DimensionError("crop_resize: empty region or output");
    FloatImage out(out_w, out_h);
    const double sx = w / static_cast<double>(out_w);
    const double sy = h / static_cast<double>(out_h);
    const auto max_x = static_cast<double>(src.width - 1);
    const auto max_y = static_cast<double>(src.height - 1);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double fy = std::clamp(y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, max_y);
        const auto y_lo = static_cast<std::size_t>(fy);
        const std::size_t y_hi = std::min(y_lo + 1, src.height - 1);
        const double ty = fy - static_cast<double>(y_lo);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double fx = std::clamp(x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, max_x);
            const auto x_lo = static_cast<std::size_t>(fx);
            const std::size_t x_hi = std::min(x_lo + 1, src.width - 1);
            const double tx = fx - static_cast<double>(x_lo);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = src.at(c, y_lo, x_lo) * (1.0 - tx) + src.at(c, y_lo, x_hi) * tx;
                const double bottom = src.at(c, y_hi, x_lo) * (1.0 - tx) + src.at(c, y_hi, x_hi) * tx;
                out.at(c, oy, ox) = static_cast<float>(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    return out;
}

inline FloatImage resize(const FloatImage& src, std::size_t out_w, std::size_t out_h) {
    return crop_resize(src, 0.0, 0.0, static_cast<double>(src.width), static_cast<double>(src.height), out_w, out_h);
}

inline FloatImage hflip(const FloatImage& src) {
    FloatImage out(src.width, src.height);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
            for (std::size_t x = 0; x < src.width; ++x) out.at(c, y, x) = src.at(c, y, src.width - 1 - x);
    return out;
}

/// Stacks equally sized images into an N x 3 x H x W tensor, mapping [0,1] to [-1,1].
inline Tensor images_to_tensor(const std::vector<FloatImage>& images) {
    if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
    const std::size_t w = images.front().width, h = images.front().height;
    std::vector<float> values;
    values.reserve(images.size() * 3 * w * h);
    for (const auto& image : images) {
        if (image.width != w || image.height != h) throw DimensionError("images_to_tensor: mixed image sizes");
        for (float v : image.planes) values.push_back(2.0f * v - 1.0f);
    }
    return Tensor({images.size(), 3, h, w}, std::move(values));
}

}  // namespace vince
