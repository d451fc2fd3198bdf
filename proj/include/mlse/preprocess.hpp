#ifndef MLSE_PREPROCESS_HPP
#define MLSE_PREPROCESS_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mlse/container.hpp"
#include "mlse/errors.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

/// 8-bit grayscale image, row-major, 0 = black, 255 = white.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 255) : width(w), height(h), pixels(w * h, fill) {
        if (w == 0 || h == 0) {
            throw DimensionError("image dimensions must be positive");
        }
    }

    std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline std::array<std::uint64_t, 256> histogram(const GrayImage& img) {
    std::array<std::uint64_t, 256> h{};
    for (auto p : img.pixels) ++h[p];
    return h;
}

/// Between-class variance (up to the constant 1/N^2) of a split into [0, t] and (t, 255].
inline double otsu_between_variance(std::uint64_t n0, std::uint64_t sum0, std::uint64_t n1, std::uint64_t sum1) {
    if (n0 == 0 || n1 == 0) return 0.0;
    const double mu0 = static_cast<double>(sum0) / static_cast<double>(n0);
    const double mu1 = static_cast<double>(sum1) / static_cast<double>(n1);
    return static_cast<double>(n0) * static_cast<double>(n1) * (mu0 - mu1) * (mu0 - mu1);
}

/**
 * Threshold maximizing between-class variance; ties go to the smallest t.
 * A constant image has no split with two nonempty classes and returns its own value.
 */
inline std::uint8_t otsu_threshold(const GrayImage& img) {
    if (img.pixels.empty()) {
        throw DimensionError("otsu_threshold needs a nonempty image");
    }
    const auto h = histogram(img);
    std::uint64_t total_n = 0, total_sum = 0;
    for (std::size_t v = 0; v < 256; ++v) {
        total_n += h[v];
        total_sum += h[v] * v;
    }
    std::uint64_t n0 = 0, sum0 = 0;
    double best = 0.0;
    int best_t = -1;
    for (std::size_t t = 0; t < 256; ++t) {
        n0 += h[t];
        sum0 += h[t] * t;
        const double var = otsu_between_variance(n0, sum0, total_n - n0, total_sum - sum0);
        if (var > best) {
            best = var;
            best_t = static_cast<int>(t);
        }
    }
    if (best_t < 0) {
        return img.pixels.front();
    }
    return static_cast<std::uint8_t>(best_t);
}

/// Background (> t) becomes 0; ink (<= t) becomes 255 - value.
inline GrayImage binarize_invert(const GrayImage& img, std::uint8_t t) {
    GrayImage out = img;
    for (auto& p : out.pixels) p = p > t ? 0 : static_cast<std::uint8_t>(255 - p);
    return out;
}

/// Bilinear resize with half-pixel centers; results rounded half-up.
inline GrayImage resize_gray(const GrayImage& img, std::size_t target_w, std::size_t target_h) {
    GrayImage out(target_w, target_h, 0);
    const double sx = static_cast<double>(img.width) / static_cast<double>(target_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(target_h);
    auto source = [](std::size_t d, double scale, std::size_t n) {
        double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(n - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, n - 1);
        return std::tuple{i0, i1, s - static_cast<double>(i0)};
    };
    for (std::size_t y = 0; y < target_h; ++y) {
        const auto [y0, y1, fy] = source(y, sy, img.height);
        for (std::size_t x = 0; x < target_w; ++x) {
            const auto [x0, x1, fx] = source(x, sx, img.width);
            const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
            const double bottom = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
            const double v = top * (1.0 - fy) + bottom * fy;
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
        }
    }
    return out;
}

/// OTSU, inversion, resize, then scale to [0, 1]; shape (1, height, width).
inline Tensor<float> preprocess_image(const GrayImage& img, std::size_t height, std::size_t width) {
    const GrayImage inv = binarize_invert(img, otsu_threshold(img));
    const GrayImage small = resize_gray(inv, width, height);
    Tensor<float> t({1, height, width});
    for (std::size_t i = 0; i < small.pixels.size(); ++i) t[i] = static_cast<float>(small.pixels[i]) / 255.0f;
    return t;
}

/// Stacks preprocessed images into an (N, 1, height, width) batch.
inline Tensor<float> preprocess_batch(const std::vector<GrayImage>& images, std::size_t height, std::size_t width) {
    if (images.empty()) {
        throw DataError("no images to preprocess");
    }
    Tensor<float> batch({images.size(), 1, height, width});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto t = preprocess_image(images[i], height, width);
        std::copy(t.values().begin(), t.values().end(), batch.row(i).begin());
    }
    return batch;
}

inline std::string encode_pgm(const GrayImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    io::write_text_atomic(path, encode_pgm(img));
}

/// Binary PGM (P5) with maxval 255; '#' comments allowed in the header.
inline GrayImage read_pgm(const std::filesystem::path& path) {
    const auto buf = io::read_file(path);
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) { return FormatError(FormatError::Kind::Malformed, path.string() + ": " + why); };
    auto token = [&]() {
        while (pos < buf.size()) {
            if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(buf[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < buf.size() && !std::isspace(buf[pos]) && buf[pos] != '#') t += static_cast<char>(buf[pos++]);
        return t;
    };
    auto number = [&](const char* what) {
        const std::string t = token();
        if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
            t.size() > 9) {
            throw fail(std::string("bad ") + what);
        }
        return static_cast<std::size_t>(std::stoul(t));
    };
    if (token() != "P5") {
        throw FormatError(FormatError::Kind::BadMagic, path.string() + ": expected binary PGM 'P5'");
    }
    const std::size_t w = number("width");
    const std::size_t h = number("height");
    const std::size_t maxval = number("maxval");
    if (w == 0 || h == 0) throw fail("zero image dimension");
    if (maxval != 255) throw fail("only maxval 255 is supported");
    if (pos >= buf.size() || !std::isspace(buf[pos])) throw fail("missing header terminator");
    ++pos;
    if (buf.size() - pos < w * h) {
        throw FormatError(FormatError::Kind::Truncated, path.string() + ": pixel data shorter than " +
                                                            std::to_string(w) + "x" + std::to_string(h));
    }
    GrayImage img(w, h);
    std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(pos), w * h, img.pixels.begin());
    return img;
}

} // namespace mlse

#endif // MLSE_PREPROCESS_HPP
