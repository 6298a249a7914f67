#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cxr/geometry.hpp"

namespace cxr {

/// 8-bit grayscale raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);
    Image(int w, int h, std::vector<std::uint8_t> pixels);

    std::uint8_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return data[std::size_t(y) * width + x]; }
    bool empty() const { return width <= 0 || height <= 0; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Channel-major, row-major real tensor (one sample, no batch axis).
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), values(std::size_t(c) * h * w, fill) {}

    std::size_t size() const { return values.size(); }
    std::size_t plane() const { return std::size_t(height) * width; }
    double& at(int c, int y, int x) { return values[(std::size_t(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return values[(std::size_t(c) * height + y) * width + x]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct AugmentParams {
    int brightness_delta = 0;     // [-64, 64]
    double contrast_factor = 1.0; // [0.5, 2.0]
    bool hflip = false;
    double rotation_deg = 0.0;    // [-15, 15]
    std::uint64_t seed = 0;

    /// Draws every field uniformly from its declared range.
    static AugmentParams sample(std::uint64_t seed);
};

/// Default ImageNet single-channel normalization (red-channel statistics).
inline constexpr double kDefaultMean = 0.485;
inline constexpr double kDefaultStd = 0.229;

Image load_pgm(const std::filesystem::path& path);
Image parse_pgm(std::span<const std::uint8_t> bytes);
void save_pgm(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(const Image& img);

/// Placement of a resized image inside the padded square canvas.
struct PadLayout {
    int target = 0;
    int scaled_w = 0;
    int scaled_h = 0;
    int offset_x = 0;
    int offset_y = 0;

    // Maps a source pixel-space coordinate into canvas coordinates.
    double to_canvas_x(double sx, int src_w) const { return offset_x + sx * scaled_w / src_w; }
    double to_canvas_y(double sy, int src_h) const { return offset_y + sy * scaled_h / src_h; }
};

PadLayout pad_layout(int src_w, int src_h, int target);

/// Aspect-preserving bilinear resize into a target x target canvas; the
/// short side is padded with pad_value, split evenly (odd pixel goes to the
/// bottom/right).
Image resize_pad(const Image& img, int target, std::uint8_t pad_value = 0);

/// Half-pixel-centred bilinear resize with edge clamping.
Image resize_bilinear(const Image& img, int out_w, int out_h);

Tensor normalize(const Image& img, double mean = kDefaultMean, double std = kDefaultStd);

/// contrast -> brightness -> horizontal flip -> rotation about the centre.
Image augment(const Image& img, const AugmentParams& p);

Image hflip(const Image& img);
Image crop(const Image& img, const Rect& r);

}  // namespace cxr
