#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cxr/geometry.hpp"
#include "cxr/imaging.hpp"

namespace cxr {

/// Binary lung mask; 1 = lung.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), bits(std::size_t(w) * h, 0) {}

    std::uint8_t at(int x, int y) const { return bits[std::size_t(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return bits[std::size_t(y) * width + x]; }
    std::size_t count() const;

    friend bool operator==(const Mask&, const Mask&) = default;
};

/// Pixels >= 128 become lung.
Mask mask_from_image(const Image& img);
/// Lung pixels become 255, background 0.
Image mask_to_image(const Mask& mask);

struct Component {
    int label = 0;
    std::size_t area = 0;
    Rect bbox;
};

/// 8-connected components of the 1-pixels, largest area first; equal areas
/// keep raster-scan discovery order. When `labels` is given it receives the
/// per-pixel component label (-1 for background).
std::vector<Component> connected_components(const Mask& mask, std::vector<int>* labels = nullptr);

struct LungBoxes {
    Rect left;
    Rect right;
};

/// Tight boxes of the two largest components; left/right by centre x.
LungBoxes mask_to_lung_boxes(const Mask& mask);

struct GridSpec {
    int cols_per_lung = 2;
    int rows_per_lung = 4;
    double overlap = 0.25;

    static GridSpec sixteen(double overlap = 0.25) { return {2, 4, overlap}; }
    static GridSpec six(double overlap = 0.25) { return {1, 3, overlap}; }

    int per_lung() const { return cols_per_lung * rows_per_lung; }
    int total() const { return 2 * per_lung(); }
    void validate() const;

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct PatchGrid {
    std::vector<Rect> left_rects;
    std::vector<Rect> right_rects;
    GridSpec spec;

    std::size_t size() const { return left_rects.size() + right_rects.size(); }
    /// Global patch order: left lung row-major, then right lung row-major.
    const Rect& at(std::size_t index) const;
    std::vector<Rect> all() const;
    /// 0 for the left lung, 1 for the right.
    int lung_of(std::size_t index) const { return index < left_rects.size() ? 0 : 1; }
};

/// Integer [start, end) spans of `count` patches overlapping by fraction
/// `overlap` along an extent of `length` pixels. The last span ends at `length`.
std::vector<std::pair<int, int>> patch_spans(int length, int count, double overlap);

/// Real-valued patch extent along one axis: length / (count - (count - 1) * overlap).
double patch_extent(int length, int count, double overlap);

std::vector<Rect> build_lung_grid(const Rect& box, const GridSpec& spec);
PatchGrid build_grid(const Rect& left, const Rect& right, const GridSpec& spec);

bool grid_union_covers(const PatchGrid& grid, const Rect& left, const Rect& right);
/// True iff every pixel of `box` lies in at least one of `rects`.
bool rects_cover(const std::vector<Rect>& rects, const Rect& box);

}  // namespace cxr
