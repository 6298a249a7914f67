#include "cxr/lunggrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cxr/error.hpp"

namespace cxr {

std::size_t Mask::count() const {
    return std::size_t(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Mask mask_from_image(const Image& img) {
    Mask m(img.width, img.height);
    std::transform(img.data.begin(), img.data.end(), m.bits.begin(),
                   [](std::uint8_t v) { return std::uint8_t(v >= 128 ? 1 : 0); });
    return m;
}

Image mask_to_image(const Mask& mask) {
    Image img(mask.width, mask.height);
    std::transform(mask.bits.begin(), mask.bits.end(), img.data.begin(),
                   [](std::uint8_t b) { return std::uint8_t(b ? 255 : 0); });
    return img;
}

std::vector<Component> connected_components(const Mask& mask, std::vector<int>* labels) {
    const int w = mask.width;
    const int h = mask.height;
    std::vector<int> label(mask.bits.size(), -1);
    std::vector<Component> comps;
    std::vector<int> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t seed = std::size_t(y0) * w + x0;
            if (!mask.bits[seed] || label[seed] >= 0) continue;
            const int id = int(comps.size());
            int minx = x0, maxx = x0, miny = y0, maxy = y0;
            std::size_t area = 0;
            label[seed] = id;
            stack.assign(1, int(seed));
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                ++area;
                const int px = p % w;
                const int py = p / w;
                minx = std::min(minx, px);
                maxx = std::max(maxx, px);
                miny = std::min(miny, py);
                maxy = std::max(maxy, py);
                for (int dy = -1; dy <= 1; ++dy) {
                    const int ny = py + dy;
                    if (ny < 0 || ny >= h) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = px + dx;
                        if (nx < 0 || nx >= w) continue;
                        const std::size_t q = std::size_t(ny) * w + nx;
                        if (mask.bits[q] && label[q] < 0) {
                            label[q] = id;
                            stack.push_back(int(q));
                        }
                    }
                }
            }
            comps.push_back({id, area, {minx, miny, maxx - minx + 1, maxy - miny + 1}});
        }
    }
    std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) { return a.area > b.area; });
    if (labels) *labels = std::move(label);
    return comps;
}

LungBoxes mask_to_lung_boxes(const Mask& mask) {
    const auto comps = connected_components(mask);
    if (comps.size() < 2) throw InsufficientComponentsError(comps.size());
    Rect a = comps[0].bbox;
    Rect b = comps[1].bbox;
    // compare doubled centres to stay in integers
    if (2 * a.x + a.w > 2 * b.x + b.w) std::swap(a, b);
    return {a, b};
}

void GridSpec::validate() const {
    if (cols_per_lung < 1 || rows_per_lung < 1)
        throw Error(ErrorCode::InvalidConfig, "grid needs at least one row and one column per lung");
    if (!(overlap >= 0.0 && overlap < 0.5))
        throw Error(ErrorCode::InvalidConfig, "overlap fraction must lie in [0, 0.5)");
}

const Rect& PatchGrid::at(std::size_t index) const {
    if (index < left_rects.size()) return left_rects[index];
    return right_rects.at(index - left_rects.size());
}

std::vector<Rect> PatchGrid::all() const {
    std::vector<Rect> out = left_rects;
    out.insert(out.end(), right_rects.begin(), right_rects.end());
    return out;
}

double patch_extent(int length, int count, double overlap) {
    return double(length) / (count - (count - 1) * overlap);
}

std::vector<std::pair<int, int>> patch_spans(int length, int count, double overlap) {
    const double extent = patch_extent(length, count, overlap);
    if (length <= 0 || extent < 1.0) throw Error(ErrorCode::InvalidBox, "box too small for the requested grid");
    const double stride = extent * (1.0 - overlap);
    std::vector<std::pair<int, int>> spans(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int start = int(std::lround(i * stride));
        const int end = (i == count - 1) ? length : int(std::lround(i * stride + extent));
        spans[std::size_t(i)] = {start, std::min(end, length)};
    }
    return spans;
}

std::vector<Rect> build_lung_grid(const Rect& box, const GridSpec& spec) {
    spec.validate();
    if (box.empty()) throw Error(ErrorCode::InvalidBox, "degenerate lung box");
    const auto xs = patch_spans(box.w, spec.cols_per_lung, spec.overlap);
    const auto ys = patch_spans(box.h, spec.rows_per_lung, spec.overlap);
    std::vector<Rect> rects;
    rects.reserve(xs.size() * ys.size());
    for (const auto& [y0, y1] : ys)
        for (const auto& [x0, x1] : xs) rects.push_back({box.x + x0, box.y + y0, x1 - x0, y1 - y0});
    return rects;
}

PatchGrid build_grid(const Rect& left, const Rect& right, const GridSpec& spec) {
    return {build_lung_grid(left, spec), build_lung_grid(right, spec), spec};
}

bool rects_cover(const std::vector<Rect>& rects, const Rect& box) {
    if (box.empty()) return true;
    // Elementary cells between all clipped edges; each cell is uniformly
    // covered or not, so testing one pixel per cell is exact.
    std::vector<int> xs{box.x, box.right()};
    std::vector<int> ys{box.y, box.bottom()};
    for (const auto& r : rects) {
        if (r.empty()) continue;
        xs.push_back(std::clamp(r.x, box.x, box.right()));
        xs.push_back(std::clamp(r.right(), box.x, box.right()));
        ys.push_back(std::clamp(r.y, box.y, box.bottom()));
        ys.push_back(std::clamp(r.bottom(), box.y, box.bottom()));
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
        for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
            const int px = xs[i];
            const int py = ys[j];
            const bool hit = std::any_of(rects.begin(), rects.end(), [&](const Rect& r) { return r.contains(px, py); });
            if (!hit) return false;
        }
    }
    return true;
}

bool grid_union_covers(const PatchGrid& grid, const Rect& left, const Rect& right) {
    return rects_cover(grid.left_rects, left) && rects_cover(grid.right_rects, right);
}

}  // namespace cxr
