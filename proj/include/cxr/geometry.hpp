#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>

namespace cxr {

/// Integer pixel rectangle, top-left anchored, half-open on the right/bottom.
struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    int right() const { return x + w; }
    int bottom() const { return y + h; }
    std::int64_t area() const { return std::int64_t(w) * h; }
    bool empty() const { return w <= 0 || h <= 0; }
    bool contains(int px, int py) const { return px >= x && px < right() && py >= y && py < bottom(); }

    friend bool operator==(const Rect&, const Rect&) = default;
};

inline Rect intersect(const Rect& a, const Rect& b) {
    const int x0 = std::max(a.x, b.x);
    const int y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.right(), b.right());
    const int y1 = std::min(a.bottom(), b.bottom());
    if (x1 <= x0 || y1 <= y0) return {x0, y0, 0, 0};
    return {x0, y0, x1 - x0, y1 - y0};
}

inline std::int64_t intersection_area(const Rect& a, const Rect& b) {
    const Rect r = intersect(a, b);
    return r.empty() ? 0 : r.area();
}

inline std::ostream& operator<<(std::ostream& os, const Rect& r) {
    return os << "(" << r.x << "," << r.y << "," << r.w << "," << r.h << ")";
}

}  // namespace cxr
