#include "cxr/segbaseline.hpp"

#include <array>
#include <cmath>

#include "cxr/error.hpp"

namespace cxr {

void SegConfig::validate() const {
    if (open_radius < 0 || close_radius < 0) throw Error(ErrorCode::InvalidConfig, "morphology radii must be >= 0");
    if (!(min_component_area > 0.0 && min_component_area < 0.5))
        throw Error(ErrorCode::InvalidConfig, "min_component_area must lie in (0, 0.5)");
    if (threshold_mode == ThresholdMode::Fixed && (fixed_threshold < 0 || fixed_threshold > 256))
        throw Error(ErrorCode::InvalidConfig, "fixed threshold must lie in [0, 256]");
}

int otsu_threshold(const Image& img) {
    std::array<std::uint64_t, 256> hist{};
    for (auto v : img.data) ++hist[v];
    const double total = double(img.data.size());
    double sum_all = 0;
    for (int i = 0; i < 256; ++i) sum_all += double(i) * double(hist[std::size_t(i)]);

    double w0 = 0, sum0 = 0, best = -1;
    int best_t = 0;
    for (int t = 0; t < 256; ++t) {
        w0 += double(hist[std::size_t(t)]);
        sum0 += double(t) * double(hist[std::size_t(t)]);
        const double w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    // class 0 is [0, best_t]
    return best_t + 1;
}

namespace {

// Separable running min/max along rows then columns.
Mask morph(const Mask& m, int radius, bool erosion) {
    if (radius <= 0) return m;
    const int w = m.width, h = m.height;
    const std::uint8_t outside = erosion ? 1 : 0;
    auto pass = [&](const Mask& src, bool horizontal) {
        Mask dst(w, h);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                std::uint8_t acc = erosion ? 1 : 0;
                for (int d = -radius; d <= radius; ++d) {
                    const int sx = horizontal ? x + d : x;
                    const int sy = horizontal ? y : y + d;
                    const bool inside = sx >= 0 && sx < w && sy >= 0 && sy < h;
                    const std::uint8_t v = inside ? src.at(sx, sy) : outside;
                    if (erosion && !v) { acc = 0; break; }
                    if (!erosion && v) { acc = 1; break; }
                }
                dst.at(x, y) = acc;
            }
        }
        return dst;
    };
    return pass(pass(m, true), false);
}

}  // namespace

Mask erode(const Mask& m, int radius) { return morph(m, radius, true); }
Mask dilate(const Mask& m, int radius) { return morph(m, radius, false); }
Mask open(const Mask& m, int radius) { return dilate(erode(m, radius), radius); }
Mask close(const Mask& m, int radius) { return erode(dilate(m, radius), radius); }

Mask segment_lungs(const Image& img, const SegConfig& cfg) {
    cfg.validate();
    if (img.empty()) throw Error(ErrorCode::InvalidInput, "cannot segment an empty image");
    const int threshold = cfg.threshold_mode == ThresholdMode::Otsu ? otsu_threshold(img) : cfg.fixed_threshold;

    Mask candidate(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) candidate.bits[i] = img.data[i] < threshold ? 1 : 0;
    const Mask smoothed = close(open(candidate, cfg.open_radius), cfg.close_radius);

    const double floor_area = cfg.min_component_area * double(img.width) * double(img.height);
    std::vector<int> labels;
    const auto comps = connected_components(smoothed, &labels);
    std::size_t qualifying = 0;
    for (const auto& c : comps)
        if (double(c.area) > floor_area) ++qualifying;
    if (qualifying < 2)
        throw Error(ErrorCode::SegmentationFailed,
                    "found " + std::to_string(qualifying) + " lung-sized component(s), need 2");

    Mask out(img.width, img.height);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == comps[0].label || labels[i] == comps[1].label) out.bits[i] = 1;
    return out;
}

Mask load_mask(const std::filesystem::path& path, std::optional<std::pair<int, int>> expected_dims) {
    const Image img = load_pgm(path);
    if (expected_dims && (img.width != expected_dims->first || img.height != expected_dims->second))
        throw Error(ErrorCode::MaskMismatch, "mask " + path.string() + " is " + std::to_string(img.width) + "x" +
                                                 std::to_string(img.height) + ", image is " +
                                                 std::to_string(expected_dims->first) + "x" +
                                                 std::to_string(expected_dims->second));
    return mask_from_image(img);
}

}  // namespace cxr
