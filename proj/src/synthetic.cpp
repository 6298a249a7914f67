#include "cxr/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "cxr/error.hpp"
#include "cxr/random.hpp"

namespace cxr {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

int jitter(Rng& rng, int base, int amount) { return base + int(rng.uniform_int(-amount, amount)); }

}  // namespace

SyntheticCase make_synthetic_case(std::uint64_t seed, int index, const SyntheticConfig& cfg) {
    if (cfg.size < 64) throw Error(ErrorCode::InvalidConfig, "synthetic images need at least 64 pixels per side");
    Rng rng(splitmix(seed ^ splitmix(std::uint64_t(index))));
    const int n = cfg.size;
    const double s = n / 256.0;  // geometry is authored for 256 px

    SyntheticCase sc;
    char id[32];
    std::snprintf(id, sizeof id, "case_%04d", index);
    sc.case_id = id;

    const int background = jitter(rng, 200, 10);
    const int lung_level = jitter(rng, 40, 8);

    auto lung_rect = [&](bool right) {
        const int w = int(std::lround(jitter(rng, 76, 8) * s));
        const int h = int(std::lround(jitter(rng, 176, 12) * s));
        const int y = int(std::lround(jitter(rng, 36, 8) * s));
        const int margin = int(std::lround(jitter(rng, 28, 8) * s));
        const int x = right ? n - margin - w : margin;
        return Rect{x, y, w, h};
    };
    sc.left_lung = lung_rect(false);
    sc.right_lung = lung_rect(true);

    std::vector<double> canvas(std::size_t(n) * n, double(background));
    sc.lung_truth = Mask(n, n);
    for (const Rect& r : {sc.left_lung, sc.right_lung})
        for (int y = r.y; y < r.bottom(); ++y)
            for (int x = r.x; x < r.right(); ++x) {
                canvas[std::size_t(y) * n + x] = lung_level;
                sc.lung_truth.at(x, y) = 1;
            }

    const double u = rng.uniform();
    const int nodule_count = u < 0.3 ? 0 : (u < 0.8 ? 1 : 2);
    for (int k = 0; k < nodule_count; ++k) {
        const Rect lung = rng.bernoulli(0.5) ? sc.right_lung : sc.left_lung;
        const double rx = rng.uniform(4.0, 12.0) * s;
        const double ry = rng.uniform(4.0, 12.0) * s;
        const double level = rng.uniform(120.0, 180.0);
        const double cx = rng.uniform(lung.x + rx + 2, lung.right() - rx - 3);
        const double cy = rng.uniform(lung.y + ry + 2, lung.bottom() - ry - 3);
        int minx = n, miny = n, maxx = -1, maxy = -1;
        for (int y = int(std::floor(cy - ry)); y <= int(std::ceil(cy + ry)); ++y)
            for (int x = int(std::floor(cx - rx)); x <= int(std::ceil(cx + rx)); ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (dx * dx + dy * dy > 1.0) continue;
                canvas[std::size_t(y) * n + x] = level;
                minx = std::min(minx, x), maxx = std::max(maxx, x);
                miny = std::min(miny, y), maxy = std::max(maxy, y);
            }
        sc.nodules.push_back({{minx, miny, maxx - minx + 1, maxy - miny + 1}, "n" + std::to_string(k)});
        if (std::min(rx, ry) <= 5.0 * s || level < 135.0) sc.difficult = true;
    }

    sc.image = Image(n, n);
    for (std::size_t i = 0; i < canvas.size(); ++i)
        sc.image.data[i] =
            std::uint8_t(std::clamp(std::lround(canvas[i] + cfg.noise_sigma * rng.normal()), 0L, 255L));
    return sc;
}

std::filesystem::path synthetic_truth_path(const std::filesystem::path& out_dir, const std::string& case_id) {
    return out_dir / "truth" / (case_id + "_mask.pgm");
}

std::vector<CaseRecord> generate_synthetic(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                           bool include_masks, const SyntheticConfig& cfg) {
    if (n < 1) throw Error(ErrorCode::InvalidConfig, "need at least one synthetic case");
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "truth");
    std::vector<CaseRecord> cases;
    for (int i = 0; i < n; ++i) {
        const SyntheticCase sc = make_synthetic_case(seed, i, cfg);
        const std::string image_rel = "images/" + sc.case_id + ".pgm";
        const std::string mask_rel = "truth/" + sc.case_id + "_mask.pgm";
        save_pgm(sc.image, out_dir / image_rel);
        save_pgm(mask_to_image(sc.lung_truth), out_dir / mask_rel);
        CaseRecord c;
        c.case_id = sc.case_id;
        c.image_path = image_rel;
        if (include_masks) c.mask_path = mask_rel;
        c.nodules = sc.nodules;
        c.difficult = sc.difficult;
        c.source = DataSource::Synthetic;
        cases.push_back(std::move(c));
    }
    write_manifest(cases, out_dir / "manifest.jsonl");
    return cases;
}

}  // namespace cxr
