#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cxr/imaging.hpp"
#include "cxr/labels.hpp"
#include "cxr/lunggrid.hpp"

namespace cxr {

/// Radiograph-like test scene: bright thorax, two dark lung rectangles,
/// optional bright elliptical nodules with recorded boxes.
struct SyntheticCase {
    std::string case_id;
    Image image;
    Mask lung_truth;
    Rect left_lung;
    Rect right_lung;
    std::vector<NoduleBox> nodules;
    bool difficult = false;
};

struct SyntheticConfig {
    int size = 256;
    double noise_sigma = 4.0;
};

SyntheticCase make_synthetic_case(std::uint64_t seed, int index, const SyntheticConfig& cfg = {});

/// Writes images/<id>.pgm, truth/<id>_mask.pgm and manifest.jsonl under
/// `out_dir`. With `include_masks` the manifest points at the truth masks.
std::vector<CaseRecord> generate_synthetic(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                           bool include_masks = false, const SyntheticConfig& cfg = {});

/// Truth-mask path written for a case by generate_synthetic.
std::filesystem::path synthetic_truth_path(const std::filesystem::path& out_dir, const std::string& case_id);

}  // namespace cxr
