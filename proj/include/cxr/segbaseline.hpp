#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "cxr/imaging.hpp"
#include "cxr/lunggrid.hpp"

namespace cxr {

enum class ThresholdMode { Otsu, Fixed };

struct SegConfig {
    ThresholdMode threshold_mode = ThresholdMode::Otsu;
    int fixed_threshold = 128;       // used when threshold_mode == Fixed
    int open_radius = 2;
    int close_radius = 4;
    double min_component_area = 0.02; // fraction of the image area

    void validate() const;
};

/// Otsu threshold T: pixels strictly below T form the dark class.
int otsu_threshold(const Image& img);

/// Square structuring element of side 2r+1. Erosion treats the outside as
/// foreground and dilation as background, so open/close do not eat the border.
Mask erode(const Mask& m, int radius);
Mask dilate(const Mask& m, int radius);
Mask open(const Mask& m, int radius);
Mask close(const Mask& m, int radius);

/// Classical lung-field baseline: dark-region threshold, open, close,
/// keep the two largest components above the area floor.
Mask segment_lungs(const Image& img, const SegConfig& cfg = {});

/// Loads a 0/255 mask PGM; thresholds at 128. When expected dimensions are
/// given, a mismatch raises MaskMismatch.
Mask load_mask(const std::filesystem::path& path, std::optional<std::pair<int, int>> expected_dims = std::nullopt);

}  // namespace cxr
