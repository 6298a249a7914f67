#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cxr/imaging.hpp"
#include "cxr/labels.hpp"
#include "cxr/lunggrid.hpp"
#include "cxr/metrics.hpp"
#include "cxr/nnet.hpp"
#include "cxr/segbaseline.hpp"

namespace cxr {

/// How a patch crop becomes a network input.
struct PreprocessConfig {
    int patch_size = 56;
    std::uint8_t pad_value = 0;
    double mean = kDefaultMean;
    double std = kDefaultStd;
    GridSpec grid = GridSpec::sixteen();

    nlohmann::json to_json() const;
    static PreprocessConfig from_json(const nlohmann::json& j);
};

/// Image, lung mask and patch grid of one case.
struct CaseGeometry {
    Image image;
    Mask mask;
    LungBoxes boxes;
    PatchGrid grid;
    bool mask_from_file = false;
};

/// Uses the manifest mask when present, otherwise the segmentation baseline.
CaseGeometry locate_case(const CaseRecord& c, const std::filesystem::path& manifest, const GridSpec& grid,
                         const SegConfig& seg = {});
CaseGeometry locate_image(Image image, std::optional<Mask> mask, const GridSpec& grid, const SegConfig& seg = {});

/// crop -> resize_pad -> normalize for a single patch.
Tensor preprocess_patch(const Image& image, const Rect& rect, const PreprocessConfig& pp);
std::vector<Tensor> extract_patches(const Image& image, const PatchGrid& grid, const PreprocessConfig& pp);

/// Maps a canvas (network input) pixel of a patch back to image coordinates.
std::pair<double, double> canvas_to_image(const Rect& patch, const PreprocessConfig& pp, double cx, double cy);

struct PatchMeta {
    std::string case_id;
    int patch_index = 0;
    bool difficult = false;
    Rect rect;
};

struct LabeledPatches {
    Dataset data;
    std::vector<PatchMeta> meta;
};

/// Patches and argmax labels for every case in `split`.
LabeledPatches build_patch_dataset(const std::vector<CaseRecord>& cases, const std::filesystem::path& manifest,
                                   Split split, const PreprocessConfig& pp, const SegConfig& seg = {});

std::vector<ScoredItem> score_patches(const TinyResNet& net, const LabeledPatches& set);

/// Keeps manifest splits when any case has one, otherwise draws the 3:1 split.
std::vector<CaseRecord> ensure_splits(std::vector<CaseRecord> cases, std::uint64_t seed);

struct TrainJob {
    PreprocessConfig pp;
    TrainConfig train;
    int base_channels = 8;
    SegConfig seg;
};

struct TrainOutcome {
    Checkpoint checkpoint;
    std::vector<EpochRecord> history;
    std::vector<CaseRecord> cases;  // with the splits used
    LabeledPatches val;
};

/// Manifest -> split -> patches -> labels -> train, seeded by job.train.seed.
TrainOutcome train_from_manifest(const std::filesystem::path& manifest, const TrainJob& job,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace cxr
