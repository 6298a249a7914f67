#include "cxr/pipeline.hpp"

#include <algorithm>

#include "cxr/error.hpp"

namespace cxr {

nlohmann::json PreprocessConfig::to_json() const {
    return {{"patch_size", patch_size}, {"pad_value", int(pad_value)}, {"mean", mean}, {"std", std},
            {"grid", cxr::to_json(grid)}};
}

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j) {
    PreprocessConfig pp;
    pp.patch_size = j.value("patch_size", pp.patch_size);
    pp.pad_value = std::uint8_t(j.value("pad_value", int(pp.pad_value)));
    pp.mean = j.value("mean", pp.mean);
    pp.std = j.value("std", pp.std);
    if (j.contains("grid")) pp.grid = grid_spec_from_json(j["grid"]);
    return pp;
}

CaseGeometry locate_image(Image image, std::optional<Mask> mask, const GridSpec& grid, const SegConfig& seg) {
    CaseGeometry g;
    g.mask_from_file = mask.has_value();
    g.mask = mask ? std::move(*mask) : segment_lungs(image, seg);
    g.image = std::move(image);
    g.boxes = mask_to_lung_boxes(g.mask);
    g.grid = build_grid(g.boxes.left, g.boxes.right, grid);
    return g;
}

CaseGeometry locate_case(const CaseRecord& c, const std::filesystem::path& manifest, const GridSpec& grid,
                         const SegConfig& seg) {
    Image image = load_pgm(resolve_manifest_path(manifest, c.image_path));
    std::optional<Mask> mask;
    if (c.mask_path)
        mask = load_mask(resolve_manifest_path(manifest, *c.mask_path), std::pair{image.width, image.height});
    try {
        return locate_image(std::move(image), std::move(mask), grid, seg);
    } catch (const Error& e) {
        throw Error(e.code(), "case " + c.case_id + ": " + e.what());
    }
}

Tensor preprocess_patch(const Image& image, const Rect& rect, const PreprocessConfig& pp) {
    return normalize(resize_pad(crop(image, rect), pp.patch_size, pp.pad_value), pp.mean, pp.std);
}

std::vector<Tensor> extract_patches(const Image& image, const PatchGrid& grid, const PreprocessConfig& pp) {
    std::vector<Tensor> out;
    out.reserve(grid.size());
    for (const auto& r : grid.all()) out.push_back(preprocess_patch(image, r, pp));
    return out;
}

std::pair<double, double> canvas_to_image(const Rect& patch, const PreprocessConfig& pp, double cx, double cy) {
    const PadLayout l = pad_layout(patch.w, patch.h, pp.patch_size);
    // canvas pixel centre -> scaled-image pixel -> source pixel (half-pixel convention)
    const double sx = (cx - l.offset_x + 0.5) * double(patch.w) / l.scaled_w - 0.5;
    const double sy = (cy - l.offset_y + 0.5) * double(patch.h) / l.scaled_h - 0.5;
    return {patch.x + sx, patch.y + sy};
}

LabeledPatches build_patch_dataset(const std::vector<CaseRecord>& cases, const std::filesystem::path& manifest,
                                   Split split, const PreprocessConfig& pp, const SegConfig& seg) {
    LabeledPatches out;
    for (const auto& c : cases) {
        if (c.split != split) continue;
        const CaseGeometry g = locate_case(c, manifest, pp.grid, seg);
        PatchLabelVector labels;
        try {
            labels = assign_patch_labels(g.grid, c.nodules);
        } catch (const UncoveredNoduleError& e) {
            std::vector<std::string> ids;
            for (const auto& id : e.nodule_ids()) ids.push_back(c.case_id + "/" + id);
            throw UncoveredNoduleError(std::move(ids));
        }
        const auto rects = g.grid.all();
        for (std::size_t i = 0; i < rects.size(); ++i) {
            out.data.inputs.push_back(preprocess_patch(g.image, rects[i], pp));
            out.data.targets.push_back(labels[i] ? 1 : 0);
            out.meta.push_back({c.case_id, int(i), c.difficult, rects[i]});
        }
    }
    return out;
}

std::vector<ScoredItem> score_patches(const TinyResNet& net, const LabeledPatches& set) {
    std::vector<ScoredItem> items;
    items.reserve(set.data.size());
    for (std::size_t i = 0; i < set.data.size(); ++i) {
        const auto p = predict(net, set.data.inputs[i]);
        items.push_back({p.p_positive, set.data.targets[i] == 1, set.meta[i].case_id, set.meta[i].patch_index,
                         set.meta[i].difficult});
    }
    return items;
}

std::vector<CaseRecord> ensure_splits(std::vector<CaseRecord> cases, std::uint64_t seed) {
    const bool any = std::any_of(cases.begin(), cases.end(), [](const CaseRecord& c) { return c.split != Split::Unassigned; });
    return any ? cases : split_cases(std::move(cases), seed);
}

TrainOutcome train_from_manifest(const std::filesystem::path& manifest, const TrainJob& job,
                                 const std::function<void(const EpochRecord&)>& on_epoch) {
    job.train.validate();
    TrainOutcome out;
    out.cases = ensure_splits(read_manifest(manifest), job.train.seed);
    const LabeledPatches train_set = build_patch_dataset(out.cases, manifest, Split::Train, job.pp, job.seg);
    out.val = build_patch_dataset(out.cases, manifest, Split::Val, job.pp, job.seg);
    if (train_set.data.size() == 0) throw Error(ErrorCode::DegenerateData, "no training cases in " + manifest.string());
    TinyResNet net = TinyResNet::initialized(1, job.base_channels, job.train.seed);
    TrainResult r = train(std::move(net), train_set.data, out.val.data, job.train, on_epoch);
    out.history = std::move(r.history);
    out.checkpoint.net = std::move(r.net);
    out.checkpoint.config = job.train;
    out.checkpoint.weights_used = r.weights_used;
    out.checkpoint.preprocess = job.pp.to_json();
    return out;
}

}  // namespace cxr
