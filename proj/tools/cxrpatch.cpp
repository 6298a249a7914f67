// cxrpatch: batch entry points for the lung-patch workbench.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cxr/error.hpp"
#include "cxr/metrics.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/service.hpp"
#include "cxr/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cxr;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

int exit_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidAnnotation:
    case ErrorCode::GridMismatch:
    case ErrorCode::Conflict:
    case ErrorCode::ServiceNotReady: return kExitConfig;
    default: return kExitData;
    }
}

struct Globals {
    std::uint64_t seed = 0;
    fs::path manifest;
    fs::path out_dir = ".";
};

struct GridOpts {
    int patches = 16;
    double overlap = 0.25;

    GridSpec spec() const {
        GridSpec g;
        if (patches == 16) g = GridSpec::sixteen();
        else if (patches == 6) g = GridSpec::six();
        else throw Error(ErrorCode::InvalidConfig, "--grid must be 16 or 6");
        g.overlap = overlap;
        g.validate();
        return g;
    }
};

void add_grid_opts(CLI::App* sub, GridOpts& g) {
    sub->add_option("--grid", g.patches, "Patches per image: 16 (2x4 per lung) or 6 (1x3 per lung)")
        ->check(CLI::IsMember({16, 6}));
    sub->add_option("--overlap", g.overlap, "Overlap fraction between adjacent patches")->check(CLI::Range(0.0, 0.95));
}

struct SegOpts {
    std::string threshold = "otsu";
    int open_radius = 2;
    int close_radius = 4;
    double min_area = 0.02;

    SegConfig config() const {
        SegConfig c;
        if (threshold == "otsu") {
            c.threshold_mode = ThresholdMode::Otsu;
        } else {
            c.threshold_mode = ThresholdMode::Fixed;
            try {
                c.fixed_threshold = std::stoi(threshold);
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidConfig, "--seg-threshold takes 'otsu' or an intensity");
            }
        }
        c.open_radius = open_radius;
        c.close_radius = close_radius;
        c.min_component_area = min_area;
        c.validate();
        return c;
    }
};

void add_seg_opts(CLI::App* sub, SegOpts& s) {
    sub->add_option("--seg-threshold", s.threshold, "otsu or a fixed intensity in 0..255");
    sub->add_option("--open-radius", s.open_radius, "Opening radius (square element)");
    sub->add_option("--close-radius", s.close_radius, "Closing radius (square element)");
    sub->add_option("--min-area", s.min_area, "Minimum lung component as a fraction of the image");
}

const Globals* globals = nullptr;

void need_manifest() {
    if (globals->manifest.empty()) throw Error(ErrorCode::InvalidConfig, "--manifest is required");
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
    return out;
}

CaseRecord find_case(const std::vector<CaseRecord>& cases, const std::string& id) {
    for (const auto& c : cases)
        if (c.case_id == id) return c;
    throw Error(ErrorCode::NotFound, "case '" + id + "' not in " + globals->manifest.string());
}

/// Geometry of either a single image (--in/--mask) or a manifest case (--case).
CaseGeometry locate_target(const std::string& in, const std::string& mask, const std::string& case_id,
                           const GridSpec& grid, const SegConfig& seg) {
    if (!case_id.empty()) {
        need_manifest();
        return locate_case(find_case(read_manifest(globals->manifest), case_id), globals->manifest, grid, seg);
    }
    if (in.empty()) throw Error(ErrorCode::InvalidConfig, "give --in <image> or --case <id>");
    Image img = load_pgm(in);
    std::optional<Mask> m;
    if (!mask.empty()) m = load_mask(mask, std::pair{img.width, img.height});
    return locate_image(std::move(img), std::move(m), grid, seg);
}

std::string patch_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%02zu.pgm", i);
    return buf;
}

json geometry_line(const PatchGrid& grid, std::size_t i) {
    const Rect& r = grid.at(i);
    return {{"patch_index", i}, {"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h},
            {"lung", grid.lung_of(i) == 0 ? "left" : "right"}};
}

// -- subcommands --------------------------------------------------------------

struct GenSyntheticCmd {
    int n = 200;
    int size = 256;
    bool masks = false;

    int run() const {
        SyntheticConfig cfg;
        cfg.size = size;
        const auto cases = generate_synthetic(n, globals->seed, globals->out_dir, masks, cfg);
        int positives = 0, difficult = 0;
        for (const auto& c : cases) {
            positives += c.nodules.empty() ? 0 : 1;
            difficult += c.difficult ? 1 : 0;
        }
        std::cout << "wrote " << cases.size() << " cases (" << positives << " with nodules, " << difficult
                  << " difficult) to " << (globals->out_dir / "manifest.jsonl").string() << "\n";
        return 0;
    }
};

struct SegmentCmd {
    std::string in, out, truth;
    SegOpts seg;

    int run() const {
        const SegConfig cfg = seg.config();
        if (!in.empty()) {
            if (out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required with --in");
            const Image img = load_pgm(in);
            const Mask m = segment_lungs(img, cfg);
            if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
            save_pgm(mask_to_image(m), out);
            if (!truth.empty()) std::cout << "iou " << iou(m, load_mask(truth, std::pair{img.width, img.height})) << "\n";
            return 0;
        }
        // manifest mode: one mask per case plus a manifest that points at them
        need_manifest();
        auto cases = read_manifest(globals->manifest);
        const fs::path mask_dir = globals->out_dir / "masks";
        fs::create_directories(mask_dir);
        auto report = open_out(globals->out_dir / "segment.jsonl");
        double min_iou = 1.0;
        bool have_truth = false;
        for (auto& c : cases) {
            const fs::path image_path = resolve_manifest_path(globals->manifest, c.image_path);
            const Image img = load_pgm(image_path);
            Mask m;
            try {
                m = segment_lungs(img, cfg);
            } catch (const Error& e) {
                throw Error(e.code(), "case " + c.case_id + ": " + e.what());
            }
            const std::string rel = "masks/" + c.case_id + "_mask.pgm";
            save_pgm(mask_to_image(m), globals->out_dir / rel);
            json line = {{"case_id", c.case_id}, {"mask", rel}};
            const fs::path truth_path = synthetic_truth_path(globals->manifest.parent_path(), c.case_id);
            if (fs::exists(truth_path)) {
                const double v = iou(m, load_mask(truth_path, std::pair{img.width, img.height}));
                line["iou"] = v;
                min_iou = std::min(min_iou, v);
                have_truth = true;
            }
            report << line.dump() << "\n";
            c.image_path = fs::absolute(image_path).lexically_normal().string();
            c.mask_path = rel;
        }
        write_manifest(cases, globals->out_dir / "manifest.jsonl");
        std::cout << "segmented " << cases.size() << " cases";
        if (have_truth) std::cout << ", min IoU vs truth " << min_iou;
        std::cout << "\n";
        return 0;
    }
};

struct SliceCmd {
    std::string in, mask, case_id;
    int patch_size = 0;
    GridOpts grid;
    SegOpts seg;

    void slice_one(const CaseGeometry& g, const fs::path& dir) const {
        fs::create_directories(dir);
        auto sidecar = open_out(dir / "geometry.jsonl");
        for (std::size_t i = 0; i < g.grid.size(); ++i) {
            Image patch = crop(g.image, g.grid.at(i));
            if (patch_size > 0) patch = resize_pad(patch, patch_size);
            save_pgm(patch, dir / patch_name(i));
            sidecar << geometry_line(g.grid, i).dump() << "\n";
        }
    }

    int run() const {
        const GridSpec spec = grid.spec();
        const SegConfig cfg = seg.config();
        if (!in.empty() || !case_id.empty()) {
            const auto g = locate_target(in, mask, case_id, spec, cfg);
            const std::string name = case_id.empty() ? fs::path(in).stem().string() : case_id;
            slice_one(g, globals->out_dir / name);
            std::cout << "wrote " << g.grid.size() << " patches to " << (globals->out_dir / name).string() << "\n";
            return 0;
        }
        need_manifest();
        const auto cases = read_manifest(globals->manifest);
        for (const auto& c : cases) slice_one(locate_case(c, globals->manifest, spec, cfg), globals->out_dir / c.case_id);
        std::cout << "sliced " << cases.size() << " cases into " << spec.total() << " patches each\n";
        return 0;
    }
};

struct LabelTransformCmd {
    std::string mode = "argmax";
    GridOpts grid;
    SegOpts seg;

    int run() const {
        need_manifest();
        const GridSpec spec = grid.spec();
        const SegConfig cfg = seg.config();
        const LabelMode lm = mode == "all" ? LabelMode::AllIntersecting : LabelMode::Argmax;
        auto out = open_out(globals->out_dir / "labels.jsonl");
        std::vector<std::string> uncovered;
        std::size_t n_pos = 0, n_cases = 0;
        for (const auto& c : read_manifest(globals->manifest)) {
            const auto g = locate_case(c, globals->manifest, spec, cfg);
            try {
                const auto labels = assign_patch_labels(g.grid, c.nodules, lm);
                std::vector<int> bits, positives;
                for (std::size_t i = 0; i < labels.size(); ++i) {
                    bits.push_back(labels[i] ? 1 : 0);
                    if (labels[i]) positives.push_back(int(i));
                }
                n_pos += positives.size();
                ++n_cases;
                out << json{{"case_id", c.case_id}, {"grid", to_json(spec)}, {"labels", bits},
                            {"positives", positives}}.dump()
                    << "\n";
            } catch (const UncoveredNoduleError& e) {
                for (const auto& id : e.nodule_ids()) uncovered.push_back(c.case_id + "/" + id);
            }
        }
        if (!uncovered.empty()) {
            std::cerr << "error: " << uncovered.size() << " nodule(s) outside every patch:\n";
            for (const auto& u : uncovered) std::cerr << "  " << u << "\n";
            return kExitData;
        }
        std::cout << "labeled " << n_cases << " cases, " << n_pos << " positive patches\n";
        return 0;
    }
};

struct TrainCmd {
    int epochs = 60;
    int base_channels = 8;
    int batch_size = 32;
    double lr = 0.001;
    int warmup = 20;
    double eta_min = 0.0;
    double threshold = 0.9;
    int patch_size = 56;
    std::vector<double> class_weights;
    GridOpts grid;
    SegOpts seg;
    bool quiet = false;

    int run() const {
        need_manifest();
        TrainJob job;
        job.pp.patch_size = patch_size;
        job.pp.grid = grid.spec();
        job.seg = seg.config();
        job.base_channels = base_channels;
        job.train.total_epochs = epochs;
        job.train.batch_size = batch_size;
        job.train.base_lr = lr;
        job.train.warmup_epochs = warmup;
        job.train.eta_min = eta_min;
        job.train.threshold = threshold;
        job.train.seed = globals->seed;
        if (!class_weights.empty()) job.train.class_weights = ClassWeights{class_weights[0], class_weights[1]};
        fs::create_directories(globals->out_dir);
        auto history = open_out(globals->out_dir / "history.jsonl");
        const auto t0 = std::chrono::steady_clock::now();
        const auto outcome = train_from_manifest(globals->manifest, job, [&](const EpochRecord& r) {
            history << to_json(r).dump() << "\n";
            if (quiet) return;
            std::printf("epoch %3d  lr %.6f  loss %.5f  val AUROC %s  AUPR %s\n", r.epoch, r.lr, r.train_loss,
                        r.val_auroc ? std::to_string(*r.val_auroc).c_str() : "undef",
                        r.val_aupr ? std::to_string(*r.val_aupr).c_str() : "undef");
            std::fflush(stdout);
        });
        save_checkpoint(outcome.checkpoint, globals->out_dir / "checkpoint.json");
        auto splits = open_out(globals->out_dir / "splits.jsonl");
        for (const auto& c : outcome.cases)
            splits << json{{"case_id", c.case_id}, {"split", std::string(to_string(c.split))}}.dump() << "\n";
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("trained %d epochs in %.1f s; checkpoint %s\n", epochs, secs,
                    (globals->out_dir / "checkpoint.json").string().c_str());
        return 0;
    }
};

struct EvalCmd {
    std::string checkpoint, scores, split = "val";
    std::optional<double> threshold;
    bool case_level = false;
    SegOpts seg;

    int run() const {
        std::vector<ScoredItem> items;
        double thr = threshold.value_or(0.9);
        if (!scores.empty()) {
            std::ifstream in(scores);
            if (!in) throw Error(ErrorCode::Io, "cannot open " + scores);
            std::string line;
            while (std::getline(in, line))
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    items.push_back(scored_item_from_json(json::parse(line)));
        } else {
            if (checkpoint.empty()) throw Error(ErrorCode::InvalidConfig, "give --scores <file> or --checkpoint <file>");
            need_manifest();
            const Checkpoint ck = load_checkpoint(checkpoint);
            if (!threshold) thr = ck.config.threshold;
            const PreprocessConfig pp = PreprocessConfig::from_json(ck.preprocess);
            const auto cases = ensure_splits(read_manifest(globals->manifest), globals->seed);
            const auto pick = [&](Split s) {
                auto set = build_patch_dataset(cases, globals->manifest, s, pp, seg.config());
                auto v = score_patches(ck.net, set);
                items.insert(items.end(), v.begin(), v.end());
            };
            if (split == "all") {
                for (Split s : {Split::Train, Split::Val, Split::Test}) pick(s);
            } else {
                pick(parse_split(split));
            }
            auto out = open_out(globals->out_dir / "scores.jsonl");
            for (const auto& it : items) out << to_json(it).dump() << "\n";
        }
        if (case_level) items = cxr::case_level(items);
        const SubgroupReport rep = subgroup_report(items, thr);
        const std::vector<EvalReport> rows{rep.overall, rep.without_difficult, rep.difficult_only};
        const std::string table = format_table(rows);
        std::cout << table;
        fs::create_directories(globals->out_dir);
        open_out(globals->out_dir / "eval_table.txt") << table;
        json j = json::array();
        for (const auto& r : rows) j.push_back(to_json(r));
        open_out(globals->out_dir / "report.json") << j.dump(2) << "\n";
        return 0;
    }

};

struct PredictCmd {
    std::string checkpoint, in, mask, case_id;
    SegOpts seg;

    int run() const {
        const Checkpoint ck = load_checkpoint(checkpoint);
        const PreprocessConfig pp = PreprocessConfig::from_json(ck.preprocess);
        const auto g = locate_target(in, mask, case_id, pp.grid, seg.config());
        const auto patches = extract_patches(g.image, g.grid, pp);
        for (std::size_t i = 0; i < patches.size(); ++i) {
            const Prediction p = predict(ck.net, patches[i], ck.config.threshold);
            json line = geometry_line(g.grid, i);
            line["p_positive"] = p.p_positive;
            line["label"] = p.label;
            std::cout << line.dump() << "\n";
        }
        return 0;
    }
};

struct CamCmd {
    std::string checkpoint, in, mask, case_id, out;
    int patch = -1;
    int cls = 1;
    SegOpts seg;

    int run() const {
        const Checkpoint ck = load_checkpoint(checkpoint);
        const PreprocessConfig pp = PreprocessConfig::from_json(ck.preprocess);
        const auto g = locate_target(in, mask, case_id, pp.grid, seg.config());
        std::vector<std::size_t> which;
        if (patch >= 0) {
            if (std::size_t(patch) >= g.grid.size())
                throw Error(ErrorCode::InvalidConfig, "--patch outside the " + std::to_string(g.grid.size()) + "-patch grid");
            which.push_back(std::size_t(patch));
        } else {
            for (std::size_t i = 0; i < g.grid.size(); ++i) which.push_back(i);
        }
        for (std::size_t i : which) {
            const Tensor x = preprocess_patch(g.image, g.grid.at(i), pp);
            const Heatmap h = cam(ck.net, x, cls);
            Image img(h.width, h.height);
            for (std::size_t k = 0; k < h.values.size(); ++k)
                img.data[k] = std::uint8_t(std::lround(std::clamp(h.values[k], 0.0, 1.0) * 255.0));
            const fs::path dest = (patch >= 0 && !out.empty()) ? fs::path(out) : globals->out_dir / ("cam_" + patch_name(i));
            if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
            save_pgm(img, dest);
            const auto [px, py] = h.argmax();
            const auto [ix, iy] = canvas_to_image(g.grid.at(i), pp, px, py);
            json line = geometry_line(g.grid, i);
            line["p_positive"] = predict(ck.net, x, ck.config.threshold).p_positive;
            line["peak_patch"] = {px, py};
            line["peak_image"] = {ix, iy};
            line["heatmap"] = dest.string();
            std::cout << line.dump() << "\n";
        }
        return 0;
    }
};

struct ServeCmd {
    std::string listen = "127.0.0.1:8080";
    std::string annotation_log, checkpoint, scores_log;
    GridOpts grid;
    SegOpts seg;

    int run() const {
        need_manifest();
        ServiceConfig cfg;
        const auto colon = listen.rfind(':');
        if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--listen takes host:port");
        cfg.host = listen.substr(0, colon);
        try {
            cfg.port = std::stoi(listen.substr(colon + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "bad port in --listen " + listen);
        }
        cfg.manifest = globals->manifest;
        cfg.annotation_log = annotation_log.empty() ? globals->out_dir / "annotations.jsonl" : fs::path(annotation_log);
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
        if (!scores_log.empty()) cfg.scores_log = scores_log;
        cfg.grid = grid.spec();
        cfg.seg = seg.config();
        Service svc(cfg);
        std::cout << "serving " << cfg.manifest.string() << " on http://" << listen
                  << (svc.ready() ? "" : " (no checkpoint: /predict disabled)") << std::endl;
        serve_http(svc);
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    Globals g;
    globals = &g;
    CLI::App app{"Lung-nodule patch workbench: segmentation, patch grids, labels, training and review"};
    app.require_subcommand(1);
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--manifest", g.manifest, "Case manifest (.jsonl)")->envname("CXR_MANIFEST");
    app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

    GenSyntheticCmd gen;
    auto* s_gen = app.add_subcommand("gen-synthetic", "Write the deterministic synthetic dataset");
    s_gen->add_option("--n", gen.n, "Number of cases")->check(CLI::PositiveNumber);
    s_gen->add_option("--size", gen.size, "Image side in pixels");
    s_gen->add_flag("--masks", gen.masks, "Point the manifest at the truth masks");

    SegmentCmd seg;
    auto* s_seg = app.add_subcommand("segment", "Lung mask by the threshold/morphology baseline");
    s_seg->add_option("--in", seg.in, "Input PGM (omit to segment every manifest case)");
    s_seg->add_option("--out", seg.out, "Output mask PGM");
    s_seg->add_option("--truth", seg.truth, "Reference mask; prints IoU");
    add_seg_opts(s_seg, seg.seg);

    SliceCmd sl;
    auto* s_slice = app.add_subcommand("slice", "Cut lung boxes into overlapping patches");
    s_slice->add_option("--in", sl.in, "Input PGM");
    s_slice->add_option("--mask", sl.mask, "Lung mask PGM (segmented when absent)");
    s_slice->add_option("--case", sl.case_id, "Manifest case id");
    s_slice->add_option("--patch-size", sl.patch_size, "Resize-pad patches to this side (0 keeps the raw crop)");
    add_grid_opts(s_slice, sl.grid);
    add_seg_opts(s_slice, sl.seg);

    LabelTransformCmd lt;
    auto* s_lt = app.add_subcommand("label-transform", "Nodule boxes to per-patch labels");
    s_lt->add_option("--mode", lt.mode, "argmax (one patch per nodule) or all")->check(CLI::IsMember({"argmax", "all"}));
    add_grid_opts(s_lt, lt.grid);
    add_seg_opts(s_lt, lt.seg);

    TrainCmd tr;
    auto* s_train = app.add_subcommand("train", "Train the patch classifier");
    s_train->add_option("--epochs", tr.epochs, "Total epochs (cosine horizon)");
    s_train->add_option("--base-channels", tr.base_channels, "Base channel count F");
    s_train->add_option("--batch-size", tr.batch_size);
    s_train->add_option("--lr", tr.lr, "Base learning rate");
    s_train->add_option("--warmup", tr.warmup, "Constant-rate warm-up epochs");
    s_train->add_option("--eta-min", tr.eta_min, "Final learning rate");
    s_train->add_option("--threshold", tr.threshold, "Positive decision threshold (strict)");
    s_train->add_option("--patch-size", tr.patch_size, "Network input side");
    s_train->add_option("--class-weights", tr.class_weights, "w_neg w_pos (default: inverse frequency)")
        ->expected(2);
    s_train->add_flag("--quiet", tr.quiet);
    add_grid_opts(s_train, tr.grid);
    add_seg_opts(s_train, tr.seg);

    EvalCmd ev;
    auto* s_eval = app.add_subcommand("eval", "AUROC/AUPR/sensitivity/specificity by difficulty subgroup");
    s_eval->add_option("--checkpoint", ev.checkpoint);
    s_eval->add_option("--scores", ev.scores, "Pre-scored items (.jsonl) instead of a checkpoint");
    s_eval->add_option("--split", ev.split, "train|val|test|all")->check(CLI::IsMember({"train", "val", "test", "all"}));
    s_eval->add_option("--threshold", ev.threshold, "Defaults to the checkpoint's threshold");
    s_eval->add_flag("--case-level", ev.case_level, "Score each case by its highest patch");
    add_seg_opts(s_eval, ev.seg);

    PredictCmd pr;
    auto* s_pred = app.add_subcommand("predict", "Per-patch positive probabilities for one image");
    s_pred->add_option("--checkpoint", pr.checkpoint)->required();
    s_pred->add_option("--in", pr.in);
    s_pred->add_option("--mask", pr.mask);
    s_pred->add_option("--case", pr.case_id);
    add_seg_opts(s_pred, pr.seg);

    CamCmd cm;
    auto* s_cam = app.add_subcommand("cam", "Class activation heatmaps");
    s_cam->add_option("--checkpoint", cm.checkpoint)->required();
    s_cam->add_option("--in", cm.in);
    s_cam->add_option("--mask", cm.mask);
    s_cam->add_option("--case", cm.case_id);
    s_cam->add_option("--patch", cm.patch, "Single patch index (default: all)");
    s_cam->add_option("--class", cm.cls, "0 negative, 1 positive")->check(CLI::IsMember({0, 1}));
    s_cam->add_option("--out", cm.out, "Heatmap PGM for --patch");
    add_seg_opts(s_cam, cm.seg);

    ServeCmd sv;
    auto* s_serve = app.add_subcommand("serve", "HTTP annotation and triage service");
    s_serve->add_option("--listen", sv.listen, "host:port")->envname("CXR_LISTEN")->capture_default_str();
    s_serve->add_option("--annotation-log", sv.annotation_log)->envname("CXR_ANNOTATION_LOG");
    s_serve->add_option("--checkpoint", sv.checkpoint)->envname("CXR_CHECKPOINT");
    s_serve->add_option("--scores-log", sv.scores_log)->envname("CXR_SCORES_LOG");
    add_grid_opts(s_serve, sv.grid);
    add_seg_opts(s_serve, sv.seg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*s_gen) return gen.run();
        if (*s_seg) return seg.run();
        if (*s_slice) return sl.run();
        if (*s_lt) return lt.run();
        if (*s_train) return tr.run();
        if (*s_eval) return ev.run();
        if (*s_pred) return pr.run();
        if (*s_cam) return cm.run();
        if (*s_serve) return sv.run();
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}
