// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#include "cxr/labels.hpp"
#include "cxr/lunggrid.hpp"
#include "cxr/metrics.hpp"
#include "cxr/nnet.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/random.hpp"
#include "cxr/synthetic.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cxr;

namespace {

// End-to-end settings. 50 epochs keeps training inside the time budget on a
// single core with some margin.
constexpr int kCases = 200;
constexpr std::uint64_t kSeed = 42;
constexpr int kEpochs = 50;
constexpr double kTrainBudgetSeconds = 300.0;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << std::fixed << v;
    return s.str();
}

struct Run {
    int code = -1;
    std::string out;
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(CXRPATCH_BIN) + " " + args + " 2>&1";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<json> read_lines(const fs::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

Tensor random_tensor(Rng& rng, int c, int h, int w) {
    Tensor t(c, h, w);
    for (auto& v : t.values) v = rng.normal();
    return t;
}

// ---------------------------------------------------------------------------

void gradient_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    double worst = 0.0;
    std::size_t checked = 0, kinks = 0;
    std::string where;
    constexpr int kNets = 6;
    for (int k = 0; k < kNets; ++k) {
        TinyResNet net = TinyResNet::initialized(1, int(rng.uniform_int(1, 4)), rng.next());
        for (auto& p : net.parameters())
            if (p.name.find("bias") != std::string::npos)
                for (auto& v : p.values) v = 0.1 * rng.normal();
        std::vector<Tensor> xs;
        std::vector<int> ys;
        const int n = int(rng.uniform_int(2, 4));
        for (int i = 0; i < n; ++i) {
            const int h = int(rng.uniform_int(5, 10)), wd = int(rng.uniform_int(5, 10));
            xs.push_back(random_tensor(rng, 1, h, wd));
            ys.push_back(int(rng.uniform_int(0, 1)));
        }
        const ClassWeights w{rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)};
        const Gradients g = backward(net, xs, ys, w);
        const auto c = oracle::grad_check(net, g.grad, xs, ys, w);
        checked += c.checked;
        kinks += c.kinks;
        if (c.max_rel >= worst) {
            worst = c.max_rel;
            where = c.worst;
        }
    }
    const double secs = seconds_since(t0);
    // kink-straddling probes are excluded, but they must stay rare
    const bool few_kinks = kinks * 100 <= checked + kinks;
    report(worst < 1e-3 && few_kinks && secs < 30.0, "gradient oracle",
           std::to_string(kNets) + " nets, " + std::to_string(checked) + " parameters compared (" +
               std::to_string(kinks) + " skipped at ReLU kinks), max rel err " + std::to_string(worst) + " (" + where +
               "), " + fmt(secs, 1) + " s");
}

void metric_oracles() {
    Rng rng(7);
    double worst = 0.0;
    int sets = 0;
    for (int k = 0; k < 100; ++k, ++sets) {
        const std::size_t n = std::size_t(rng.uniform_int(2, 500));
        const int levels = int(rng.uniform_int(1, 20));
        std::vector<ScoredItem> items(n);
        for (auto& it : items) {
            it.truth = rng.bernoulli(0.3);
            it.score = double(rng.uniform_int(0, levels)) / levels;
        }
        items[0].truth = true;
        items[1].truth = false;
        const double brute = oracle::pairwise_auroc(items);
        worst = std::max({worst, std::abs(brute - auroc_trapezoid(items)), std::abs(brute - auroc(items))});
    }
    std::vector<ScoredItem> fx(4);
    const double fx_scores[] = {0.9, 0.4, 0.6, 0.2};
    for (std::size_t i = 0; i < 4; ++i) {
        fx[i].score = fx_scores[i];
        fx[i].truth = i < 2;
    }
    const double a = auroc(fx), t = auroc_trapezoid(fx), p = aupr(fx);
    const bool fixtures = a == 0.75 && t == 0.75 && std::abs(p - 5.0 / 6.0) < 1e-15;
    report(worst <= 1e-12 && fixtures, "metric oracles",
           std::to_string(sets) + " tied sets, max |pairwise - trapezoid| " + std::to_string(worst) +
               "; fixture AUROC " + fmt(a, 6) + " AUPR " + fmt(p, 6));
}

void geometry_properties() {
    Rng rng(31);
    int bad_cover = 0, bad_overlap = 0;
    for (int k = 0; k < 1000; ++k) {
        const GridSpec s{int(rng.uniform_int(1, 5)), int(rng.uniform_int(1, 6)), rng.uniform(0.0, 0.49)};
        const Rect box{int(rng.uniform_int(0, 300)), int(rng.uniform_int(0, 300)),
                       int(rng.uniform_int(3 * s.cols_per_lung, 500)), int(rng.uniform_int(3 * s.rows_per_lung, 700))};
        const auto rects = build_lung_grid(box, s);
        if (rects.size() != std::size_t(s.per_lung()) || !oracle::pixel_sweep_covers(rects, box) ||
            !oracle::pixel_sweep_inside(rects, box))
            ++bad_cover;
        const double pw = box.w / (s.cols_per_lung - (s.cols_per_lung - 1) * s.overlap);
        const double ph = box.h / (s.rows_per_lung - (s.rows_per_lung - 1) * s.overlap);
        const int ox = int(std::floor(s.overlap * pw)), oy = int(std::floor(s.overlap * ph));
        for (int r = 0; r < s.rows_per_lung; ++r)
            for (int c = 0; c < s.cols_per_lung; ++c) {
                const Rect& a = rects[std::size_t(r * s.cols_per_lung + c)];
                if (c + 1 < s.cols_per_lung && std::abs(a.right() - rects[std::size_t(r * s.cols_per_lung + c + 1)].x - ox) > 1)
                    ++bad_overlap;
                if (r + 1 < s.rows_per_lung &&
                    std::abs(a.bottom() - rects[std::size_t((r + 1) * s.cols_per_lung + c)].y - oy) > 1)
                    ++bad_overlap;
            }
    }
    const Rect l{20, 30, 90, 180}, r{140, 28, 95, 185};
    const std::size_t n16 = build_grid(l, r, GridSpec::sixteen()).size();
    const std::size_t n6 = build_grid(l, r, GridSpec::six()).size();
    report(bad_cover == 0 && bad_overlap == 0 && n16 == 16 && n6 == 6, "geometry properties",
           "1000 random pairs, " + std::to_string(bad_cover) + " coverage failures, " + std::to_string(bad_overlap) +
               " overlap failures; presets " + std::to_string(n16) + "/" + std::to_string(n6));
}

void label_oracle() {
    Rng rng(53);
    int mismatches = 0, multi = 0, nodules_total = 0;
    for (int k = 0; k < 1000; ++k) {
        const GridSpec spec{int(rng.uniform_int(1, 3)), int(rng.uniform_int(1, 4)), rng.uniform(0.0, 0.45)};
        const Rect l{int(rng.uniform_int(0, 30)), int(rng.uniform_int(0, 30)), int(rng.uniform_int(12, 90)),
                     int(rng.uniform_int(16, 140))};
        const Rect r{l.right() + int(rng.uniform_int(0, 20)), int(rng.uniform_int(0, 30)), int(rng.uniform_int(12, 90)),
                     int(rng.uniform_int(16, 140))};
        const PatchGrid g = build_grid(l, r, spec);
        std::vector<NoduleBox> nodules;
        const int n = int(rng.uniform_int(1, 4));
        for (int i = 0; i < n; ++i) {
            const Rect& lung = rng.bernoulli(0.5) ? l : r;
            const int w = int(rng.uniform_int(1, 25)), h = int(rng.uniform_int(1, 25));
            nodules.push_back({{lung.x + int(rng.uniform_int(0, lung.w - 1)) - w / 2,
                                lung.y + int(rng.uniform_int(0, lung.h - 1)) - h / 2, w, h},
                               "n" + std::to_string(i)});
        }
        nodules_total += n;
        const auto want = oracle::argmax_patches(g.all(), nodules);
        const auto got = assign_patch_labels(g, nodules);
        std::vector<int> expected(g.size(), 0);
        for (int idx : want) expected[std::size_t(idx)] = 1;
        for (std::size_t i = 0; i < got.size(); ++i)
            if (int(got[i]) != expected[i]) {
                ++mismatches;
                break;
            }
        // each nodule alone marks exactly one patch
        for (const auto& nod : nodules) {
            const auto one = assign_patch_labels(g, std::vector<NoduleBox>{nod});
            if (std::count(one.begin(), one.end(), true) != 1) ++multi;
        }
    }
    report(mismatches == 0 && multi == 0, "label algebra oracle",
           "1000 instances, " + std::to_string(nodules_total) + " nodules, " + std::to_string(mismatches) +
               " mismatches, " + std::to_string(multi) + " nodules without exactly one positive");
}

void schedule() {
    TrainConfig cfg;
    cfg.total_epochs = 60;
    cfg.warmup_epochs = 20;
    cfg.eta_min = 1e-4;
    const double base = cfg.base_lr;
    const double e0 = std::abs(lr_at(cfg, 0) - 0.001);
    const double ew = std::abs(lr_at(cfg, cfg.warmup_epochs) - 0.001);
    const double em = std::abs(lr_at(cfg, 40) - (base + cfg.eta_min) / 2);
    const double el = std::abs(lr_at(cfg, cfg.total_epochs) - cfg.eta_min);
    const double worst = std::max({e0, ew, em, el});
    report(worst <= 1e-15, "schedule",
           "lr(0) lr(20) lr(40) lr(60) max abs err " + std::to_string(worst) + " (warmup 20, total 60, eta_min 1e-4)");
}

// ---------------------------------------------------------------------------

struct EndToEnd {
    fs::path root;
    fs::path seg_manifest;
    fs::path checkpoint;
    bool trained = false;
};

void end_to_end(EndToEnd& e) {
    const fs::path data = e.root / "data", seg = e.root / "seg", slices = e.root / "slices", labels = e.root / "labels",
                   model = e.root / "model", eval = e.root / "eval";
    std::vector<std::string> problems;
    const std::string seed = "--seed " + std::to_string(kSeed);

    if (cli(seed + " --out-dir " + q(data) + " gen-synthetic --n " + std::to_string(kCases)).code != 0) {
        report(false, "synthetic end-to-end", "gen-synthetic failed");
        return;
    }
    const Run sr = cli("--manifest " + q(data / "manifest.jsonl") + " --out-dir " + q(seg) + " segment");
    const auto seg_lines = read_lines(seg / "segment.jsonl");
    double min_iou = 1.0;
    for (const auto& l : seg_lines) min_iou = std::min(min_iou, l.value("iou", 0.0));
    if (sr.code != 0 || seg_lines.size() != std::size_t(kCases) || min_iou < 0.85)
        problems.push_back("segmentation min IoU " + fmt(min_iou) + " over " + std::to_string(seg_lines.size()) +
                           " cases");
    e.seg_manifest = seg / "manifest.jsonl";
    const std::string manifest = "--manifest " + q(e.seg_manifest);

    const Run sl = cli(manifest + " --out-dir " + q(slices) + " slice");
    std::size_t patch_files = 0;
    if (fs::exists(slices))
        for (const auto& f : fs::recursive_directory_iterator(slices)) patch_files += f.path().extension() == ".pgm";
    if (sl.code != 0 || patch_files != std::size_t(16 * kCases))
        problems.push_back("slice wrote " + std::to_string(patch_files) + " patches");

    const Run lt = cli(manifest + " --out-dir " + q(labels) + " label-transform");
    const auto label_lines = read_lines(labels / "labels.jsonl");
    std::size_t positive_patches = 0;
    for (const auto& l : label_lines) positive_patches += l["positives"].size();
    if (lt.code != 0 || label_lines.size() != std::size_t(kCases))
        problems.push_back("label-transform: " + lt.out);

    const auto t0 = std::chrono::steady_clock::now();
    const Run tr = cli(seed + " " + manifest + " --out-dir " + q(model) + " train --epochs " + std::to_string(kEpochs) +
                       " --quiet");
    const double train_secs = seconds_since(t0);
    e.checkpoint = model / "checkpoint.json";
    e.trained = tr.code == 0;
    const auto history = read_lines(model / "history.jsonl");
    const auto splits = read_lines(model / "splits.jsonl");
    const auto n_val = std::count_if(splits.begin(), splits.end(), [](const json& j) { return j["split"] == "val"; });
    if (!e.trained || history.size() != std::size_t(kEpochs)) problems.push_back("train: " + tr.out);
    if (train_secs > kTrainBudgetSeconds) problems.push_back("training took " + fmt(train_secs, 1) + " s");
    if (n_val != kCases / 4 || splits.size() != std::size_t(kCases))
        problems.push_back("split has " + std::to_string(n_val) + " val cases");

    const Run ev = cli(seed + " " + manifest + " --out-dir " + q(eval) + " eval --checkpoint " + q(e.checkpoint));
    double auc = 0.0, ap = 0.0;
    if (ev.code == 0) {
        std::ifstream in(eval / "report.json");
        const json rep = json::parse(in);
        auc = rep[0]["auroc"].is_null() ? 0.0 : rep[0]["auroc"].get<double>();
        ap = rep[0]["aupr"].is_null() ? 0.0 : rep[0]["aupr"].get<double>();
        std::cout << ev.out;
    } else {
        problems.push_back("eval: " + ev.out);
    }
    if (auc < 0.90) problems.push_back("val AUROC " + fmt(auc) + " < 0.90");
    if (ap < 0.60) problems.push_back("val AUPR " + fmt(ap) + " < 0.60");

    std::string detail = std::to_string(kCases) + " cases, min seg IoU " + fmt(min_iou) + ", " +
                         std::to_string(positive_patches) + " positive patches, " + std::to_string(kEpochs) +
                         " epochs in " + fmt(train_secs, 1) + " s, val AUROC " + fmt(auc) + " AUPR " + fmt(ap);
    for (const auto& p : problems) detail += "; " + p;
    report(problems.empty(), "synthetic end-to-end", detail);
}

void cam_localization(const EndToEnd& e) {
    if (!e.trained) {
        report(false, "CAM localization", "no trained model");
        return;
    }
    const Checkpoint ck = load_checkpoint(e.checkpoint);
    const PreprocessConfig pp = PreprocessConfig::from_json(ck.preprocess);
    const auto cases = ensure_splits(read_manifest(e.seg_manifest), kSeed);
    const auto val = build_patch_dataset(cases, e.seg_manifest, Split::Val, pp);
    std::map<std::string, const CaseRecord*> by_id;
    for (const auto& c : cases) by_id[c.case_id] = &c;
    int tp = 0, inside = 0;
    for (std::size_t i = 0; i < val.data.size(); ++i) {
        if (val.data.targets[i] != 1) continue;
        const Prediction p = predict(ck.net, val.data.inputs[i], ck.config.threshold);
        if (!p.label) continue;
        ++tp;
        const PatchMeta& m = val.meta[i];
        const auto [cx, cy] = cam(ck.net, val.data.inputs[i], 1).argmax();
        const auto [ix, iy] = canvas_to_image(m.rect, pp, cx, cy);
        for (const auto& n : by_id.at(m.case_id)->nodules) {
            const Rect& b = n.rect;
            if (ix >= b.x - 0.5 && ix <= b.x + b.w - 0.5 && iy >= b.y - 0.5 && iy <= b.y + b.h - 0.5) {
                ++inside;
                break;
            }
        }
    }
    const double frac = tp ? double(inside) / tp : 0.0;
    report(tp > 0 && frac >= 0.80, "CAM localization",
           std::to_string(inside) + "/" + std::to_string(tp) + " true-positive patches peak inside the nodule box (" +
               fmt(100 * frac, 1) + "%)");
}

void determinism(const fs::path& root) {
    std::vector<std::string> problems;
    const fs::path a = root / "det_a", b = root / "det_b";
    for (const auto& d : {a, b})
        if (cli("--seed 9 --out-dir " + q(d / "data") + " gen-synthetic --n 24").code != 0)
            problems.push_back("gen-synthetic failed");
    const auto ta = oracle::tree(a / "data");
    if (ta != oracle::tree(b / "data") || ta.empty()) problems.push_back("synthetic datasets differ");
    for (const auto& d : {a, b})
        if (cli("--seed 9 --manifest " + q(d / "data/manifest.jsonl") + " --out-dir " + q(d / "model") +
                " train --epochs 3 --warmup 1 --base-channels 4 --patch-size 24 --quiet")
                .code != 0)
            problems.push_back("train failed");
    const bool same_ckpt = oracle::slurp(a / "model/checkpoint.json") == oracle::slurp(b / "model/checkpoint.json");
    const bool same_split = oracle::slurp(a / "model/splits.jsonl") == oracle::slurp(b / "model/splits.jsonl");
    if (!same_ckpt) problems.push_back("checkpoints differ");
    if (!same_split) problems.push_back("splits differ");
    std::string detail = std::to_string(ta.size()) + " dataset files, checkpoint and splits compared byte for byte";
    for (const auto& p : problems) detail += "; " + p;
    report(problems.empty(), "determinism", detail);
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / ("cxr_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);

    const auto guard = [](auto&& fn, const std::string& name) {
        try {
            fn();
        } catch (const std::exception& ex) {
            report(false, name, std::string("exception: ") + ex.what());
        }
    };
    guard(gradient_oracle, "gradient oracle");
    guard(metric_oracles, "metric oracles");
    guard(geometry_properties, "geometry properties");
    guard(label_oracle, "label algebra oracle");
    guard(schedule, "schedule");
    EndToEnd e;
    e.root = root;
    guard([&] { end_to_end(e); }, "synthetic end-to-end");
    guard([&] { cam_localization(e); }, "CAM localization");
    guard([&] { determinism(root); }, "determinism");

    std::error_code ec;
    fs::remove_all(root, ec);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
