#include "cxr/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "cxr/error.hpp"

namespace cxr {

double iou(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height) throw Error(ErrorCode::Shape, "IoU of masks with different shapes");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
        inter += (x && y);
        uni += (x || y);
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

namespace {

struct ClassCounts {
    std::int64_t pos = 0, neg = 0;
};

ClassCounts count_classes(std::span<const ScoredItem> items) {
    ClassCounts c;
    for (const auto& it : items) (it.truth ? c.pos : c.neg)++;
    return c;
}

void require_both_classes(const ClassCounts& c, const char* metric) {
    if (c.pos == 0 || c.neg == 0)
        throw Error(ErrorCode::UndefinedMetric, std::string(metric) + " needs at least one positive and one negative");
}

std::vector<ScoredItem> sorted_desc(std::span<const ScoredItem> items) {
    std::vector<ScoredItem> v(items.begin(), items.end());
    std::stable_sort(v.begin(), v.end(), [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });
    return v;
}

/// Calls f(block_pos, block_neg) for each block of equal scores, highest first.
template <typename F>
void for_each_tie_block(const std::vector<ScoredItem>& desc, F&& f) {
    std::size_t i = 0;
    while (i < desc.size()) {
        std::size_t j = i;
        std::int64_t p = 0, n = 0;
        while (j < desc.size() && desc[j].score == desc[i].score) {
            (desc[j].truth ? p : n)++;
            ++j;
        }
        f(p, n);
        i = j;
    }
}

}  // namespace

double auroc(std::span<const ScoredItem> items) {
    const auto counts = count_classes(items);
    require_both_classes(counts, "AUROC");
    // Walk ascending: each positive beats every negative seen in earlier blocks.
    auto desc = sorted_desc(items);
    std::reverse(desc.begin(), desc.end());
    std::int64_t neg_below = 0;
    std::int64_t twice_wins = 0;  // doubled so ties stay integral
    for_each_tie_block(desc, [&](std::int64_t p, std::int64_t n) {
        twice_wins += p * (2 * neg_below + n);
        neg_below += n;
    });
    return double(twice_wins) / (2.0 * double(counts.pos) * double(counts.neg));
}

std::vector<RocPoint> roc_curve(std::span<const ScoredItem> items) {
    const auto counts = count_classes(items);
    require_both_classes(counts, "ROC");
    std::vector<RocPoint> pts{{0.0, 0.0}};
    std::int64_t tp = 0, fp = 0;
    for_each_tie_block(sorted_desc(items), [&](std::int64_t p, std::int64_t n) {
        tp += p;
        fp += n;
        pts.push_back({double(fp) / double(counts.neg), double(tp) / double(counts.pos)});
    });
    return pts;
}

double auroc_trapezoid(std::span<const ScoredItem> items) {
    const auto counts = count_classes(items);
    require_both_classes(counts, "AUROC");
    std::int64_t tp = 0, twice_area = 0;
    for_each_tie_block(sorted_desc(items), [&](std::int64_t p, std::int64_t n) {
        twice_area += n * (2 * tp + p);
        tp += p;
    });
    return double(twice_area) / (2.0 * double(counts.pos) * double(counts.neg));
}

double aupr(std::span<const ScoredItem> items) {
    const auto counts = count_classes(items);
    if (counts.pos == 0) throw Error(ErrorCode::UndefinedMetric, "AUPR needs at least one positive");
    std::int64_t tp = 0, fp = 0;
    double ap = 0.0;
    for_each_tie_block(sorted_desc(items), [&](std::int64_t p, std::int64_t n) {
        tp += p;
        fp += n;
        if (p > 0) ap += (double(p) / double(counts.pos)) * (double(tp) / double(tp + fp));
    });
    return ap;
}

Confusion confusion_at(std::span<const ScoredItem> items, double threshold) {
    Confusion c;
    for (const auto& it : items) {
        const bool predicted = it.score > threshold;
        if (it.truth) (predicted ? c.tp : c.fn)++;
        else (predicted ? c.fp : c.tn)++;
    }
    return c;
}

SensSpec sens_spec(std::span<const ScoredItem> items, double threshold) {
    require_both_classes(count_classes(items), "sensitivity/specificity");
    const Confusion c = confusion_at(items, threshold);
    return {double(c.tp) / double(c.tp + c.fn), double(c.tn) / double(c.tn + c.fp), c};
}

EvalReport evaluate(std::span<const ScoredItem> items, double threshold, std::string group) {
    EvalReport r;
    r.group = std::move(group);
    r.threshold = threshold;
    r.n_patches = items.size();
    std::set<std::string> cases;
    for (const auto& it : items) cases.insert(it.case_id);
    r.n_cases = cases.size();
    r.confusion = confusion_at(items, threshold);
    const auto counts = count_classes(items);
    if (counts.pos > 0) {
        r.aupr = aupr(items);
        r.sensitivity = double(r.confusion.tp) / double(counts.pos);
    }
    if (counts.neg > 0) r.specificity = double(r.confusion.tn) / double(counts.neg);
    if (counts.pos > 0 && counts.neg > 0) r.auroc = auroc(items);
    return r;
}

SubgroupReport subgroup_report(std::span<const ScoredItem> items, double threshold) {
    std::vector<ScoredItem> easy, hard;
    for (const auto& it : items) (it.difficult ? hard : easy).push_back(it);
    return {evaluate(items, threshold, "All Cases"), evaluate(easy, threshold, "w/o Difficult Cases"),
            evaluate(hard, threshold, "Difficult Cases only")};
}

std::vector<ScoredItem> case_level(std::span<const ScoredItem> items) {
    std::map<std::string, ScoredItem> by_case;
    for (const auto& it : items) {
        auto [pos, inserted] = by_case.try_emplace(it.case_id, ScoredItem{it.score, it.truth, it.case_id, -1, it.difficult});
        if (!inserted) {
            pos->second.score = std::max(pos->second.score, it.score);
            pos->second.truth = pos->second.truth || it.truth;
            pos->second.difficult = pos->second.difficult || it.difficult;
        }
    }
    std::vector<ScoredItem> out;
    out.reserve(by_case.size());
    for (auto& [_, v] : by_case) out.push_back(std::move(v));
    return out;
}

namespace {
nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    return {{"group", r.group},
            {"n_cases", r.n_cases},
            {"n_patches", r.n_patches},
            {"auroc", opt(r.auroc)},
            {"aupr", opt(r.aupr)},
            {"sensitivity", opt(r.sensitivity)},
            {"specificity", opt(r.specificity)},
            {"threshold", r.threshold},
            {"tp", r.confusion.tp},
            {"fp", r.confusion.fp},
            {"tn", r.confusion.tn},
            {"fn", r.confusion.fn}};
}

nlohmann::json to_json(const ScoredItem& s) {
    return {{"case_id", s.case_id}, {"patch_index", s.patch_index}, {"score", s.score}, {"truth", s.truth},
            {"difficult", s.difficult}};
}

ScoredItem scored_item_from_json(const nlohmann::json& j) {
    ScoredItem s;
    s.score = j.at("score").get<double>();
    if (!(s.score >= 0.0 && s.score <= 1.0)) throw Error(ErrorCode::InvalidInput, "score outside [0, 1]");
    s.truth = j.at("truth").get<bool>();
    s.case_id = j.value("case_id", std::string());
    s.patch_index = j.value("patch_index", 0);
    s.difficult = j.value("difficult", false);
    return s;
}

std::string format_table(std::span<const EvalReport> reports) {
    auto cell = [](const std::optional<double>& v, int prec) {
        char buf[32];
        if (!v) return std::string("undef");
        std::snprintf(buf, sizeof buf, "%.*f", prec, *v);
        return std::string(buf);
    };
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %9s %10s %8s %8s %12s %12s\n", "", "# of Case", "# of Patch", "AUROC",
                  "AUPR", "Sensitivity", "Specificity");
    out += line;
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%-22s %9zu %10zu %8s %8s %12s %12s\n", r.group.c_str(), r.n_cases,
                      r.n_patches, cell(r.auroc, 5).c_str(), cell(r.aupr, 4).c_str(), cell(r.sensitivity, 3).c_str(),
                      cell(r.specificity, 3).c_str());
        out += line;
    }
    return out;
}

}  // namespace cxr
