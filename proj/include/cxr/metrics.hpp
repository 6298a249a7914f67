#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cxr/lunggrid.hpp"

namespace cxr {

struct ScoredItem {
    double score = 0.0;
    bool truth = false;
    std::string case_id;
    int patch_index = 0;
    bool difficult = false;
};

struct Confusion {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    Confusion& operator+=(const Confusion& o) {
        tp += o.tp, fp += o.fp, tn += o.tn, fn += o.fn;
        return *this;
    }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct SensSpec {
    double sensitivity = 0.0;
    double specificity = 0.0;
    Confusion confusion;
};

/// |a & b| / |a | b|; 1.0 when both masks are empty.
double iou(const Mask& a, const Mask& b);

/// Mann-Whitney AUROC with ties counted one half.
double auroc(std::span<const ScoredItem> items);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};
/// ROC vertices from (0,0) to (1,1), one per distinct score (descending).
std::vector<RocPoint> roc_curve(std::span<const ScoredItem> items);
/// Trapezoidal area under roc_curve, accumulated in integer counts.
double auroc_trapezoid(std::span<const ScoredItem> items);

/// Average precision with equal scores processed as one block.
double aupr(std::span<const ScoredItem> items);

/// Predicted positive iff score > threshold.
Confusion confusion_at(std::span<const ScoredItem> items, double threshold);
SensSpec sens_spec(std::span<const ScoredItem> items, double threshold);

struct EvalReport {
    std::string group;
    std::optional<double> auroc;
    std::optional<double> aupr;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    Confusion confusion;
    std::size_t n_cases = 0;
    std::size_t n_patches = 0;
    double threshold = 0.9;
};

/// Metrics for one group; undefined rank metrics are left empty.
EvalReport evaluate(std::span<const ScoredItem> items, double threshold, std::string group);

struct SubgroupReport {
    EvalReport overall;
    EvalReport without_difficult;
    EvalReport difficult_only;
};

SubgroupReport subgroup_report(std::span<const ScoredItem> items, double threshold);

/// One item per case: score = max patch score, truth = any positive patch.
std::vector<ScoredItem> case_level(std::span<const ScoredItem> items);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const ScoredItem& s);
ScoredItem scored_item_from_json(const nlohmann::json& j);

/// Fixed-width table with one row per report.
std::string format_table(std::span<const EvalReport> reports);

}  // namespace cxr
