#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cxr/geometry.hpp"
#include "cxr/lunggrid.hpp"

namespace cxr {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// RFC 3339, always emitted in UTC with millisecond precision.
std::string format_rfc3339(Timestamp t);
/// Accepts `Z` or `+hh:mm`/`-hh:mm` offsets and optional fractional seconds.
Timestamp parse_rfc3339(std::string_view text);

struct NoduleBox {
    Rect rect;
    std::string id;
};

using PatchLabelVector = std::vector<bool>;

enum class DataSource { NckuhLike, VbdLike, MohwLike, Synthetic };
enum class Split { Train, Val, Test, Unassigned };

std::string_view to_string(DataSource s);
std::string_view to_string(Split s);
DataSource parse_source(std::string_view s);
Split parse_split(std::string_view s);

struct CaseRecord {
    std::string case_id;
    std::string image_path;
    std::optional<std::string> mask_path;
    std::vector<NoduleBox> nodules;
    bool difficult = false;
    DataSource source = DataSource::Synthetic;
    Split split = Split::Unassigned;
};

struct AnnotationRecord {
    std::string case_id;
    GridSpec grid_spec;
    std::set<int> positives;
    std::string annotator;
    Timestamp started_at{};
    Timestamp finished_at{};
    std::optional<Timestamp> received_at;

    std::int64_t duration_ms() const { return (finished_at - started_at).count(); }
};

enum class LabelMode {
    Argmax,          // one patch per nodule: the largest intersection
    AllIntersecting, // every patch touching a nodule
};

/// Per-patch labels from nodule boxes. Argmax ties go to the lowest
/// row-major index. Throws UncoveredNoduleError for nodules touching no patch.
PatchLabelVector assign_patch_labels(const PatchGrid& grid, const std::vector<NoduleBox>& nodules,
                                     LabelMode mode = LabelMode::Argmax);

/// Case-level random split; |val| = round(n * val / (train + val)).
std::vector<CaseRecord> split_cases(std::vector<CaseRecord> cases, std::uint64_t seed, int train_parts = 3,
                                    int val_parts = 1);

PatchLabelVector annotation_to_labels(const AnnotationRecord& a, const PatchGrid& grid);

/// Validates indices and timestamps of a click annotation against a grid spec.
void validate_annotation(const AnnotationRecord& a, const GridSpec& spec);

// -- line-delimited documents ------------------------------------------------

nlohmann::json to_json(const GridSpec& g);
GridSpec grid_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CaseRecord& c);
CaseRecord case_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnnotationRecord& a);
AnnotationRecord annotation_from_json(const nlohmann::json& j);

std::vector<CaseRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<CaseRecord>& cases, const std::filesystem::path& path);

/// Relative paths inside a manifest are resolved against the manifest's directory.
std::filesystem::path resolve_manifest_path(const std::filesystem::path& manifest, const std::string& entry);

std::vector<AnnotationRecord> read_annotation_log(const std::filesystem::path& path);
/// Appends one record as a single line and flushes.
void append_annotation(const std::filesystem::path& path, const AnnotationRecord& a);

}  // namespace cxr
