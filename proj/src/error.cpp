#include "cxr/error.hpp"

namespace cxr {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::ParseMalformedHeader: return "malformed-header";
    case ErrorCode::ParseBadMaxval: return "bad-maxval";
    case ErrorCode::ParseTruncated: return "truncated-data";
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::InsufficientComponents: return "insufficient-components";
    case ErrorCode::InvalidBox: return "invalid-box";
    case ErrorCode::UncoveredNodule: return "uncovered-nodule";
    case ErrorCode::GridMismatch: return "grid-mismatch";
    case ErrorCode::InvalidAnnotation: return "invalid-annotation";
    case ErrorCode::SegmentationFailed: return "segmentation-failed";
    case ErrorCode::MaskMismatch: return "mask-mismatch";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::DegenerateData: return "degenerate-data";
    case ErrorCode::UndefinedMetric: return "undefined-metric";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::ServiceNotReady: return "service-not-ready";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::Io: return "io";
    }
    return "unknown";
}

InsufficientComponentsError::InsufficientComponentsError(std::size_t found)
    : Error(ErrorCode::InsufficientComponents,
            "mask has " + std::to_string(found) + " connected component(s), need at least 2"),
      found_(found) {}

namespace {
std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out += ", ";
        out += id;
    }
    return out;
}
}  // namespace

UncoveredNoduleError::UncoveredNoduleError(std::vector<std::string> ids)
    : Error(ErrorCode::UncoveredNodule, "nodule(s) outside every patch: " + join_ids(ids)),
      ids_(std::move(ids)) {}

}  // namespace cxr
