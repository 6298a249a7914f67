#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cxr {

/// Failure categories shared by every module. The CLI maps these onto exit
/// codes and the service onto HTTP status codes.
enum class ErrorCode {
    ParseMalformedHeader,
    ParseBadMaxval,
    ParseTruncated,
    InvalidInput,
    InvalidConfig,
    InsufficientComponents,
    InvalidBox,
    UncoveredNodule,
    GridMismatch,
    InvalidAnnotation,
    SegmentationFailed,
    MaskMismatch,
    Shape,
    DegenerateData,
    UndefinedMetric,
    NotFound,
    ServiceNotReady,
    Conflict,
    Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

class InsufficientComponentsError : public Error {
  public:
    explicit InsufficientComponentsError(std::size_t found);
    std::size_t found() const noexcept { return found_; }

  private:
    std::size_t found_;
};

class UncoveredNoduleError : public Error {
  public:
    explicit UncoveredNoduleError(std::vector<std::string> ids);
    const std::vector<std::string>& nodule_ids() const noexcept { return ids_; }

  private:
    std::vector<std::string> ids_;
};

}  // namespace cxr
