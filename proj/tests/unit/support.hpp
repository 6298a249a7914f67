#pragma once

#include <atomic>
#include <functional>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "doctest.h"

#include "cxr/error.hpp"

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cxr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

  private:
    std::filesystem::path path_;
};

/// Error code thrown by `f`; fails the test when nothing is thrown.
inline cxr::ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const cxr::Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return cxr::ErrorCode::Io;
}
