#pragma once

#include <stdexcept>
#include <string>

namespace pfr {

/// Invalid user-supplied configuration (bad mode counts, ratios, shapes in configs).
/// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape disagreement between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// An API used outside its contract (non-scalar loss, time-varying params where
/// constants are required, reading gradients of unwatched tensors).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed on-disk data: bad magic, bad version, truncation.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem-level failure, message carries the path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training produced a non-finite loss. The CLI maps this to exit code 3.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pfr
