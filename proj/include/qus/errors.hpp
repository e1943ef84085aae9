#pragma once

#include <stdexcept>
#include <string>

namespace qus {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data is unusable (NaN/Inf samples, malformed values).
struct InvalidInputError : Error { using Error::Error; };

// A dimension requirement was violated (too short, window larger than frame).
struct SizeError : Error { using Error::Error; };

// Tensor/raster shapes do not agree.
struct ShapeError : Error { using Error::Error; };

// A configuration value is out of its legal range.
struct ParameterError : Error { using Error::Error; };

// Input is degenerate for the requested operation (all-zero envelope,
// zero-spread window).
struct DegenerateInputError : Error { using Error::Error; };

// Geometry constraint violated (inclusion outside the frame).
struct GeometryError : Error { using Error::Error; };

// Weight import failed (unknown or mismatched tensors).
struct ImportError : Error { using Error::Error; };

// File could not be read or written, or has a malformed header.
struct IoError : Error { using Error::Error; };

}  // namespace qus
