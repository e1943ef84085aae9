#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qus/entropy.hpp"
#include "qus/phantom.hpp"
#include "qus/sample.hpp"

namespace qus::pipeline {

// How a raw RF frame becomes a network input: either a log-compressed
// envelope ("us") or a windowed-entropy parametric map ("entropy"), min-max
// normalized to [0, 1] and resized to the network's input dims.  The truth
// mask rides along, binarized and nearest-resized to the same dims.
struct PrepParams {
  std::string mode = "us";  // "us" | "entropy"
  double dynamic_range_db = 50.0;        // us mode
  WindowSpec window{};                   // entropy mode
  std::optional<double> wavelengths;     // derive window extent from metadata
  std::size_t input_h = 224;             // output rows (scan-line axis)
  std::size_t input_w = 224;             // output cols (axial axis)
};

// Throws ParameterError on an unknown mode, nonpositive dynamic range or
// zero output dims; entropy window fields are validated where they apply.
void validate(const PrepParams& params);

// 64-bit FNV-1a over the prep parameters and the raw file bytes.  Keys are
// pure content hashes: any change to the inputs or the recipe misses the
// cache, so stale entries are never served.
std::uint64_t content_key(const PrepParams& params,
                          const std::vector<unsigned char>& rf_bytes,
                          const std::vector<unsigned char>& mask_bytes);

// Returns the prepared sample for one frame, reading it from
// cache_dir/<key>.qsc when present and computing + storing it otherwise.
// An empty cache_dir disables caching.
Sample prepare_sample(const std::string& rf_path, const std::string& mask_path,
                      const PrepParams& params, const std::string& cache_dir);

// Batch form; item paths are resolved relative to base_dir (the dataset
// manifest's directory).  Output order matches the input order.
std::vector<Sample> prepare_samples(const std::vector<DatasetItem>& items,
                                    const std::string& base_dir,
                                    const PrepParams& params,
                                    const std::string& cache_dir);

}  // namespace qus::pipeline
