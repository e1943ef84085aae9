#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "qus/entropy.hpp"
#include "qus/raster.hpp"

namespace qus {

// Binary entropy-map container: magic "QEM1", u32 rows, u32 cols, the five
// window fields as u32 (axial, lines, axial_stride, line_stride, bins), the
// two origin offsets as f64 (line, axial), then f32 row-major values.
// Little-endian throughout.
void write_entropy_map(const std::string& path, const EntropyMap& map);
EntropyMap read_entropy_map(const std::string& path);

// Linear min-max normalization of the map values to 0..255.  Throws
// DegenerateInputError when the map is constant.
RasterU8 entropy_to_gray(const EntropyMap& map);

// Fixed 256-entry perceptual colormap (dark violet through teal to yellow),
// baked from evenly spaced anchors.
const std::array<std::array<std::uint8_t, 3>, 256>& entropy_colormap();

// PNG visualization of the map; grayscale by default, colormapped on demand.
void write_entropy_png(const std::string& path, const EntropyMap& map,
                       bool colormap = false);

}  // namespace qus
