#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qus/raster.hpp"

namespace qus {

// 8-bit binary PGM (P5).
void write_pgm(const std::string& path, const RasterU8& img);
RasterU8 read_pgm(const std::string& path);

// Minimal PNG writers (8-bit, non-interlaced, filter 0; deflate via zlib).
void write_png_gray(const std::string& path, const RasterU8& img);
void write_png_rgb(const std::string& path, std::size_t rows, std::size_t cols,
                   const std::vector<std::uint8_t>& rgb_interleaved);

}  // namespace qus
