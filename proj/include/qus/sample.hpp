#pragma once

#include "qus/raster.hpp"

namespace qus {

// One training/evaluation pair: a real-valued image raster and its binary
// ground-truth mask (values 0/1) on the same grid.
struct Sample {
  RasterF64 image;
  RasterU8 mask;
};

}  // namespace qus
