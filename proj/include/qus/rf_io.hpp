#pragma once

#include <string>

#include "qus/rf.hpp"

namespace qus {

enum class RfDtype : std::uint8_t { Int16 = 0, Float32 = 1 };

// QRF1 container, little-endian:
//   magic "QRF1", u32 n_lines, u32 n_axial, f64 fs_hz, f64 f0_hz,
//   f64 sound_speed, u8 dtype (0 = int16, 1 = float32),
//   then row-major samples, scanline-major.
void write_qrf(const std::string& path, const RfFrame& frame,
               RfDtype dtype = RfDtype::Float32);

RfFrame read_qrf(const std::string& path);

}  // namespace qus
