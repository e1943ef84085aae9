#include "qus/rf_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "qus/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "QRF/QEM/QWT containers assume a little-endian host");

namespace qus {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("QRF1: truncated ") + what);
  return v;
}

}  // namespace

void write_qrf(const std::string& path, const RfFrame& frame, RfDtype dtype) {
  validate(frame);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("QRF1", 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(frame.lines()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(frame.axial()));
  put<double>(os, frame.fs);
  put<double>(os, frame.f0);
  put<double>(os, frame.sound_speed);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  const auto& s = frame.samples.storage();
  if (dtype == RfDtype::Float32) {
    std::vector<float> buf(s.begin(), s.end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    std::vector<std::int16_t> buf(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      double v = std::round(s[i]);
      if (v > std::numeric_limits<std::int16_t>::max())
        v = std::numeric_limits<std::int16_t>::max();
      if (v < std::numeric_limits<std::int16_t>::min())
        v = std::numeric_limits<std::int16_t>::min();
      buf[i] = static_cast<std::int16_t>(v);
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(std::int16_t)));
  }
  if (!os) throw IoError("write failed: " + path);
}

RfFrame read_qrf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "QRF1", 4) != 0)
    throw IoError("QRF1: bad magic in " + path);
  RfFrame frame;
  const auto n_lines = get<std::uint32_t>(is, "n_lines");
  const auto n_axial = get<std::uint32_t>(is, "n_axial");
  frame.fs = get<double>(is, "fs");
  frame.f0 = get<double>(is, "f0");
  frame.sound_speed = get<double>(is, "sound_speed");
  const auto tag = get<std::uint8_t>(is, "dtype");
  if (tag > 1) throw IoError("QRF1: unknown dtype tag");
  frame.samples = RasterF64(n_lines, n_axial);
  const std::size_t count =
      static_cast<std::size_t>(n_lines) * static_cast<std::size_t>(n_axial);
  if (static_cast<RfDtype>(tag) == RfDtype::Float32) {
    std::vector<float> buf(count);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw IoError("QRF1: truncated samples in " + path);
    for (std::size_t i = 0; i < count; ++i)
      frame.samples.storage()[i] = static_cast<double>(buf[i]);
  } else {
    std::vector<std::int16_t> buf(count);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(std::int16_t)));
    if (!is) throw IoError("QRF1: truncated samples in " + path);
    for (std::size_t i = 0; i < count; ++i)
      frame.samples.storage()[i] = static_cast<double>(buf[i]);
  }
  validate(frame);
  return frame;
}

}  // namespace qus
