#include "qus/entropy_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "qus/errors.hpp"
#include "qus/image_io.hpp"

namespace qus {

namespace {

constexpr char kMagic[4] = {'Q', 'E', 'M', '1'};

static_assert(std::endian::native == std::endian::little,
              "entropy-map container assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated entropy-map file: " + path);
  return v;
}

}  // namespace

void write_entropy_map(const std::string& path, const EntropyMap& map) {
  if (map.values.empty()) throw SizeError("refusing to write empty map");
  validate(map.window);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_pod(os, static_cast<std::uint32_t>(map.rows()));
  write_pod(os, static_cast<std::uint32_t>(map.cols()));
  write_pod(os, static_cast<std::uint32_t>(map.window.axial));
  write_pod(os, static_cast<std::uint32_t>(map.window.lines));
  write_pod(os, static_cast<std::uint32_t>(map.window.axial_stride));
  write_pod(os, static_cast<std::uint32_t>(map.window.line_stride));
  write_pod(os, static_cast<std::uint32_t>(map.window.bins));
  write_pod(os, map.line_origin);
  write_pod(os, map.axial_origin);
  std::vector<float> buf(map.values.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(map.values.storage()[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path);
}

EntropyMap read_entropy_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not an entropy-map file: " + path);
  const auto rows = read_pod<std::uint32_t>(is, path);
  const auto cols = read_pod<std::uint32_t>(is, path);
  EntropyMap map;
  map.window.axial = read_pod<std::uint32_t>(is, path);
  map.window.lines = read_pod<std::uint32_t>(is, path);
  map.window.axial_stride = read_pod<std::uint32_t>(is, path);
  map.window.line_stride = read_pod<std::uint32_t>(is, path);
  map.window.bins = read_pod<std::uint32_t>(is, path);
  map.line_origin = read_pod<double>(is, path);
  map.axial_origin = read_pod<double>(is, path);
  if (rows == 0 || cols == 0)
    throw IoError("entropy-map file has empty dims: " + path);
  validate(map.window);
  map.values = RasterF64(rows, cols);
  std::vector<float> buf(map.values.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw IoError("truncated entropy-map file: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i)
    map.values.storage()[i] = static_cast<double>(buf[i]);
  return map;
}

RasterU8 entropy_to_gray(const EntropyMap& map) {
  if (map.values.empty()) throw SizeError("empty entropy map");
  const auto& vals = map.values.storage();
  double lo = vals[0];
  double hi = vals[0];
  for (double v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) throw DegenerateInputError("constant entropy map");
  RasterU8 out(map.rows(), map.cols());
  for (std::size_t i = 0; i < vals.size(); ++i)
    out.storage()[i] = static_cast<std::uint8_t>(
        std::clamp(std::round((vals[i] - lo) / (hi - lo) * 255.0), 0.0,
                   255.0));
  return out;
}

const std::array<std::array<std::uint8_t, 3>, 256>& entropy_colormap() {
  static const auto table = [] {
    // Anchors at t = 0, 1/8, ..., 1; linear interpolation between them.
    constexpr std::array<std::array<double, 3>, 9> anchors = {{
        {68, 1, 84},
        {71, 44, 122},
        {59, 81, 139},
        {44, 113, 142},
        {33, 144, 141},
        {39, 173, 129},
        {92, 200, 99},
        {170, 220, 50},
        {253, 231, 37},
    }};
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (std::size_t i = 0; i < 256; ++i) {
      const double pos = static_cast<double>(i) / 255.0 * 8.0;
      const std::size_t seg = std::min<std::size_t>(
          static_cast<std::size_t>(pos), 7);
      const double f = pos - static_cast<double>(seg);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v =
            (1.0 - f) * anchors[seg][ch] + f * anchors[seg + 1][ch];
        t[i][ch] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
    return t;
  }();
  return table;
}

void write_entropy_png(const std::string& path, const EntropyMap& map,
                       bool colormap) {
  const RasterU8 gray = entropy_to_gray(map);
  if (!colormap) {
    write_png_gray(path, gray);
    return;
  }
  const auto& table = entropy_colormap();
  std::vector<std::uint8_t> rgb(gray.size() * 3);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const auto& c = table[gray.storage()[i]];
    rgb[i * 3] = c[0];
    rgb[i * 3 + 1] = c[1];
    rgb[i * 3 + 2] = c[2];
  }
  write_png_rgb(path, gray.rows(), gray.cols(), rgb);
}

}  // namespace qus
