#include "qus/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "qus/errors.hpp"
#include "qus/image_io.hpp"
#include "qus/rf.hpp"
#include "qus/rf_io.hpp"

namespace qus::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr char kCacheMagic[4] = {'Q', 'S', 'C', '1'};

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  void update_u64(std::uint64_t v) { update(&v, sizeof v); }
  void update_f64(double v) { update(&v, sizeof v); }
  void update_str(const std::string& s) {
    update_u64(s.size());
    update(s.data(), s.size());
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated cache entry");
}

void store_sample(const std::string& path, const Sample& s) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(kCacheMagic, sizeof kCacheMagic);
    write_pod(out, static_cast<std::uint32_t>(s.image.rows()));
    write_pod(out, static_cast<std::uint32_t>(s.image.cols()));
    out.write(reinterpret_cast<const char*>(s.image.storage().data()),
              static_cast<std::streamsize>(s.image.storage().size() *
                                           sizeof(double)));
    out.write(reinterpret_cast<const char*>(s.mask.storage().data()),
              static_cast<std::streamsize>(s.mask.storage().size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

Sample load_sample(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0)
    throw IoError("bad cache magic: " + path);
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  read_pod(in, rows);
  read_pod(in, cols);
  if (rows == 0 || cols == 0) throw IoError("bad cache dims: " + path);
  Sample s{RasterF64(rows, cols), RasterU8(rows, cols)};
  in.read(reinterpret_cast<char*>(s.image.storage().data()),
          static_cast<std::streamsize>(s.image.storage().size() *
                                       sizeof(double)));
  in.read(reinterpret_cast<char*>(s.mask.storage().data()),
          static_cast<std::streamsize>(s.mask.storage().size()));
  if (!in) throw IoError("truncated cache entry: " + path);
  return s;
}

RasterF64 us_input(const EnvelopeFrame& env, double dynamic_range_db) {
  double amax = 0.0;
  for (double v : env.amplitude.storage()) amax = std::max(amax, v);
  if (amax <= 0.0)
    throw DegenerateInputError("all-zero envelope: nothing to display");
  RasterF64 out(env.amplitude.rows(), env.amplitude.cols());
  const auto& src = env.amplitude.storage();
  auto& dst = out.storage();
  for (std::size_t i = 0; i < src.size(); ++i) {
    double db = src[i] <= 0.0 ? -dynamic_range_db
                              : 20.0 * std::log10(src[i] / amax);
    dst[i] =
        std::clamp(db + dynamic_range_db, 0.0, dynamic_range_db) /
        dynamic_range_db;
  }
  return out;
}

RasterF64 entropy_input(const EnvelopeFrame& env, const RfFrame& frame,
                        const PrepParams& params) {
  WindowSpec spec;
  if (params.wavelengths) {
    spec = window_from_wavelengths(*params.wavelengths, frame);
    spec.axial_stride = params.window.axial_stride;
    spec.line_stride = params.window.line_stride;
    spec.bins = params.window.bins;
  } else {
    spec = params.window;
  }
  EntropyMap map = entropy_map(env, spec);
  RasterF64 full =
      map_to_frame_raster(map, frame.lines(), frame.axial());
  double lo = full.storage().front();
  double hi = lo;
  for (double v : full.storage()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto& vals = full.storage();
  if (hi > lo) {
    for (double& v : vals) v = (v - lo) / (hi - lo);
  } else {
    std::fill(vals.begin(), vals.end(), 0.0);
  }
  return full;
}

RasterU8 binarize_mask(const RasterU8& img) {
  RasterU8 out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.storage().size(); ++i)
    out.storage()[i] = img.storage()[i] >= 128 ? 1 : 0;
  return out;
}

Sample compute_sample(const std::string& rf_path, const std::string& mask_path,
                      const PrepParams& params) {
  RfFrame frame = read_qrf(rf_path);
  EnvelopeFrame env = envelope(frame);
  RasterF64 native = params.mode == "us"
                         ? us_input(env, params.dynamic_range_db)
                         : entropy_input(env, frame, params);
  Sample s;
  s.image = resize_bilinear(native, params.input_h, params.input_w);
  s.mask = resize_nearest(binarize_mask(read_pgm(mask_path)), params.input_h,
                          params.input_w);
  return s;
}

}  // namespace

void validate(const PrepParams& params) {
  if (params.mode != "us" && params.mode != "entropy")
    throw ParameterError("unknown input mode: " + params.mode);
  if (!(params.dynamic_range_db > 0.0))
    throw ParameterError("dynamic range must be positive");
  if (params.input_h == 0 || params.input_w == 0)
    throw ParameterError("network input dims must be positive");
  if (params.mode == "entropy" && !params.wavelengths)
    qus::validate(params.window);
  if (params.wavelengths && !(*params.wavelengths > 0.0))
    throw ParameterError("wavelength count must be positive");
}

std::uint64_t content_key(const PrepParams& params,
                          const std::vector<unsigned char>& rf_bytes,
                          const std::vector<unsigned char>& mask_bytes) {
  Fnv1a h;
  h.update_str("qsc-v1");
  h.update_str(params.mode);
  h.update_f64(params.dynamic_range_db);
  h.update_u64(params.window.axial);
  h.update_u64(params.window.lines);
  h.update_u64(params.window.axial_stride);
  h.update_u64(params.window.line_stride);
  h.update_u64(params.window.bins);
  h.update_u64(params.wavelengths.has_value() ? 1 : 0);
  h.update_f64(params.wavelengths.value_or(0.0));
  h.update_u64(params.input_h);
  h.update_u64(params.input_w);
  h.update_u64(rf_bytes.size());
  h.update(rf_bytes.data(), rf_bytes.size());
  h.update_u64(mask_bytes.size());
  h.update(mask_bytes.data(), mask_bytes.size());
  return h.digest();
}

Sample prepare_sample(const std::string& rf_path, const std::string& mask_path,
                      const PrepParams& params, const std::string& cache_dir) {
  validate(params);
  if (cache_dir.empty()) return compute_sample(rf_path, mask_path, params);

  const std::uint64_t key =
      content_key(params, read_bytes(rf_path), read_bytes(mask_path));
  char name[32];
  std::snprintf(name, sizeof name, "%016llx.qsc",
                static_cast<unsigned long long>(key));
  fs::create_directories(cache_dir);
  const std::string entry = (fs::path(cache_dir) / name).string();
  if (fs::exists(entry)) {
    Sample s = load_sample(entry);
    if (s.image.rows() == params.input_h && s.image.cols() == params.input_w)
      return s;
    // Key collision or a foreign file; fall through and overwrite.
  }
  Sample s = compute_sample(rf_path, mask_path, params);
  store_sample(entry, s);
  return s;
}

std::vector<Sample> prepare_samples(const std::vector<DatasetItem>& items,
                                    const std::string& base_dir,
                                    const PrepParams& params,
                                    const std::string& cache_dir) {
  std::vector<Sample> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    const fs::path base(base_dir);
    out.push_back(prepare_sample((base / item.rf_path).string(),
                                 (base / item.mask_path).string(), params,
                                 cache_dir));
  }
  return out;
}

}  // namespace qus::pipeline
