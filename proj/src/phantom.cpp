#include "qus/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include <json.hpp>

#include "qus/errors.hpp"
#include "qus/image_io.hpp"
#include "qus/parallel.hpp"
#include "qus/rf_io.hpp"
#include "qus/rng.hpp"

namespace qus {

namespace {

// Full width of a Gaussian at the -6 dB point, in units of sigma:
// exp(-x^2/2) = 10^(-0.3)  =>  x = sqrt(2 ln 10^0.3).
const double k_half_width_6db = std::sqrt(2.0 * 0.3 * std::numbers::ln10);

double pulse_sigma_t(double fs, double f0, double fractional_bandwidth) {
  if (!(fs > 0.0) || !(f0 > 0.0))
    throw ParameterError("fs and f0 must be positive");
  if (!(fractional_bandwidth > 0.0))
    throw ParameterError("fractional bandwidth must be positive");
  const double sigma_f = (fractional_bandwidth * f0 / 2.0) / k_half_width_6db;
  return 1.0 / (2.0 * std::numbers::pi * sigma_f);
}

}  // namespace

std::vector<double> gaussian_pulse(double fs, double f0,
                                   double fractional_bandwidth) {
  const double sigma_t = pulse_sigma_t(fs, f0, fractional_bandwidth);
  const auto half = static_cast<std::ptrdiff_t>(
      std::ceil(3.0 * sigma_t * fs));
  std::vector<double> taps(2 * half + 1);
  for (std::ptrdiff_t k = -half; k <= half; ++k) {
    const double t = static_cast<double>(k) / fs;
    taps[static_cast<std::size_t>(k + half)] =
        std::exp(-t * t / (2.0 * sigma_t * sigma_t)) *
        std::cos(2.0 * std::numbers::pi * f0 * t);
  }
  return taps;
}

double resolution_cell_samples(double fs, double f0,
                               double fractional_bandwidth) {
  const double sigma_t = pulse_sigma_t(fs, f0, fractional_bandwidth);
  return 2.0 * k_half_width_6db * sigma_t * fs;
}

void validate(const PhantomSpec& spec) {
  if (spec.n_lines < 1 || spec.n_axial < 2)
    throw SizeError("phantom needs at least 1 line x 2 axial samples");
  if (!(spec.fs > 0.0) || !(spec.f0 > 0.0))
    throw ParameterError("fs and f0 must be positive");
  if (!(spec.fs > 2.0 * spec.f0))
    throw ParameterError("fs must exceed twice f0");
  if (!(spec.sound_speed > 0.0))
    throw ParameterError("sound_speed must be positive");
  if (!(spec.scatterer_density_bg >= 0.0) ||
      !(spec.scatterer_density_inc >= 0.0))
    throw ParameterError("scatterer densities must be >= 0");
  if (!(spec.amplitude_ratio_inc >= 0.0))
    throw ParameterError("amplitude_ratio_inc must be >= 0");
  if (spec.inclusion) {
    const Ellipse& e = *spec.inclusion;
    if (!(e.radius_axial > 0.0) || !(e.radius_lateral > 0.0))
      throw GeometryError("inclusion radii must be positive");
    const double a_max = static_cast<double>(spec.n_axial - 1);
    const double l_max = static_cast<double>(spec.n_lines - 1);
    if (e.center_axial - e.radius_axial < 0.0 ||
        e.center_axial + e.radius_axial > a_max ||
        e.center_lateral - e.radius_lateral < 0.0 ||
        e.center_lateral + e.radius_lateral > l_max)
      throw GeometryError("inclusion extends outside the frame");
  }
}

LabeledFrame simulate(const PhantomSpec& spec) {
  validate(spec);
  const std::vector<double> pulse = gaussian_pulse(spec.fs, spec.f0);
  const auto half = static_cast<std::ptrdiff_t>(pulse.size() / 2);
  const double cell = resolution_cell_samples(spec.fs, spec.f0);
  const double rate_bg = spec.scatterer_density_bg / cell;
  const double rate_inc = spec.scatterer_density_inc / cell;

  LabeledFrame out;
  out.rf.samples = RasterF64(spec.n_lines, spec.n_axial);
  out.rf.fs = spec.fs;
  out.rf.f0 = spec.f0;
  out.rf.sound_speed = spec.sound_speed;
  out.truth_mask = RasterU8(spec.n_lines, spec.n_axial, 0);

  if (spec.inclusion) {
    for (std::size_t l = 0; l < spec.n_lines; ++l)
      for (std::size_t a = 0; a < spec.n_axial; ++a)
        if (spec.inclusion->contains(static_cast<double>(a),
                                     static_cast<double>(l)))
          out.truth_mask(l, a) = 1;
  }

  const auto n = static_cast<std::ptrdiff_t>(spec.n_axial);
  parallel_for(spec.n_lines, [&](std::size_t l) {
    std::mt19937_64 rng(derive_seed(spec.rng_seed, l));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> scatter(spec.n_axial, 0.0);
    for (std::size_t a = 0; a < spec.n_axial; ++a) {
      const bool inside = out.truth_mask(l, a) != 0;
      const double rate = inside ? rate_inc : rate_bg;
      if (!(rate > 0.0)) continue;
      std::poisson_distribution<int> poisson(rate);
      const int count = poisson(rng);
      double amp = 0.0;
      for (int i = 0; i < count; ++i) amp += normal(rng);
      if (inside) amp *= spec.amplitude_ratio_inc;
      scatter[a] = amp;
    }
    double* rf_row = out.rf.samples.row(l);
    for (std::ptrdiff_t a = 0; a < n; ++a) {
      double acc = 0.0;
      const std::ptrdiff_t j_lo = std::max<std::ptrdiff_t>(-half, a - n + 1);
      const std::ptrdiff_t j_hi = std::min<std::ptrdiff_t>(half, a);
      for (std::ptrdiff_t j = j_lo; j <= j_hi; ++j)
        acc += pulse[static_cast<std::size_t>(half + j)] *
               scatter[static_cast<std::size_t>(a - j)];
      rf_row[a] = acc;
    }
  });
  return out;
}

namespace {

void check_range(const ParamRange& r, const char* what, double floor) {
  if (!(r.lo <= r.hi))
    throw ParameterError(std::string(what) + ": range is empty (lo > hi)");
  if (!(r.lo >= floor))
    throw ParameterError(std::string(what) + ": below allowed minimum");
}

double draw(std::mt19937_64& rng, const ParamRange& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

void validate(const DatasetRanges& ranges) {
  if (ranges.n_lines < 8 || ranges.n_axial < 8)
    throw SizeError("dataset frames must be at least 8x8");
  if (!(ranges.fs > 2.0 * ranges.f0) || !(ranges.f0 > 0.0))
    throw ParameterError("fs must exceed twice f0");
  check_range(ranges.density_bg, "density_bg", 0.0);
  check_range(ranges.density_inc, "density_inc", 0.0);
  check_range(ranges.amplitude_ratio, "amplitude_ratio", 0.0);
  check_range(ranges.radius_axial_frac, "radius_axial_frac", 0.0);
  check_range(ranges.radius_lateral_frac, "radius_lateral_frac", 0.0);
  check_range(ranges.center_jitter_frac, "center_jitter_frac", -0.5);
  const double r_max = std::max(ranges.radius_axial_frac.hi,
                                ranges.radius_lateral_frac.hi);
  const double j_max = std::max(std::abs(ranges.center_jitter_frac.lo),
                                std::abs(ranges.center_jitter_frac.hi));
  if (r_max + j_max >= 0.5)
    throw GeometryError(
        "radius + jitter ranges allow inclusions outside the frame");
  const double r_min = std::min(ranges.radius_axial_frac.lo,
                                ranges.radius_lateral_frac.lo);
  if (r_min * static_cast<double>(std::min(ranges.n_lines, ranges.n_axial)) <
      1.0)
    throw GeometryError("minimum radius is under one sample");
}

std::vector<DatasetEntry> make_dataset(std::size_t n_cases,
                                       const DatasetRanges& ranges,
                                       std::uint64_t rng_seed) {
  if (n_cases < 1) throw ParameterError("n_cases must be >= 1");
  validate(ranges);
  std::vector<DatasetEntry> entries(2 * n_cases);
  parallel_for(n_cases, [&](std::size_t c) {
    std::mt19937_64 rng(derive_seed(rng_seed, c, 0xca5e));
    const double density_bg = draw(rng, ranges.density_bg);
    const double density_inc = draw(rng, ranges.density_inc);
    const double ratio = draw(rng, ranges.amplitude_ratio);
    const double r_ax_frac = draw(rng, ranges.radius_axial_frac);
    const double r_lat_frac = draw(rng, ranges.radius_lateral_frac);
    const double jitter_ax = draw(rng, ranges.center_jitter_frac);
    const double jitter_lat = draw(rng, ranges.center_jitter_frac);

    PhantomSpec spec;
    spec.n_lines = ranges.n_lines;
    spec.n_axial = ranges.n_axial;
    spec.fs = ranges.fs;
    spec.f0 = ranges.f0;
    spec.sound_speed = ranges.sound_speed;
    spec.scatterer_density_bg = density_bg;
    spec.scatterer_density_inc = density_inc;
    spec.amplitude_ratio_inc = ratio;

    const double na = static_cast<double>(ranges.n_axial);
    const double nl = static_cast<double>(ranges.n_lines);
    Ellipse e;
    e.center_axial = (na - 1.0) / 2.0 + jitter_ax * na;
    e.center_lateral = (nl - 1.0) / 2.0 + jitter_lat * nl;
    e.radius_axial = r_ax_frac * na;
    e.radius_lateral = r_lat_frac * nl;

    const std::string label =
        ratio < ranges.label_ratio_threshold ? "malignant-like"
                                             : "benign-like";
    for (std::size_t scan = 0; scan < 2; ++scan) {
      spec.inclusion = e;
      if (scan == 1) {
        // Perpendicular view of the same mass: the axes trade roles.
        spec.inclusion->radius_axial = r_lat_frac * na;
        spec.inclusion->radius_lateral = r_ax_frac * nl;
      }
      spec.rng_seed = derive_seed(rng_seed, c, 1 + scan);
      DatasetEntry& entry = entries[2 * c + scan];
      entry.frame = simulate(spec);
      entry.case_id = c;
      entry.label = label;
    }
  });
  return entries;
}

std::string write_dataset(const std::string& dir,
                          const std::vector<DatasetEntry>& entries) {
  if (entries.empty()) throw ParameterError("dataset is empty");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  std::map<std::size_t, int> scan_counter;
  for (const DatasetEntry& entry : entries) {
    const int scan = scan_counter[entry.case_id]++;
    char stem[64];
    std::snprintf(stem, sizeof(stem), "case%04zu_scan%d", entry.case_id,
                  scan);
    const std::string rf_name = std::string(stem) + ".qrf";
    const std::string mask_name = std::string(stem) + "_mask.pgm";
    write_qrf((fs::path(dir) / rf_name).string(), entry.frame.rf);
    RasterU8 mask = entry.frame.truth_mask;
    for (auto& v : mask.storage()) v = v ? 255 : 0;
    write_pgm((fs::path(dir) / mask_name).string(), mask);
    manifest.push_back({{"rf_path", rf_name},
                        {"mask_path", mask_name},
                        {"label", entry.label},
                        {"case_id", entry.case_id}});
  }
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ofstream os(manifest_path);
  if (!os) throw IoError("cannot write manifest: " + manifest_path);
  os << manifest.dump(2) << "\n";
  if (!os) throw IoError("write failed: " + manifest_path);
  return manifest_path;
}

std::vector<DatasetItem> read_dataset_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path + ": " + e.what());
  }
  if (!j.is_array()) throw IoError("manifest must be a JSON array: " + path);
  std::vector<DatasetItem> items;
  items.reserve(j.size());
  for (const auto& row : j) {
    try {
      DatasetItem item;
      item.rf_path = row.at("rf_path").get<std::string>();
      item.mask_path = row.at("mask_path").get<std::string>();
      item.label = row.at("label").get<std::string>();
      item.case_id = row.at("case_id").get<std::size_t>();
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest row in " + path + ": " + e.what());
    }
  }
  return items;
}

}  // namespace qus
