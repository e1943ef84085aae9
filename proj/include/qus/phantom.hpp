#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qus/raster.hpp"
#include "qus/rf.hpp"

namespace qus {

// Elliptical inclusion in frame coordinates: axial positions are sample
// indices along a line, lateral positions are line indices.
struct Ellipse {
  double center_axial = 0.0;
  double center_lateral = 0.0;
  double radius_axial = 0.0;
  double radius_lateral = 0.0;

  bool contains(double axial, double lateral) const {
    const double da = (axial - center_axial) / radius_axial;
    const double dl = (lateral - center_lateral) / radius_lateral;
    return da * da + dl * dl <= 1.0;
  }
};

// Synthetic tissue-mimicking phantom: Poisson point scatterers with Gaussian
// amplitudes, imaged by per-line convolution with a Gaussian-modulated pulse.
struct PhantomSpec {
  std::size_t n_lines = 256;
  std::size_t n_axial = 1024;
  double fs = 40e6;
  double f0 = 9e6;
  double sound_speed = 1540.0;
  // Expected scatterers per resolution cell (pulse -6 dB length x 1 line).
  double scatterer_density_bg = 10.0;
  double scatterer_density_inc = 10.0;
  // Scatterer amplitudes inside the inclusion are multiplied by this factor.
  double amplitude_ratio_inc = 1.0;
  std::optional<Ellipse> inclusion;
  std::uint64_t rng_seed = 0;
};

// Throws ParameterError / GeometryError on invalid parameters or an
// inclusion that is not fully inside the frame.
void validate(const PhantomSpec& spec);

// RF frame plus the ground-truth inclusion mask on the same sample grid
// (mask value 1 = inside the inclusion).
struct LabeledFrame {
  RfFrame rf;
  RasterU8 truth_mask;
};

// Gaussian-modulated sinusoidal pulse at f0 with the given -6 dB fractional
// bandwidth, sampled at fs and truncated at +/-3 sigma of the envelope.
// Returned taps are centered (zero phase).
std::vector<double> gaussian_pulse(double fs, double f0,
                                   double fractional_bandwidth = 0.6);

// Pulse -6 dB length expressed in axial samples; the density accounting unit
// is this length by one line.
double resolution_cell_samples(double fs, double f0,
                               double fractional_bandwidth = 0.6);

// Generates the frame: scatterers are placed per axial sample with Poisson
// counts (rate = density / resolution-cell length) and standard-normal
// amplitudes, the inclusion region using its own density and amplitude
// scale; each scan line is then convolved ("same" alignment) with the pulse.
// Per-line RNG streams are derived from rng_seed, so results do not depend
// on evaluation order and are bit-identical across worker counts.
LabeledFrame simulate(const PhantomSpec& spec);

// Half-open ranges for randomized dataset generation; lo == hi pins a value.
struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct DatasetRanges {
  std::size_t n_lines = 256;
  std::size_t n_axial = 512;
  double fs = 40e6;
  double f0 = 9e6;
  double sound_speed = 1540.0;
  ParamRange density_bg{8.0, 14.0};
  ParamRange density_inc{2.0, 6.0};
  ParamRange amplitude_ratio{0.2, 1.6};
  ParamRange radius_axial_frac{0.10, 0.22};   // fraction of n_axial
  ParamRange radius_lateral_frac{0.10, 0.22};  // fraction of n_lines
  ParamRange center_jitter_frac{-0.08, 0.08};  // offset from frame center
  // Cases whose amplitude ratio falls below this threshold are labeled
  // "malignant-like" (hypoechoic-leaning), the rest "benign-like".
  double label_ratio_threshold = 0.9;
};

void validate(const DatasetRanges& ranges);

struct DatasetEntry {
  LabeledFrame frame;
  std::size_t case_id = 0;
  std::string label;  // "benign-like" | "malignant-like"
};

// Randomizes one PhantomSpec per case within the ranges and emits two frames
// per case (the second models the perpendicular scan of the same mass: the
// inclusion axes are swapped and fresh scatterers are drawn).  Deterministic
// per seed; per-case streams are derived by seed splitting.
std::vector<DatasetEntry> make_dataset(std::size_t n_cases,
                                       const DatasetRanges& ranges,
                                       std::uint64_t rng_seed);

// Materializes a dataset on disk: RF container + mask PGM (0/255) per frame
// plus a JSON manifest listing {rf_path, mask_path, label, case_id}.
// Returns the manifest path.
std::string write_dataset(const std::string& dir,
                          const std::vector<DatasetEntry>& entries);

// One manifest row; paths are relative to the manifest's directory.
struct DatasetItem {
  std::string rf_path;
  std::string mask_path;
  std::string label;
  std::size_t case_id = 0;
};

std::vector<DatasetItem> read_dataset_manifest(const std::string& path);

}  // namespace qus
