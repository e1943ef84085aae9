#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qus/raster.hpp"
#include "qus/sample.hpp"

namespace qus {

// Masks are RasterU8 with values in {0,1}; ops below throw
// InvalidInputError on other values and ShapeError on dim mismatches.

// 2|a n b| / (|a| + |b|); both masks empty -> 1.0 (perfect agreement on
// absence), one empty -> 0.0.
double dice(const RasterU8& a, const RasterU8& b);

// |a n b| / |a u b|; both empty -> 1.0.  Satisfies J = D / (2 - D).
double jaccard(const RasterU8& a, const RasterU8& b);

// pixel = 1 iff value >= tau.  Throws ParameterError when tau is outside
// [0, 1].
RasterU8 threshold(const RasterF64& pred, double tau = 0.5);

// Morphology with the discrete disk {(dr,dc): dr^2+dc^2 <= r^2} and
// zero-padding outside the frame.  Radius 0 is the identity.
RasterU8 dilate(const RasterU8& mask, int disk_radius);
RasterU8 erode(const RasterU8& mask, int disk_radius);
RasterU8 morph_close(const RasterU8& mask, int disk_radius = 3);

// Two-sample Mann-Whitney / rank-sum comparison.  u is the U statistic of
// the first sample (midranks for ties).  p is two-sided: exact subset
// enumeration when n+m <= 12 and there are no ties, otherwise a normal
// approximation with tie-corrected variance and continuity correction.
struct WilcoxonResult {
  double u = 0.0;
  double p = 1.0;
  bool exact = false;
};

WilcoxonResult wilcoxon_rank_sum(const std::vector<double>& x,
                                 const std::vector<double>& y);

struct SplitFractions {
  double train = 0.55;
  double val = 0.15;
  double test = 0.30;
};

struct CaseLabel {
  std::size_t case_id = 0;
  std::string label;
};

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Stratified case-level split: cases are grouped by label, sorted by id,
// shuffled with a per-label seeded stream, then cut at the cumulative
// fraction boundaries (floor at each cut).  Deterministic per seed and
// invariant to input order.  Throws ParameterError when fractions do not
// sum to 1 (tolerance 1e-9) or a label has fewer cases than splits.
SplitResult split_dataset(const std::vector<CaseLabel>& cases,
                          const SplitFractions& fractions, std::uint64_t seed);

// Originals followed by laterally mirrored copies (scan-line order
// reversed, image and mask together).  Output size is exactly double.
std::vector<Sample> augment_hflip(const std::vector<Sample>& pairs);
Sample hflip(const Sample& s);

struct CaseScore {
  std::size_t case_id = 0;
  std::string label;
  double dice = 0.0;
  double jaccard = 0.0;
};

struct GroupStats {
  std::size_t count = 0;
  double dice_mean = 0.0;
  double dice_median = 0.0;
  double dice_std = 0.0;
  double jaccard_mean = 0.0;
  double jaccard_median = 0.0;
  double jaccard_std = 0.0;
};

struct MetricsReport {
  std::vector<CaseScore> per_case;
  // One entry per observed label (sorted) plus "all" last; empty groups are
  // omitted.
  std::vector<std::pair<std::string, GroupStats>> groups;
  std::optional<double> wilcoxon_p;
};

// Scores aligned prediction/truth lists.  case_ids defaults to list indices.
// Throws ParameterError on length mismatches.
MetricsReport evaluate(const std::vector<RasterU8>& preds,
                       const std::vector<RasterU8>& truths,
                       const std::vector<std::string>& labels,
                       const std::vector<std::size_t>& case_ids = {});

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

// Aligned plain-text table: one row per group, "mean (median+/-std)" per
// score.
std::string render_report_table(const MetricsReport& report);

}  // namespace qus
