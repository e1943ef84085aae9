#include "qus/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "qus/errors.hpp"
#include "qus/rng.hpp"

namespace qus {

namespace {

void check_mask(const RasterU8& m, const char* who) {
  if (m.empty()) throw SizeError(std::string(who) + ": empty mask");
  for (std::uint8_t v : m.storage())
    if (v > 1)
      throw InvalidInputError(std::string(who) +
                              ": mask values must be 0 or 1");
}

struct Overlap {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
};

Overlap overlap(const RasterU8& a, const RasterU8& b, const char* who) {
  check_mask(a, who);
  check_mask(b, who);
  if (!a.same_shape(b))
    throw ShapeError(std::string(who) + ": mask dims differ");
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    o.a += a.storage()[i];
    o.b += b.storage()[i];
    o.both += static_cast<std::size_t>(a.storage()[i] & b.storage()[i]);
  }
  return o;
}

}  // namespace

double dice(const RasterU8& a, const RasterU8& b) {
  const Overlap o = overlap(a, b, "dice");
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) /
         static_cast<double>(o.a + o.b);
}

double jaccard(const RasterU8& a, const RasterU8& b) {
  const Overlap o = overlap(a, b, "jaccard");
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

RasterU8 threshold(const RasterF64& pred, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw ParameterError("threshold must lie in [0, 1]");
  if (pred.empty()) throw SizeError("threshold: empty raster");
  RasterU8 out(pred.rows(), pred.cols());
  for (std::size_t i = 0; i < pred.size(); ++i)
    out.storage()[i] = pred.storage()[i] >= tau ? 1 : 0;
  return out;
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int r) {
  if (r < 0) throw ParameterError("disk radius must be >= 0");
  std::vector<std::pair<int, int>> offs;
  for (int dr = -r; dr <= r; ++dr)
    for (int dc = -r; dc <= r; ++dc)
      if (dr * dr + dc * dc <= r * r) offs.emplace_back(dr, dc);
  return offs;
}

}  // namespace

RasterU8 dilate(const RasterU8& mask, int disk_radius) {
  check_mask(mask, "dilate");
  const auto offs = disk_offsets(disk_radius);
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  RasterU8 out(mask.rows(), mask.cols(), 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      for (const auto& [dr, dc] : offs) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr >= 0 && rr < rows && cc >= 0 && cc < cols &&
            mask(static_cast<std::size_t>(rr),
                 static_cast<std::size_t>(cc))) {
          out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1;
          break;
        }
      }
    }
  return out;
}

RasterU8 erode(const RasterU8& mask, int disk_radius) {
  check_mask(mask, "erode");
  const auto offs = disk_offsets(disk_radius);
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  RasterU8 out(mask.rows(), mask.cols(), 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      bool all = true;
      for (const auto& [dr, dc] : offs) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols ||
            !mask(static_cast<std::size_t>(rr),
                  static_cast<std::size_t>(cc))) {
          all = false;
          break;
        }
      }
      if (all)
        out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1;
    }
  return out;
}

RasterU8 morph_close(const RasterU8& mask, int disk_radius) {
  return erode(dilate(mask, disk_radius), disk_radius);
}

namespace {

// Midranks of the concatenation x ++ y, plus tie-group sizes.
struct Ranked {
  std::vector<double> ranks;  // aligned with x ++ y
  std::vector<std::size_t> tie_sizes;
  bool has_ties = false;
};

Ranked midranks(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size() + y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto value = [&](std::size_t i) {
    return i < x.size() ? x[i] : y[i - x.size()];
  };
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
  Ranked out;
  out.ranks.resize(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && value(order[j + 1]) == value(order[i])) ++j;
    const double rank =
        (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) out.ranks[order[k]] = rank;
    out.tie_sizes.push_back(j - i + 1);
    if (j > i) out.has_ties = true;
    i = j + 1;
  }
  return out;
}

}  // namespace

WilcoxonResult wilcoxon_rank_sum(const std::vector<double>& x,
                                 const std::vector<double>& y) {
  if (x.empty() || y.empty())
    throw ParameterError("rank-sum test needs non-empty samples");
  for (double v : x)
    if (!std::isfinite(v))
      throw InvalidInputError("rank-sum input must be finite");
  for (double v : y)
    if (!std::isfinite(v))
      throw InvalidInputError("rank-sum input must be finite");

  const std::size_t n1 = x.size();
  const std::size_t n2 = y.size();
  const std::size_t n = n1 + n2;
  const Ranked ranked = midranks(x, y);
  double r1 = 0.0;
  for (std::size_t i = 0; i < n1; ++i) r1 += ranked.ranks[i];
  const double nm = static_cast<double>(n1) * static_cast<double>(n2);
  const double u1 = r1 - static_cast<double>(n1 * (n1 + 1)) / 2.0;

  WilcoxonResult res;
  res.u = u1;

  if (n <= 12 && !ranked.has_ties) {
    // Exhaustive null distribution of the rank sum over all C(n, n1)
    // assignments of ranks 1..n to the first sample.
    const double u_min = std::min(u1, nm - u1);
    std::uint64_t total = 0;
    std::uint64_t at_most = 0;
    const std::uint32_t full = 1u << n;
    for (std::uint32_t mask = 0; mask < full; ++mask) {
      if (std::popcount(mask) != static_cast<int>(n1)) continue;
      ++total;
      double r = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        if (mask & (1u << b)) r += static_cast<double>(b + 1);
      const double u = r - static_cast<double>(n1 * (n1 + 1)) / 2.0;
      if (u <= u_min + 1e-12) ++at_most;
    }
    res.exact = true;
    res.p = std::min(1.0, 2.0 * static_cast<double>(at_most) /
                              static_cast<double>(total));
    return res;
  }

  // Normal approximation with tie-corrected variance and continuity
  // correction.
  double tie_term = 0.0;
  for (std::size_t t : ranked.tie_sizes) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double nn = static_cast<double>(n);
  const double var =
      nm / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (!(var > 0.0)) {
    res.p = 1.0;  // every observation tied; no evidence either way
    return res;
  }
  const double z =
      std::max(0.0, std::abs(u1 - nm / 2.0) - 0.5) / std::sqrt(var);
  res.p = std::erfc(z / std::numbers::sqrt2);
  return res;
}

SplitResult split_dataset(const std::vector<CaseLabel>& cases,
                          const SplitFractions& fractions,
                          std::uint64_t seed) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw ParameterError("split fractions must sum to 1");
  if (fractions.train < 0.0 || fractions.val < 0.0 || fractions.test < 0.0)
    throw ParameterError("split fractions must be nonnegative");
  if (cases.empty()) throw ParameterError("no cases to split");

  std::map<std::string, std::vector<std::size_t>> by_label;
  for (const CaseLabel& c : cases) by_label[c.label].push_back(c.case_id);

  SplitResult out;
  std::size_t label_index = 0;
  for (auto& [label, ids] : by_label) {
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw InvalidInputError("duplicate case id under label " + label);
    if (ids.size() < 3)
      throw ParameterError("label " + label +
                           " has fewer cases than splits");
    std::mt19937_64 rng(derive_seed(seed, label_index++, 0x5917));
    std::shuffle(ids.begin(), ids.end(), rng);
    const double nd = static_cast<double>(ids.size());
    const auto cut1 = static_cast<std::size_t>(
        std::floor(nd * fractions.train));
    const auto cut2 = static_cast<std::size_t>(
        std::floor(nd * (fractions.train + fractions.val)));
    out.train.insert(out.train.end(), ids.begin(),
                     ids.begin() + static_cast<std::ptrdiff_t>(cut1));
    out.val.insert(out.val.end(),
                   ids.begin() + static_cast<std::ptrdiff_t>(cut1),
                   ids.begin() + static_cast<std::ptrdiff_t>(cut2));
    out.test.insert(out.test.end(),
                    ids.begin() + static_cast<std::ptrdiff_t>(cut2),
                    ids.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Sample hflip(const Sample& s) {
  if (s.image.rows() != s.mask.rows() || s.image.cols() != s.mask.cols())
    throw ShapeError("hflip: image and mask dims differ");
  Sample out;
  out.image = RasterF64(s.image.rows(), s.image.cols());
  out.mask = RasterU8(s.mask.rows(), s.mask.cols());
  const std::size_t rows = s.image.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t src = rows - 1 - r;
    std::copy(s.image.row(src), s.image.row(src) + s.image.cols(),
              out.image.row(r));
    std::copy(s.mask.row(src), s.mask.row(src) + s.mask.cols(),
              out.mask.row(r));
  }
  return out;
}

std::vector<Sample> augment_hflip(const std::vector<Sample>& pairs) {
  if (pairs.empty()) throw ParameterError("nothing to augment");
  std::vector<Sample> out;
  out.reserve(pairs.size() * 2);
  for (const Sample& s : pairs) out.push_back(s);
  for (const Sample& s : pairs) out.push_back(hflip(s));
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

double sample_std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

GroupStats stats_for(const std::vector<double>& dices,
                     const std::vector<double>& jaccards) {
  GroupStats g;
  g.count = dices.size();
  g.dice_mean = mean_of(dices);
  g.dice_median = median_of(dices);
  g.dice_std = sample_std_of(dices);
  g.jaccard_mean = mean_of(jaccards);
  g.jaccard_median = median_of(jaccards);
  g.jaccard_std = sample_std_of(jaccards);
  return g;
}

}  // namespace

MetricsReport evaluate(const std::vector<RasterU8>& preds,
                       const std::vector<RasterU8>& truths,
                       const std::vector<std::string>& labels,
                       const std::vector<std::size_t>& case_ids) {
  if (preds.size() != truths.size() || preds.size() != labels.size())
    throw ParameterError("prediction/truth/label lists differ in length");
  if (!case_ids.empty() && case_ids.size() != preds.size())
    throw ParameterError("case id list differs in length");
  if (preds.empty()) throw ParameterError("nothing to evaluate");

  MetricsReport report;
  report.per_case.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CaseScore s;
    s.case_id = case_ids.empty() ? i : case_ids[i];
    s.label = labels[i];
    s.dice = dice(preds[i], truths[i]);
    s.jaccard = jaccard(preds[i], truths[i]);
    report.per_case.push_back(std::move(s));
  }

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      by_group;
  for (const CaseScore& s : report.per_case) {
    by_group[s.label].first.push_back(s.dice);
    by_group[s.label].second.push_back(s.jaccard);
    by_group["all"].first.push_back(s.dice);
    by_group["all"].second.push_back(s.jaccard);
  }
  for (const auto& [label, scores] : by_group) {
    if (label == "all") continue;
    report.groups.emplace_back(label,
                               stats_for(scores.first, scores.second));
  }
  report.groups.emplace_back(
      "all", stats_for(by_group["all"].first, by_group["all"].second));
  return report;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["per_case"] = nlohmann::json::array();
  for (const CaseScore& s : report.per_case)
    j["per_case"].push_back({{"case_id", s.case_id},
                             {"label", s.label},
                             {"dice", s.dice},
                             {"jaccard", s.jaccard}});
  j["groups"] = nlohmann::json::object();
  for (const auto& [label, g] : report.groups)
    j["groups"][label] = {{"count", g.count},
                          {"dice_mean", g.dice_mean},
                          {"dice_median", g.dice_median},
                          {"dice_std", g.dice_std},
                          {"jaccard_mean", g.jaccard_mean},
                          {"jaccard_median", g.jaccard_median},
                          {"jaccard_std", g.jaccard_std}};
  if (report.wilcoxon_p) j["wilcoxon_p"] = *report.wilcoxon_p;
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport report;
  try {
    for (const auto& row : j.at("per_case")) {
      CaseScore s;
      s.case_id = row.at("case_id").get<std::size_t>();
      s.label = row.at("label").get<std::string>();
      s.dice = row.at("dice").get<double>();
      s.jaccard = row.at("jaccard").get<double>();
      report.per_case.push_back(std::move(s));
    }
    auto parse_stats = [](const nlohmann::json& g) {
      GroupStats stats;
      stats.count = g.at("count").get<std::size_t>();
      stats.dice_mean = g.at("dice_mean").get<double>();
      stats.dice_median = g.at("dice_median").get<double>();
      stats.dice_std = g.at("dice_std").get<double>();
      stats.jaccard_mean = g.at("jaccard_mean").get<double>();
      stats.jaccard_median = g.at("jaccard_median").get<double>();
      stats.jaccard_std = g.at("jaccard_std").get<double>();
      return stats;
    };
    for (const auto& [label, g] : j.at("groups").items())
      if (label != "all")  // "all" is appended last below
        report.groups.emplace_back(label, parse_stats(g));
    if (j.at("groups").contains("all"))
      report.groups.emplace_back("all", parse_stats(j.at("groups").at("all")));
    if (j.contains("wilcoxon_p"))
      report.wilcoxon_p = j.at("wilcoxon_p").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("malformed metrics report: ") +
                            e.what());
  }
  return report;
}

std::string render_report_table(const MetricsReport& report) {
  auto cell = [](double mean, double median, double sd) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f (%.2f+/-%.2f)", mean, median, sd);
    return std::string(buf);
  };
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %5s  %-22s %-22s\n", "group", "n",
                "dice", "jaccard");
  os << line;
  for (const auto& [label, g] : report.groups) {
    std::snprintf(line, sizeof(line), "%-16s %5zu  %-22s %-22s\n",
                  label.c_str(), g.count,
                  cell(g.dice_mean, g.dice_median, g.dice_std).c_str(),
                  cell(g.jaccard_mean, g.jaccard_median, g.jaccard_std)
                      .c_str());
    os << line;
  }
  if (report.wilcoxon_p) {
    std::snprintf(line, sizeof(line), "rank-sum p = %.4f\n",
                  *report.wilcoxon_p);
    os << line;
  }
  return os.str();
}

}  // namespace qus
