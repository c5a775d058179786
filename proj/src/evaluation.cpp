#include "crswin/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "crswin/tensor.hpp"

namespace crswin {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_grids(const LabelMask& a, const LabelMask& b, const char* op) {
  if (a.d != b.d || a.h != b.h || a.w != b.w) {
    throw ShapeError(std::string(op) + ": grids differ, (" + std::to_string(a.d) + "," +
                     std::to_string(a.h) + "," + std::to_string(a.w) + ") vs (" +
                     std::to_string(b.d) + "," + std::to_string(b.h) + "," +
                     std::to_string(b.w) + ")");
  }
}

// Scaled centers of 6-connectivity boundary voxels; a grid edge counts as
// background on the far side.
std::vector<std::array<double, 3>> surface_points(const LabelMask& mask,
                                                  const std::array<double, 3>& spacing) {
  std::vector<std::array<double, 3>> pts;
  const auto inside = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return z >= 0 && z < mask.d && y >= 0 && y < mask.h && x >= 0 && x < mask.w &&
           mask.at(z, y, x) != 0;
  };
  for (std::int64_t z = 0; z < mask.d; ++z) {
    for (std::int64_t y = 0; y < mask.h; ++y) {
      for (std::int64_t x = 0; x < mask.w; ++x) {
        if (mask.at(z, y, x) == 0) continue;
        const bool boundary = !inside(z - 1, y, x) || !inside(z + 1, y, x) ||
                              !inside(z, y - 1, x) || !inside(z, y + 1, x) ||
                              !inside(z, y, x - 1) || !inside(z, y, x + 1);
        if (boundary) {
          pts.push_back({static_cast<double>(z) * spacing[0],
                         static_cast<double>(y) * spacing[1],
                         static_cast<double>(x) * spacing[2]});
        }
      }
    }
  }
  return pts;
}

void directed_distances(const std::vector<std::array<double, 3>>& from,
                        const std::vector<std::array<double, 3>>& to,
                        std::vector<double>& out) {
  for (const auto& a : from) {
    double best = kInf;
    for (const auto& b : to) {
      const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
}

double interp_quantile(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

bool mask_empty(const LabelMask& m) {
  return std::all_of(m.labels.begin(), m.labels.end(), [](std::uint8_t v) { return v == 0; });
}

void check_alphabet(const LabelMask& m, const char* which) {
  for (std::uint8_t v : m.labels) {
    if (v != 0 && v != 1 && v != 2 && v != 4) {
      throw LabelError(std::string("evaluate_case: ") + which + " holds label " +
                       std::to_string(static_cast<int>(v)) + ", expected {0,1,2,4}");
    }
  }
}

}  // namespace

const std::array<RegionSpec, 3>& tumor_regions() {
  static const std::array<RegionSpec, 3> regions = {{
      {"ET", {4}},
      {"TC", {1, 4}},
      {"WT", {1, 2, 4}},
  }};
  return regions;
}

LabelMask binarize_region(const LabelMask& mask, const RegionSpec& region) {
  LabelMask out;
  out.d = mask.d;
  out.h = mask.h;
  out.w = mask.w;
  out.labels.resize(mask.labels.size(), 0);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const std::uint8_t v = mask.labels[i];
    if (std::find(region.labels.begin(), region.labels.end(), v) != region.labels.end()) {
      out.labels[i] = 1;
    }
  }
  return out;
}

double dice_coefficient(const LabelMask& pred, const LabelMask& gt) {
  check_grids(pred, gt, "dice_coefficient");
  std::int64_t inter = 0, pa = 0, ga = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] != 0;
    const bool g = gt.labels[i] != 0;
    inter += p && g;
    pa += p;
    ga += g;
  }
  if (pa + ga == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(pa + ga);
}

double hd95(const LabelMask& pred, const LabelMask& gt, const std::array<double, 3>& spacing) {
  check_grids(pred, gt, "hd95");
  const auto sp = surface_points(pred, spacing);
  const auto sg = surface_points(gt, spacing);
  if (sp.empty() && sg.empty()) return 0.0;
  if (sp.empty() || sg.empty()) return kInf;
  std::vector<double> pooled;
  pooled.reserve(sp.size() + sg.size());
  directed_distances(sp, sg, pooled);
  directed_distances(sg, sp, pooled);
  std::sort(pooled.begin(), pooled.end());
  return interp_quantile(pooled, 0.95);
}

SensSpec sensitivity_specificity(const LabelMask& pred, const LabelMask& gt) {
  check_grids(pred, gt, "sensitivity_specificity");
  std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] != 0;
    const bool g = gt.labels[i] != 0;
    tp += p && g;
    fn += !p && g;
    tn += !p && !g;
    fp += p && !g;
  }
  SensSpec out;
  out.gt_empty = tp + fn == 0;
  out.sensitivity = out.gt_empty ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  out.specificity = tn + fp == 0 ? 1.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
  return out;
}

CaseMetrics evaluate_case(const LabelMask& pred, const LabelMask& gt,
                          const std::array<double, 3>& spacing, std::string case_id) {
  check_grids(pred, gt, "evaluate_case");
  check_alphabet(pred, "prediction");
  check_alphabet(gt, "ground truth");
  CaseMetrics out;
  out.case_id = std::move(case_id);
  const auto& regions = tumor_regions();
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const LabelMask bp = binarize_region(pred, regions[i]);
    const LabelMask bg = binarize_region(gt, regions[i]);
    RegionMetrics& m = out.regions[i];
    m.region = regions[i].name;
    m.dice = dice_coefficient(bp, bg);
    m.hd95 = hd95(bp, bg, spacing);
    const SensSpec ss = sensitivity_specificity(bp, bg);
    m.sensitivity = ss.sensitivity;
    m.specificity = ss.specificity;
    m.gt_empty = ss.gt_empty;
    m.pred_empty = mask_empty(bp);
  }
  return out;
}

BoxplotStats boxplot_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("boxplot_stats: empty sample");
  std::sort(values.begin(), values.end());
  BoxplotStats s;
  s.q1 = interp_quantile(values, 0.25);
  s.median = interp_quantile(values, 0.50);
  s.q3 = interp_quantile(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  s.min = kInf;
  s.max = -kInf;
  bool any_inlier = false;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      s.outliers.push_back(v);
    } else {
      any_inlier = true;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
  }
  if (!any_inlier) {  // degenerate: every value outside its own fences cannot
    s.min = values.front();
    s.max = values.back();
  }
  return s;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

void write_metrics_csv(const std::vector<CaseMetrics>& cases, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_metrics_csv: cannot open " + path.string());
  out << "case_id,region,dice,hd95,sensitivity,specificity\n";
  for (const auto& c : cases) {
    for (const auto& m : c.regions) {
      out << c.case_id << ',' << m.region << ',' << fmt(m.dice) << ',' << fmt(m.hd95) << ','
          << fmt(m.sensitivity) << ',' << fmt(m.specificity) << '\n';
    }
  }
  if (!out.flush()) throw IoError("write_metrics_csv: write failed for " + path.string());
}

void write_boxplot_csv(const std::vector<CaseMetrics>& cases, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_boxplot_csv: cannot open " + path.string());
  out << "region,metric,min,q1,median,q3,max,outliers\n";
  const char* metric_names[] = {"dice", "hd95", "sensitivity", "specificity"};
  for (std::size_t r = 0; r < tumor_regions().size(); ++r) {
    for (int metric = 0; metric < 4; ++metric) {
      std::vector<double> values;
      for (const auto& c : cases) {
        const RegionMetrics& m = c.regions[r];
        const double v = metric == 0   ? m.dice
                         : metric == 1 ? m.hd95
                         : metric == 2 ? m.sensitivity
                                       : m.specificity;
        if (std::isfinite(v)) values.push_back(v);
      }
      if (values.empty()) continue;
      const BoxplotStats s = boxplot_stats(values);
      out << tumor_regions()[r].name << ',' << metric_names[metric] << ',' << fmt(s.min) << ','
          << fmt(s.q1) << ',' << fmt(s.median) << ',' << fmt(s.q3) << ',' << fmt(s.max) << ',';
      for (std::size_t i = 0; i < s.outliers.size(); ++i) {
        if (i) out << ';';
        out << fmt(s.outliers[i]);
      }
      out << '\n';
    }
  }
  if (!out.flush()) throw IoError("write_boxplot_csv: write failed for " + path.string());
}

}  // namespace crswin
