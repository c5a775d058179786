#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crswin/volume.hpp"

namespace crswin {

// Nested tumor regions over the external label alphabet {0,1,2,4}.
struct RegionSpec {
  std::string name;
  std::vector<std::uint8_t> labels;
};

// ET {4} within TC {1,4} within WT {1,2,4}.
const std::array<RegionSpec, 3>& tumor_regions();

// 0/1 mask of voxels whose label belongs to the region.
LabelMask binarize_region(const LabelMask& mask, const RegionSpec& region);

// 2|A/\B| / (|A|+|B|) over nonzero voxels; both empty -> 1.0.
double dice_coefficient(const LabelMask& pred, const LabelMask& gt);

// 95th percentile (linear interpolation) of the surface distances pooled over
// both directions. Surfaces are 6-connectivity boundary voxels, distances
// between voxel centers scaled by spacing (mm per (D,H,W) step). Exactly one
// side empty -> +inf; both empty -> 0.
double hd95(const LabelMask& pred, const LabelMask& gt, const std::array<double, 3>& spacing);

struct SensSpec {
  double sensitivity = 1.0;
  double specificity = 1.0;
  bool gt_empty = false;  // sensitivity undefined, reported as 1.0
};

// TP/(TP+FN) and TN/(TN+FP) over the full grid.
SensSpec sensitivity_specificity(const LabelMask& pred, const LabelMask& gt);

struct RegionMetrics {
  std::string region;
  double dice = 0.0;
  double hd95 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  bool gt_empty = false;
  bool pred_empty = false;
};

struct CaseMetrics {
  std::string case_id;
  std::array<RegionMetrics, 3> regions;  // aligned with tumor_regions()
};

// Binarizes per region and applies the four metrics. Masks use the external
// alphabet; any other label value raises LabelError.
CaseMetrics evaluate_case(const LabelMask& pred, const LabelMask& gt,
                          const std::array<double, 3>& spacing, std::string case_id = "");

// Tukey box plot: quartiles by linear interpolation over the sorted sample;
// values beyond 1.5*IQR fences are listed as outliers, and min/max are the
// whisker ends (extremes of the non-outlier values).
struct BoxplotStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::vector<double> outliers;
};

BoxplotStats boxplot_stats(std::vector<double> values);

// case_id,region,dice,hd95,sensitivity,specificity - one row per case/region.
void write_metrics_csv(const std::vector<CaseMetrics>& cases, const std::filesystem::path& path);

// region,metric,min,q1,median,q3,max,outliers; nonfinite hd95 values are
// excluded from aggregation.
void write_boxplot_csv(const std::vector<CaseMetrics>& cases, const std::filesystem::path& path);

}  // namespace crswin
