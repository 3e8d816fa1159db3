#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "milpath/datamodel.hpp"
#include "milpath/image.hpp"

namespace milpath {

struct NucleusRecord {
  std::string slide_id;
  PatchRef patch;
  std::uint32_t nucleus_id = 0;
  double area = 0.0;          // pixel count
  double perimeter = 0.0;     // 8-connected boundary walk, steps 1 and sqrt(2)
  double circularity = 0.0;   // 4 pi A / P^2, clipped to 1
  double aspect_ratio = 1.0;  // major / minor axis of the moment ellipse
  double solidity = 1.0;      // A / lattice pixels inside the convex hull
  std::optional<double> rb_ratio;  // mean red / mean blue; nullopt if blue mean is 0
};

/// Length of the outer boundary of the 8-connected pixel set, traced through
/// pixel centres (Moore neighbour tracing) starting from its first raster pixel.
double boundary_walk_length(const LabelMask& mask, std::uint32_t id);

/// Number of lattice points inside or on the convex hull of the given points.
std::int64_t hull_lattice_count(std::vector<std::array<std::int64_t, 2>> points);

/// Per-nucleus features, sorted by nucleus id.
std::vector<NucleusRecord> nucleus_features(const LabelMask& mask, const RgbImage& patch,
                                            std::string_view slide_id = {},
                                            const PatchRef& patch_ref = {});

struct PatchAggregate {
  std::string slide_id;
  PatchRef patch;
  int nucleus_count = 0;
  std::optional<double> nc_ratio;  // nucleus pixels / non-nucleus pixels
  double mean_area = 0.0;
  double mean_perimeter = 0.0;
  double mean_circularity = 0.0;
  double mean_aspect_ratio = 0.0;
  double mean_solidity = 0.0;
  std::optional<double> mean_rb_ratio;
};

PatchAggregate patch_aggregate(const LabelMask& mask, std::span<const NucleusRecord> records);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Two-sided Welch t-test. Throws kUndefined when a sample has fewer than two
/// observations or both samples have zero variance.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct BoxStats {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;   // smallest value >= q1 - 1.5 IQR
  double whisker_high = 0.0;  // largest value <= q3 + 1.5 IQR
  std::vector<double> outliers;
};

/// Quartiles by linear interpolation between order statistics.
BoxStats box_stats(std::span<const double> values);

struct GroupSummary {
  int n = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  BoxStats box;
};

struct FeatureComparison {
  std::string feature;
  std::string unit;  // "nucleus" or "patch": the observation each value represents
  GroupSummary abc;
  GroupSummary gcb;
  std::optional<WelchResult> test;  // nullopt when the test is undefined
};

struct GroupStats {
  std::vector<FeatureComparison> features;
  int excluded_rb_abc = 0;  // nuclei without a defined R/B ratio
  int excluded_rb_gcb = 0;
  int excluded_nc_abc = 0;  // patches without a defined N/C ratio
  int excluded_nc_gcb = 0;

  const FeatureComparison* find(std::string_view feature) const;
};

/// Per-nucleus features (area, perimeter, circularity, aspect_ratio, solidity,
/// rb_ratio) and per-patch features (nucleus_count, nc_ratio), ABC vs GCB.
GroupStats compare_groups(std::span<const NucleusRecord> abc_nuclei,
                          std::span<const NucleusRecord> gcb_nuclei,
                          std::span<const PatchAggregate> abc_patches,
                          std::span<const PatchAggregate> gcb_patches);

std::string nucleus_csv_header();
std::string nucleus_csv_row(const NucleusRecord& r);
std::string group_stats_json(const GroupStats& stats);

}  // namespace milpath
