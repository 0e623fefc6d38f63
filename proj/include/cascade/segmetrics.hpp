#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cascade/volcore.hpp"
#include "json.hpp"

namespace cascade::segmetrics {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion_counts(const volcore::LabelVolume& pred, const volcore::LabelVolume& truth);

/// 2tp / (2tp + fp + fn); 1.0 when both masks are empty.
double dice(const ConfusionCounts& c);
/// tp / (tp + fn); absent when the truth is empty.
std::optional<double> sensitivity(const ConfusionCounts& c);
/// tn / (tn + fp); absent when the truth background is empty.
std::optional<double> specificity(const ConfusionCounts& c);
/// tp / (tp + fp); absent when the prediction is empty.
std::optional<double> precision(const ConfusionCounts& c);

/// Foreground voxels with at least one background or out-of-volume 6-neighbour.
struct SurfaceSet {
  std::vector<std::array<int, 3>> voxels;
  volcore::Dims dims;
  volcore::Spacing spacing;

  bool empty() const noexcept { return voxels.empty(); }
};

SurfaceSet surface_voxels(const volcore::LabelVolume& mask);

enum class DistanceMethod { distance_transform, brute_force };

/// Physical distance from each voxel of `from` to the nearest voxel of `to`.
std::vector<double> directed_distances(const SurfaceSet& from, const SurfaceSet& to,
                                       DistanceMethod method = DistanceMethod::distance_transform);

/// Symmetric Hausdorff distance. With `percentile` (e.g. 95) each directed
/// distance is that percentile (linear interpolation) of its list.
double hausdorff(const SurfaceSet& pred, const SurfaceSet& truth, std::optional<double> percentile = std::nullopt,
                 DistanceMethod method = DistanceMethod::distance_transform);

double assd(const SurfaceSet& pred, const SurfaceSet& truth, DistanceMethod method = DistanceMethod::distance_transform);

enum class Region { wt = 0, tc = 1, et = 2 };
inline constexpr std::array<const char*, 3> kRegionNames = {"WT", "TC", "ET"};
inline constexpr std::array<const char*, 6> kMetricNames = {"dice",      "sensitivity", "specificity",
                                                            "precision", "hausdorff",   "assd"};

/// A metric value or the reason it is undefined.
struct MetricValue {
  std::optional<double> value;
  std::string flag;
};

struct RegionReport {
  ConfusionCounts counts;
  std::array<MetricValue, 6> metrics;  // ordered as kMetricNames

  const MetricValue& metric(std::size_t i) const { return metrics[i]; }
};

struct ScanReport {
  std::string scan_id;
  std::array<RegionReport, 3> regions;
};

struct EvalOptions {
  std::optional<double> hausdorff_percentile;
  DistanceMethod method = DistanceMethod::distance_transform;
};

ScanReport evaluate_scan(const std::string& scan_id, const volcore::LabelVolume& pred,
                         const volcore::LabelVolume& truth, const volcore::Spacing& spacing,
                         const EvalOptions& options = {});

nlohmann::json to_json(const ScanReport& report);

/// Rows ordered by scan_id, 18 region x metric columns, then mean and std
/// footer rows over the defined values of each column.
std::string aggregate_csv(std::vector<ScanReport> reports);

}  // namespace cascade::segmetrics
