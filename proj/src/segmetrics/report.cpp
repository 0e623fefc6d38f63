#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cascade/segmetrics.hpp"

namespace cascade::segmetrics {

namespace {

MetricValue defined(double v) { return {v, ""}; }
MetricValue flagged(std::optional<double> v, const char* why) {
  if (v) return defined(*v);
  return {std::nullopt, why};
}

RegionReport evaluate_region(const volcore::LabelVolume& pred, const volcore::LabelVolume& truth,
                             const volcore::Spacing& spacing, const EvalOptions& options) {
  RegionReport r;
  r.counts = confusion_counts(pred, truth);
  r.metrics[0] = defined(dice(r.counts));
  r.metrics[1] = flagged(sensitivity(r.counts), "undefined: empty truth");
  r.metrics[2] = flagged(specificity(r.counts), "undefined: empty truth background");
  r.metrics[3] = flagged(precision(r.counts), "undefined: empty prediction");

  auto ps = surface_voxels(pred);
  auto ts = surface_voxels(truth);
  ps.spacing = ts.spacing = spacing;
  if (ps.empty() || ts.empty()) {
    r.metrics[4] = r.metrics[5] = {std::nullopt, "EmptySurface"};
  } else {
    r.metrics[4] = defined(hausdorff(ps, ts, options.hausdorff_percentile, options.method));
    r.metrics[5] = defined(assd(ps, ts, options.method));
  }
  return r;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

ScanReport evaluate_scan(const std::string& scan_id, const volcore::LabelVolume& pred,
                         const volcore::LabelVolume& truth, const volcore::Spacing& spacing,
                         const EvalOptions& options) {
  if (pred.dims() != truth.dims()) throw Error(Errc::DimsMismatch, scan_id + ": prediction and truth dims differ");
  const auto p = volcore::decompose_regions(pred);
  const auto t = volcore::decompose_regions(truth);
  ScanReport report{scan_id, {}};
  report.regions[0] = evaluate_region(p.wt, t.wt, spacing, options);
  report.regions[1] = evaluate_region(p.tc, t.tc, spacing, options);
  report.regions[2] = evaluate_region(p.et, t.et, spacing, options);
  return report;
}

nlohmann::json to_json(const ScanReport& report) {
  nlohmann::json j;
  j["scan_id"] = report.scan_id;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& reg = report.regions[r];
    nlohmann::json rj;
    nlohmann::json flags = nlohmann::json::object();
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
      const auto& mv = reg.metrics[m];
      rj[kMetricNames[m]] = mv.value ? nlohmann::json(*mv.value) : nlohmann::json(nullptr);
      if (!mv.flag.empty()) flags[kMetricNames[m]] = mv.flag;
    }
    rj["flags"] = flags;
    rj["counts"] = {{"tp", reg.counts.tp}, {"fp", reg.counts.fp}, {"tn", reg.counts.tn}, {"fn", reg.counts.fn}};
    j["regions"][kRegionNames[r]] = rj;
  }
  return j;
}

std::string aggregate_csv(std::vector<ScanReport> reports) {
  std::sort(reports.begin(), reports.end(),
            [](const ScanReport& a, const ScanReport& b) { return a.scan_id < b.scan_id; });
  std::ostringstream out;
  out << "scan_id";
  for (auto region : kRegionNames)
    for (auto metric : kMetricNames) out << ',' << region << '_' << metric;
  out << '\n';

  constexpr std::size_t kCols = 18;
  std::array<std::vector<double>, kCols> columns;
  for (const auto& rep : reports) {
    out << rep.scan_id;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t m = 0; m < 6; ++m) {
        const auto& mv = rep.regions[r].metrics[m];
        if (mv.value) {
          out << ',' << format_number(*mv.value);
          columns[r * 6 + m].push_back(*mv.value);
        } else {
          out << ",NA";
        }
      }
    out << '\n';
  }

  std::array<std::string, kCols> means, stds;
  for (std::size_t c = 0; c < kCols; ++c) {
    const auto& col = columns[c];
    if (col.empty()) {
      means[c] = stds[c] = "NA";
      continue;
    }
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    const double sd = col.size() > 1 ? std::sqrt(var / static_cast<double>(col.size() - 1)) : 0.0;
    means[c] = format_number(mean);
    stds[c] = format_number(sd);
  }
  out << "mean";
  for (const auto& s : means) out << ',' << s;
  out << "\nstd";
  for (const auto& s : stds) out << ',' << s;
  out << '\n';
  return out.str();
}

}  // namespace cascade::segmetrics
