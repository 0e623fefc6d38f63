#include <algorithm>
#include <cmath>
#include <random>

#include "cascade/ctxwin.hpp"

namespace cascade::ctxwin {

std::vector<ScaleSpec> make_scales(Size2 original, const std::vector<double>& factors, Size2 window) {
  std::vector<ScaleSpec> scales;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double f = factors[i];
    if (!(f > 0)) throw Error(Errc::ConfigInvalid, "scale factor must be positive");
    const Size2 dims{static_cast<int>(std::lround(original.w * f)), static_cast<int>(std::lround(original.h * f))};
    if (dims.w < window.w || dims.h < window.h) {
      throw Error(Errc::WindowLargerThanImage, "scale " + std::to_string(f) + " gives " + std::to_string(dims.w) +
                                                   "x" + std::to_string(dims.h) + ", smaller than the window");
    }
    scales.push_back({static_cast<int>(i), f, dims});
  }
  return scales;
}

namespace {
Rect clip(Rect r, Size2 bounds) {
  r.x0 = std::clamp(r.x0, 0, bounds.w - 1);
  r.x1 = std::clamp(r.x1, 0, bounds.w - 1);
  r.y0 = std::clamp(r.y0, 0, bounds.h - 1);
  r.y1 = std::clamp(r.y1, 0, bounds.h - 1);
  return r;
}

Rect rescale(const Rect& r, double f, Size2 bounds) {
  Rect out{static_cast<int>(std::floor(r.x0 * f)), static_cast<int>(std::floor(r.y0 * f)),
           static_cast<int>(std::ceil((r.x1 + 1) * f)) - 1, static_cast<int>(std::ceil((r.y1 + 1) * f)) - 1};
  out.x1 = std::max(out.x1, out.x0);
  out.y1 = std::max(out.y1, out.y0);
  return clip(out, bounds);
}
}  // namespace

Rect scale_rect(const Rect& r, double factor, Size2 bounds) { return rescale(r, factor, bounds); }
Rect unscale_rect(const Rect& r, double factor, Size2 bounds) { return rescale(r, 1.0 / factor, bounds); }

double iou(const Rect& a, const Rect& b) {
  const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  if (ix0 > ix1 || iy0 > iy1) return 0.0;
  const long long inter = static_cast<long long>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

namespace {
std::vector<int> grid_starts(int extent, int window, int stride) {
  std::vector<int> starts;
  for (int s = 0; s + window <= extent; s += stride) starts.push_back(s);
  if (starts.back() + window < extent) starts.push_back(extent - window);
  return starts;
}
}  // namespace

std::vector<Rect> enumerate_windows(Size2 scaled_dims, Size2 window_dims, int stride) {
  if (stride < 1) throw Error(Errc::ConfigInvalid, "window stride must be >= 1");
  if (window_dims.w < 1 || window_dims.h < 1) throw Error(Errc::ConfigInvalid, "window dims must be >= 1");
  if (window_dims.w > scaled_dims.w || window_dims.h > scaled_dims.h) {
    throw Error(Errc::WindowLargerThanImage, std::to_string(window_dims.w) + "x" + std::to_string(window_dims.h) +
                                                 " window on " + std::to_string(scaled_dims.w) + "x" +
                                                 std::to_string(scaled_dims.h) + " image");
  }
  const auto xs = grid_starts(scaled_dims.w, window_dims.w, stride);
  const auto ys = grid_starts(scaled_dims.h, window_dims.h, stride);
  std::vector<Rect> out;
  out.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) out.push_back({x, y, x + window_dims.w - 1, y + window_dims.h - 1});
  return out;
}

std::vector<Window> positive_windows(const std::vector<Rect>& gt_boxes, Size2 scaled_dims, int scale_id) {
  std::vector<Window> out;
  out.reserve(gt_boxes.size());
  for (const auto& g : gt_boxes) {
    const int w = g.width(), h = g.height();
    Rect r{g.x0 - w / 2, g.y0 - h / 2, g.x1 + (w - w / 2), g.y1 + (h - h / 2)};
    out.push_back({clip(r, scaled_dims), scale_id, WindowKind::positive});
  }
  return out;
}

std::vector<Window> negative_windows(const std::vector<Proposal>& proposals, const std::vector<Window>& positives,
                                     const std::vector<Rect>& grid, int min_proposals, int scale_id) {
  if (min_proposals < 1) throw Error(Errc::ConfigInvalid, "min_proposals must be >= 1");

  struct Center {
    double x, y;
  };
  std::vector<Center> remaining;
  for (const auto& p : proposals) {
    const double cx = p.rect.center_x(), cy = p.rect.center_y();
    const bool in_positive = std::any_of(positives.begin(), positives.end(),
                                         [&](const Window& w) { return w.rect.contains_point(cx, cy); });
    if (!in_positive) remaining.push_back({cx, cy});
  }

  std::vector<char> covered(remaining.size(), 0);
  std::vector<char> picked(grid.size(), 0);
  std::vector<Window> out;
  while (true) {
    int best = -1;
    int best_count = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (picked[g]) continue;
      int count = 0;
      for (std::size_t i = 0; i < remaining.size(); ++i) {
        if (!covered[i] && grid[g].contains_point(remaining[i].x, remaining[i].y)) ++count;
      }
      if (count > best_count) {
        best = static_cast<int>(g);
        best_count = count;
      }
    }
    if (best < 0 || best_count < min_proposals) break;
    picked[best] = 1;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      if (grid[best].contains_point(remaining[i].x, remaining[i].y)) covered[i] = 1;
    }
    out.push_back({grid[best], scale_id, WindowKind::negative});
  }
  return out;
}

BoxDelta encode_delta(const Rect& p, const Rect& g) {
  const double pw = p.width(), ph = p.height();
  return {(g.center_x() - p.center_x()) / pw, (g.center_y() - p.center_y()) / ph, std::log(g.width() / pw),
          std::log(g.height() / ph)};
}

std::array<double, 4> decode_delta_continuous(const Rect& p, const BoxDelta& d) {
  const double pw = p.width(), ph = p.height();
  return {p.center_x() + d.dx * pw, p.center_y() + d.dy * ph, pw * std::exp(d.dw), ph * std::exp(d.dh)};
}

Rect decode_delta(const Rect& p, const BoxDelta& d) {
  const auto [cx, cy, w, h] = decode_delta_continuous(p, d);
  Rect r{static_cast<int>(std::lround(cx - 0.5 * (w - 1))), static_cast<int>(std::lround(cy - 0.5 * (h - 1))),
         static_cast<int>(std::lround(cx + 0.5 * (w - 1))), static_cast<int>(std::lround(cy + 0.5 * (h - 1)))};
  r.x1 = std::max(r.x1, r.x0);
  r.y1 = std::max(r.y1, r.y0);
  return r;
}

std::vector<LabeledProposal> assign_proposal_labels(const std::vector<Proposal>& proposals,
                                                    const std::vector<Rect>& gt_boxes,
                                                    const std::vector<Window>& windows, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(Errc::ConfigInvalid, "IoU threshold must lie in (0,1)");
  std::vector<LabeledProposal> out;
  for (const auto& p : proposals) {
    const double cx = p.rect.center_x(), cy = p.rect.center_y();
    const bool kept = std::any_of(windows.begin(), windows.end(),
                                  [&](const Window& w) { return w.rect.contains_point(cx, cy); });
    if (!kept) continue;

    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double o = iou(p.rect, gt_boxes[g]);
      if (o > best) {
        best = o;
        best_gt = static_cast<int>(g);
      }
    }
    LabeledProposal lp{p, ProposalLabel::negative, std::nullopt};
    if (best_gt >= 0 && best > threshold) {
      lp.label = ProposalLabel::positive;
      lp.regression_target = encode_delta(p.rect, gt_boxes[best_gt]);
    }
    out.push_back(lp);
  }
  return out;
}

std::vector<Proposal> oracle_proposals(const std::vector<Rect>& gt_boxes, Size2 bounds, std::uint64_t seed, int count,
                                       int slice_z, int scale_id) {
  if (count < 1) throw Error(Errc::ConfigInvalid, "proposal count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);

  std::vector<Proposal> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rect r;
    if (!gt_boxes.empty() && i % 2 == 0) {
      const auto& g = gt_boxes[static_cast<std::size_t>(unit(rng) * gt_boxes.size()) % gt_boxes.size()];
      const double w = g.width() * (1.0 + jitter(rng));
      const double h = g.height() * (1.0 + jitter(rng));
      const double cx = g.center_x() + g.width() * jitter(rng);
      const double cy = g.center_y() + g.height() * jitter(rng);
      r = {static_cast<int>(std::lround(cx - 0.5 * (w - 1))), static_cast<int>(std::lround(cy - 0.5 * (h - 1))),
           static_cast<int>(std::lround(cx + 0.5 * (w - 1))), static_cast<int>(std::lround(cy + 0.5 * (h - 1)))};
    } else {
      const int max_w = std::max(4, bounds.w / 2), max_h = std::max(4, bounds.h / 2);
      const int w = 4 + static_cast<int>(unit(rng) * (max_w - 3));
      const int h = 4 + static_cast<int>(unit(rng) * (max_h - 3));
      const int x0 = static_cast<int>(unit(rng) * std::max(1, bounds.w - w + 1));
      const int y0 = static_cast<int>(unit(rng) * std::max(1, bounds.h - h + 1));
      r = {x0, y0, x0 + w - 1, y0 + h - 1};
    }
    r = clip(r, bounds);
    r.x1 = std::max(r.x1, r.x0);
    r.y1 = std::max(r.y1, r.y0);
    out.push_back({r, unit(rng), slice_z, scale_id});
  }
  return out;
}

std::optional<volcore::Box3> aggregate_detections(const std::vector<SliceBox>& slice_boxes, double score_floor) {
  std::optional<volcore::Box3> box;
  for (const auto& b : slice_boxes) {
    if (b.score < score_floor) continue;
    const volcore::Box3 one{{b.rect.x0, b.rect.y0, b.slice_z}, {b.rect.x1, b.rect.y1, b.slice_z}};
    if (!box) {
      box = one;
      continue;
    }
    for (int a = 0; a < 3; ++a) {
      box->min[a] = std::min(box->min[a], one.min[a]);
      box->max[a] = std::max(box->max[a], one.max[a]);
    }
  }
  return box;
}

}  // namespace cascade::ctxwin
