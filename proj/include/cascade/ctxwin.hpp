#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cascade/volcore.hpp"

namespace cascade::ctxwin {

/// Inclusive pixel rectangle on a (scaled) slice.
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const noexcept { return x1 - x0 + 1; }
  int height() const noexcept { return y1 - y0 + 1; }
  long long area() const noexcept { return static_cast<long long>(width()) * height(); }
  double center_x() const noexcept { return 0.5 * (x0 + x1); }
  double center_y() const noexcept { return 0.5 * (y0 + y1); }
  bool valid() const noexcept { return x0 <= x1 && y0 <= y1; }
  bool contains(const Rect& r) const noexcept { return r.x0 >= x0 && r.y0 >= y0 && r.x1 <= x1 && r.y1 <= y1; }
  bool contains_point(double x, double y) const noexcept { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct Size2 {
  int w = 0, h = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

struct ScaleSpec {
  int scale_id = 0;
  double factor = 1.0;
  Size2 scaled_dims;
};

/// Builds one ScaleSpec per factor; throws WindowLargerThanImage when a
/// scaled slice would be smaller than the window.
std::vector<ScaleSpec> make_scales(Size2 original, const std::vector<double>& factors, Size2 window);

/// Maps a rect between original and scaled pixel grids (pixel-edge space).
Rect scale_rect(const Rect& r, double factor, Size2 bounds);
Rect unscale_rect(const Rect& r, double factor, Size2 bounds);

enum class WindowKind { positive, negative };

struct Window {
  Rect rect;
  int scale_id = 0;
  WindowKind kind = WindowKind::negative;
  friend bool operator==(const Window&, const Window&) = default;
};

struct Proposal {
  Rect rect;
  double score = 0.0;
  int slice_z = 0;
  int scale_id = 0;
  friend bool operator==(const Proposal&, const Proposal&) = default;
};

/// Center/log-size box deltas.
struct BoxDelta {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

enum class ProposalLabel { positive, negative };

struct LabeledProposal {
  Proposal proposal;
  ProposalLabel label = ProposalLabel::negative;
  std::optional<BoxDelta> regression_target;
};

/// Intersection over union counting inclusive integer pixels.
double iou(const Rect& a, const Rect& b);

/// Raster-ordered k1 x k2 windows at stride K. The final row and column are
/// shifted inward so every pixel is covered whenever stride <= window.
std::vector<Rect> enumerate_windows(Size2 scaled_dims, Size2 window_dims, int stride);

/// One window per ground-truth box: same center, doubled size, clipped.
std::vector<Window> positive_windows(const std::vector<Rect>& gt_boxes, Size2 scaled_dims, int scale_id = 0);

/// Greedy negative-window mining over proposal centers.
///
/// Proposals whose center lies in any positive window are discarded first.
/// The grid window covering the most not-yet-covered centers is then picked
/// repeatedly (earliest raster index on ties) while that count is >= P.
std::vector<Window> negative_windows(const std::vector<Proposal>& proposals, const std::vector<Window>& positives,
                                     const std::vector<Rect>& grid, int min_proposals, int scale_id = 0);

BoxDelta encode_delta(const Rect& proposal, const Rect& target);
Rect decode_delta(const Rect& proposal, const BoxDelta& delta);
/// Continuous-valued decode: returns (cx, cy, w, h).
std::array<double, 4> decode_delta_continuous(const Rect& proposal, const BoxDelta& delta);

/// Labels proposals against ground truth. Proposals whose center is not in
/// any of `windows` are dropped.
std::vector<LabeledProposal> assign_proposal_labels(const std::vector<Proposal>& proposals,
                                                    const std::vector<Rect>& gt_boxes,
                                                    const std::vector<Window>& windows, double threshold = 0.5);

/// Stand-in proposal source: jittered ground-truth boxes mixed with uniform
/// random boxes, deterministic in `seed`.
std::vector<Proposal> oracle_proposals(const std::vector<Rect>& gt_boxes, Size2 bounds, std::uint64_t seed,
                                       int count = 300, int slice_z = 0, int scale_id = 0);

struct SliceBox {
  int slice_z = 0;
  Rect rect;
  double score = 0.0;
};

std::optional<volcore::Box3> aggregate_detections(const std::vector<SliceBox>& slice_boxes, double score_floor);

// Line format: `scale_id kind x0 y0 x1 y1 [score] [slice_z]`.
struct Record {
  int scale_id = 0;
  std::string kind;
  Rect rect;
  std::optional<double> score;
  std::optional<int> slice_z;
  friend bool operator==(const Record&, const Record&) = default;
};

std::string format_record(const Record& r);
Record parse_record(const std::string& line);
void write_records(std::ostream& out, const std::vector<Record>& records);
std::vector<Record> read_records(std::istream& in);

const char* kind_name(WindowKind kind);

}  // namespace cascade::ctxwin
