#include <algorithm>
#include <cmath>
#include <random>

#include "cascade/segarch.hpp"

namespace cascade::segarch {

using ctxwin::Rect;
using ctxwin::Size2;

namespace {

Size2 slice_dims(const volcore::MultiModalScan& scan) {
  return {static_cast<int>(scan.dims().nx), static_cast<int>(scan.dims().ny)};
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xC2B2AE3D27D4EB4FULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Mean and standard deviation of a whole modality volume.
std::pair<double, double> moments(const volcore::FloatVolume& v) {
  double sum = 0.0, sq = 0.0;
  for (float f : v.data()) {
    sum += f;
    sq += static_cast<double>(f) * f;
  }
  const double n = static_cast<double>(v.size());
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
}

autonet::TensorF crop_chip(const autonet::TensorF& image, const Rect& r) {
  const auto lay = autonet::Layout::of(image.shape());
  const std::size_t w = static_cast<std::size_t>(r.width()), h = static_cast<std::size_t>(r.height());
  autonet::TensorF out({1, lay.channels, w, h, 1});
  for (std::size_t c = 0; c < lay.channels; ++c)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t y = 0; y < h; ++y)
        out[(c * w + x) * h + y] = image[(c * lay.x + r.x0 + x) * lay.y + r.y0 + y];
  return out;
}

// Anchor targets of `window`, in coordinates relative to `chip`.
std::vector<AnchorTarget> window_targets(const Rect& window, const Rect& chip, const std::vector<Rect>& gt,
                                         const CascadeConfig& cfg, std::mt19937_64& rng) {
  const auto& sizes = cfg.detector.anchor_sizes;
  std::vector<ctxwin::Proposal> anchors;
  for (int x = window.x0; x <= window.x1; ++x)
    for (int y = window.y0; y <= window.y1; ++y)
      for (std::size_t a = 0; a < sizes.size(); ++a) {
        // scale_id carries the anchor index through labelling.
        anchors.push_back({anchor_rect(x, y, sizes[a]), 0.0, 0, static_cast<int>(a)});
      }
  const ctxwin::Window w{window, 0, ctxwin::WindowKind::negative};
  const auto labeled = ctxwin::assign_proposal_labels(anchors, gt, {w}, cfg.iou_threshold);

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    (labeled[i].label == ctxwin::ProposalLabel::positive ? pos : neg).push_back(i);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const std::size_t budget = static_cast<std::size_t>(cfg.proposals_per_window);
  const std::size_t npos = std::min(pos.size(), budget / 2);
  const std::size_t nneg = std::min(neg.size(), budget - npos);

  std::vector<AnchorTarget> out;
  auto emit = [&](std::size_t i) {
    const auto& lp = labeled[i];
    const int size = sizes[static_cast<std::size_t>(lp.proposal.scale_id)];
    const Rect& r = lp.proposal.rect;
    const int cx = r.x0 + size / 2, cy = r.y0 + size / 2;
    out.push_back({lp.proposal.scale_id, cx - chip.x0, cy - chip.y0, lp.label, lp.regression_target});
  };
  for (std::size_t i = 0; i < npos; ++i) emit(pos[i]);
  for (std::size_t i = 0; i < nneg; ++i) emit(neg[i]);
  return out;
}

}  // namespace

ProposalSource oracle_proposal_source(int count) {
  return [count](const autonet::TensorF&, const std::vector<Rect>& gt, const ctxwin::ScaleSpec& scale, int z,
                 std::uint64_t seed) {
    return ctxwin::oracle_proposals(gt, scale.scaled_dims, seed, count, z, scale.scale_id);
  };
}

ProposalSource detector_proposal_source(Detector<float>& detector, int count) {
  return [&detector, count](const autonet::TensorF& slice, const std::vector<Rect>&, const ctxwin::ScaleSpec& scale,
                            int z, std::uint64_t) {
    return decode_proposals(detector.forward(slice), detector.config(), static_cast<std::size_t>(count), z,
                            scale.scale_id);
  };
}

autonet::TensorF detector_slice(const volcore::MultiModalScan& scan, int z, const DetectorConfig& cfg,
                                const ctxwin::ScaleSpec& scale) {
  const auto& d = scan.dims();
  if (z < 0 || static_cast<std::size_t>(z) >= d.nz) throw Error(Errc::ShapeMismatch, "slice index out of range");
  const std::size_t w = static_cast<std::size_t>(scale.scaled_dims.w), h = static_cast<std::size_t>(scale.scaled_dims.h);
  autonet::TensorF out({1, cfg.in_channels(), w, h, 1});
  const double fx = static_cast<double>(d.nx) / static_cast<double>(w);
  const double fy = static_cast<double>(d.ny) / static_cast<double>(h);
  for (std::size_t c = 0; c < cfg.in_channels(); ++c) {
    const auto& vol = scan.modality(cfg.modalities[c]);
    const auto [mean, sd] = moments(vol);
    const double inv = sd > 0.0 ? 1.0 / sd : 0.0;
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, static_cast<double>(d.nx - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx), x1 = std::min(x0 + 1, d.nx - 1);
      const double tx = sx - static_cast<double>(x0);
      for (std::size_t y = 0; y < h; ++y) {
        const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(d.ny - 1));
        const std::size_t y0 = static_cast<std::size_t>(sy), y1 = std::min(y0 + 1, d.ny - 1);
        const double ty = sy - static_cast<double>(y0);
        const std::size_t zz = static_cast<std::size_t>(z);
        const double v = (1 - tx) * (1 - ty) * vol.at(x0, y0, zz) + tx * (1 - ty) * vol.at(x1, y0, zz) +
                         (1 - tx) * ty * vol.at(x0, y1, zz) + tx * ty * vol.at(x1, y1, zz);
        out[(c * w + x) * h + y] = static_cast<float>((v - mean) * inv);
      }
    }
  }
  return out;
}

std::vector<Rect> slice_gt(const volcore::LabelVolume& labels, int z) {
  const auto& d = labels.dims();
  Rect r{static_cast<int>(d.nx), static_cast<int>(d.ny), -1, -1};
  for (std::size_t y = 0; y < d.ny; ++y)
    for (std::size_t x = 0; x < d.nx; ++x)
      if (labels.at(x, y, static_cast<std::size_t>(z))) {
        r.x0 = std::min(r.x0, static_cast<int>(x));
        r.y0 = std::min(r.y0, static_cast<int>(y));
        r.x1 = std::max(r.x1, static_cast<int>(x));
        r.y1 = std::max(r.y1, static_cast<int>(y));
      }
  if (!r.valid()) return {};
  return {r};
}

std::vector<SliceWindows> build_windows(const volcore::MultiModalScan& scan, const CascadeConfig& cfg,
                                        const ProposalSource& source, std::uint64_t seed) {
  if (!scan.labels) throw Error(Errc::MissingLabels, scan.scan_id + ": window building needs labels");
  const Size2 dims = slice_dims(scan);
  const auto scales = ctxwin::make_scales(dims, cfg.scales, cfg.window);
  const auto grid_cache = [&] {
    std::vector<std::vector<Rect>> g;
    for (const auto& s : scales) g.push_back(ctxwin::enumerate_windows(s.scaled_dims, cfg.window, cfg.stride));
    return g;
  }();
  std::vector<SliceWindows> out;
  for (int z = 0; z < static_cast<int>(scan.dims().nz); ++z) {
    const auto gt = slice_gt(*scan.labels, z);
    for (std::size_t si = 0; si < scales.size(); ++si) {
      const auto& s = scales[si];
      SliceWindows sw;
      sw.slice_z = z;
      sw.scale = s;
      for (const auto& g : gt) sw.gt.push_back(ctxwin::scale_rect(g, s.factor, s.scaled_dims));
      sw.positives = ctxwin::positive_windows(sw.gt, s.scaled_dims, s.scale_id);
      const auto image = detector_slice(scan, z, cfg.detector, s);
      sw.proposals = source(image, sw.gt, s, z, mix(seed, static_cast<std::uint64_t>(z), si));
      sw.negatives = ctxwin::negative_windows(sw.proposals, sw.positives, grid_cache[si], cfg.min_proposals,
                                              s.scale_id);
      out.push_back(std::move(sw));
    }
  }
  return out;
}

std::vector<DetectorSample> build_detector_dataset(const std::vector<volcore::MultiModalScan>& scans,
                                                   const CascadeConfig& cfg, const ProposalSource& source,
                                                   std::uint64_t seed) {
  std::vector<DetectorSample> out;
  const int bg_stride = std::max(1, cfg.background_slice_stride);
  for (std::size_t n = 0; n < scans.size(); ++n) {
    const auto& scan = scans[n];
    const auto windows = build_windows(scan, cfg, source, mix(seed, n, 0xA11));
    std::mt19937_64 rng(mix(seed, n, 0xB22));
    for (const auto& sw : windows) {
      if (sw.gt.empty() && sw.slice_z % bg_stride != 0) continue;
      const auto image = detector_slice(scan, sw.slice_z, cfg.detector, sw.scale);
      for (const auto* group : {&sw.positives, &sw.negatives})
        for (const auto& w : *group) {
          const int h = std::max(0, cfg.chip_halo);
          const Rect chip{std::max(0, w.rect.x0 - h), std::max(0, w.rect.y0 - h),
                          std::min(sw.scale.scaled_dims.w - 1, w.rect.x1 + h),
                          std::min(sw.scale.scaled_dims.h - 1, w.rect.y1 + h)};
          DetectorSample s{crop_chip(image, chip), window_targets(w.rect, chip, sw.gt, cfg, rng)};
          if (!s.targets.empty()) out.push_back(std::move(s));
        }
    }
  }
  if (out.empty()) throw Error(Errc::EmptyDataset, "no detector chips could be built");
  return out;
}

autonet::TensorF seg_input(const volcore::MultiModalScan& scan, const volcore::Box3& box, const CascadeConfig& cfg) {
  autonet::TensorF x = volcore::crop_resize(scan, box, cfg.f_offset, cfg.seg.patch);
  const std::size_t n = cfg.seg.patch.count();
  for (std::size_t c = 0; c < 4; ++c) volcore::zscore(x.data().subspan(c * n, n));
  return x;
}

std::vector<SegSample> build_seg_dataset(const std::vector<volcore::MultiModalScan>& scans, const CascadeConfig& cfg,
                                         std::uint64_t seed) {
  std::vector<SegSample> out;
  const auto& pd = cfg.seg.patch;
  for (std::size_t n = 0; n < scans.size(); ++n) {
    const auto& scan = scans[n];
    if (!scan.labels) throw Error(Errc::MissingLabels, scan.scan_id + ": segmentation training needs labels");
    const auto regions = volcore::decompose_regions(*scan.labels);
    const auto wt_box = volcore::bbox_of_mask(regions.wt);
    if (!wt_box) continue;
    std::mt19937_64 rng(mix(seed, n, 0x5E6));
    std::uniform_int_distribution<int> jitter(-cfg.box_jitter, cfg.box_jitter);
    const auto& d = scan.dims();
    for (std::size_t k = 0; k < cfg.seg_samples_per_scan; ++k) {
      volcore::Box3 box = *wt_box;
      if (k > 0) {
        for (int a = 0; a < 3; ++a) {
          const int hi = static_cast<int>(d[a]) - 1;
          box.min[a] = std::clamp(box.min[a] + jitter(rng), 0, hi);
          box.max[a] = std::clamp(box.max[a] + jitter(rng), 0, hi);
          if (box.min[a] > box.max[a]) std::swap(box.min[a], box.max[a]);
        }
      }
      SegSample s;
      s.image = seg_input(scan, box, cfg);
      const auto grown = volcore::grow_and_clip(box, cfg.f_offset, d);
      const auto patch_regions = volcore::decompose_regions(volcore::resample_region(*scan.labels, grown, pd));
      s.regions = autonet::TensorF({3, pd.nx, pd.ny, pd.nz});
      const std::size_t cnt = pd.count();
      const volcore::LabelVolume* maps[3] = {&patch_regions.wt, &patch_regions.tc, &patch_regions.et};
      for (std::size_t r = 0; r < 3; ++r) {
        float* dst = s.regions.ptr() + r * cnt;
        for (std::size_t x = 0; x < pd.nx; ++x)
          for (std::size_t y = 0; y < pd.ny; ++y)
            for (std::size_t z = 0; z < pd.nz; ++z) *dst++ = maps[r]->at(x, y, z) ? 1.0f : 0.0f;
      }
      out.push_back(std::move(s));
    }
  }
  if (out.empty()) throw Error(Errc::EmptyDataset, "no scan holds tumour voxels");
  return out;
}

std::optional<volcore::Box3> detect_box(const volcore::MultiModalScan& scan, Detector<float>& detector,
                                        const CascadeConfig& cfg) {
  const Size2 dims = slice_dims(scan);
  const auto scales = ctxwin::make_scales(dims, cfg.scales, cfg.window);
  std::vector<ctxwin::SliceBox> boxes;
  for (int z = 0; z < static_cast<int>(scan.dims().nz); ++z) {
    std::optional<ctxwin::SliceBox> best;
    for (const auto& s : scales) {
      const auto props = decode_proposals(detector.forward(detector_slice(scan, z, detector.config(), s)),
                                          detector.config(), 1, z, s.scale_id);
      if (props.empty()) continue;
      if (!best || props[0].score > best->score) {
        best = ctxwin::SliceBox{z, ctxwin::unscale_rect(props[0].rect, s.factor, dims), props[0].score};
      }
    }
    if (best) boxes.push_back(*best);
  }
  return ctxwin::aggregate_detections(boxes, detector.config().score_floor);
}

volcore::LabelVolume segment_box(const volcore::MultiModalScan& scan, const volcore::Box3& box, SegNet<float>& seg,
                                 const CascadeConfig& cfg, volcore::Box3* grown_out) {
  const auto grown = volcore::grow_and_clip(box, cfg.f_offset, scan.dims());
  if (grown_out) *grown_out = grown;
  autonet::TensorF x = seg_input(scan, box, cfg);
  auto shape = x.shape();
  shape.insert(shape.begin(), 1);
  x.reshape(shape);
  autonet::TensorF regions = region_probs(autonet::softmax_channels(seg.forward(x)));
  regions.reshape({3, cfg.seg.patch.nx, cfg.seg.patch.ny, cfg.seg.patch.nz});
  const auto patch = labels_from_regions(regions, scan.spacing());
  return volcore::paste_labels(patch, grown, scan.dims(), scan.spacing());
}

volcore::LabelVolume infer_cascade(const volcore::MultiModalScan& scan, Detector<float>& detector,
                                   SegNet<float>& seg, const CascadeConfig& cfg, InferenceInfo* info) {
  scan.validate();
  const auto found = detect_box(scan, detector, cfg);
  InferenceInfo local;
  local.detected = found.has_value();
  local.box = found.value_or(volcore::Box3::whole(scan.dims()));
  auto labels = segment_box(scan, local.box, seg, cfg, &local.grown);
  if (info) *info = local;
  return labels;
}

}  // namespace cascade::segarch
