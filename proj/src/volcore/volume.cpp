#include <algorithm>
#include <cmath>

#include "cascade/volcore.hpp"

namespace cascade::volcore {

template <class T>
Grid<T>::Grid(Dims dims, Spacing spacing, T fill) : Grid(dims, spacing, std::vector<T>(dims.count(), fill)) {}

template <class T>
Grid<T>::Grid(Dims dims, Spacing spacing, std::vector<T> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) throw Error(Errc::DimsMismatch, "volume dims must be >= 1");
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) {
    throw Error(Errc::DimsMismatch, "volume spacing must be positive");
  }
  if (data_.size() != dims.count()) {
    throw Error(Errc::DimsMismatch, "data length " + std::to_string(data_.size()) + " != " +
                                        std::to_string(dims.count()));
  }
}

template class Grid<float>;
template class Grid<std::uint8_t>;

void MultiModalScan::validate() const {
  const auto& d = modalities[0].dims();
  const auto& s = modalities[0].spacing();
  for (const auto& m : modalities) {
    if (m.dims() != d || m.spacing() != s) throw Error(Errc::DimsMismatch, scan_id + ": modalities disagree on grid");
  }
  if (labels) {
    if (labels->dims() != d || labels->spacing() != s) {
      throw Error(Errc::DimsMismatch, scan_id + ": labels disagree with modality grid");
    }
  }
}

bool Box3::valid() const noexcept {
  return min[0] <= max[0] && min[1] <= max[1] && min[2] <= max[2];
}

bool Box3::contains(int x, int y, int z) const noexcept {
  return x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1] && z >= min[2] && z <= max[2];
}

bool Box3::contains(const Box3& o) const noexcept {
  for (int a = 0; a < 3; ++a) {
    if (o.min[a] < min[a] || o.max[a] > max[a]) return false;
  }
  return true;
}

bool Box3::within(const Dims& dims) const noexcept {
  for (int a = 0; a < 3; ++a) {
    if (min[a] < 0 || max[a] >= static_cast<int>(dims[a])) return false;
  }
  return valid();
}

Box3 Box3::whole(const Dims& dims) {
  return Box3{{0, 0, 0}, {static_cast<int>(dims.nx) - 1, static_cast<int>(dims.ny) - 1, static_cast<int>(dims.nz) - 1}};
}

Box3 grow_and_clip(const Box3& box, int offset, const Dims& dims) {
  Box3 out;
  for (int a = 0; a < 3; ++a) {
    out.min[a] = std::max(0, box.min[a] - offset);
    out.max[a] = std::min(static_cast<int>(dims[a]) - 1, box.max[a] + offset);
  }
  if (!out.valid()) throw Error(Errc::DegenerateBox, "grown box has zero extent");
  return out;
}

RegionMasks decompose_regions(const LabelVolume& labels) {
  RegionMasks masks{LabelVolume(labels.dims(), labels.spacing()), LabelVolume(labels.dims(), labels.spacing()),
                    LabelVolume(labels.dims(), labels.spacing())};
  const auto& in = labels.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto v = in[i];
    switch (v) {
      case 0: break;
      case 1: masks.wt.data()[i] = masks.tc.data()[i] = 1; break;
      case 2: masks.wt.data()[i] = 1; break;
      case 4: masks.wt.data()[i] = masks.tc.data()[i] = masks.et.data()[i] = 1; break;
      default:
        throw Error(Errc::IllegalLabel, "value " + std::to_string(v) + " at index " + std::to_string(i));
    }
  }
  return masks;
}

std::optional<Box3> bbox_of_mask(const LabelVolume& mask) {
  const auto& d = mask.dims();
  std::optional<Box3> box;
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        const std::array<int, 3> p{static_cast<int>(x), static_cast<int>(y), static_cast<int>(z)};
        if (!box) {
          box = Box3{p, p};
          continue;
        }
        for (int a = 0; a < 3; ++a) {
          box->min[a] = std::min(box->min[a], p[a]);
          box->max[a] = std::max(box->max[a], p[a]);
        }
      }
    }
  }
  return box;
}

namespace {

/// Source coordinate of output sample `i` of `n_out` spanning [lo, lo + n_src - 1].
double source_coord(int lo, int n_src, std::size_t i, std::size_t n_out) {
  if (n_out == 1) return lo + 0.5 * (n_src - 1);
  return lo + static_cast<double>(i) * (n_src - 1) / static_cast<double>(n_out - 1);
}

struct Tap {
  int i0, i1;
  double t;
};

std::vector<Tap> linear_taps(int lo, int hi, std::size_t n_out) {
  std::vector<Tap> taps(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double s = source_coord(lo, hi - lo + 1, i, n_out);
    int i0 = std::clamp(static_cast<int>(std::floor(s)), lo, hi);
    int i1 = std::min(i0 + 1, hi);
    taps[i] = {i0, i1, std::clamp(s - i0, 0.0, 1.0)};
  }
  return taps;
}

std::vector<int> nearest_taps(int lo, int hi, std::size_t n_out) {
  std::vector<int> taps(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double s = source_coord(lo, hi - lo + 1, i, n_out);
    taps[i] = std::clamp(static_cast<int>(std::floor(s + 0.5)), lo, hi);
  }
  return taps;
}

void check_region(const Box3& region, const Dims& dims) {
  if (!region.valid()) throw Error(Errc::DegenerateBox, "region has zero extent");
  if (!region.within(dims)) throw Error(Errc::DegenerateBox, "region exceeds volume bounds");
}

}  // namespace

FloatVolume resample_region(const FloatVolume& src, const Box3& region, const Dims& out, Interp mode) {
  check_region(region, src.dims());
  FloatVolume dst(out, src.spacing());
  if (mode == Interp::nearest) {
    const auto tx = nearest_taps(region.min[0], region.max[0], out.nx);
    const auto ty = nearest_taps(region.min[1], region.max[1], out.ny);
    const auto tz = nearest_taps(region.min[2], region.max[2], out.nz);
    for (std::size_t z = 0; z < out.nz; ++z)
      for (std::size_t y = 0; y < out.ny; ++y)
        for (std::size_t x = 0; x < out.nx; ++x) dst.at(x, y, z) = src.at(tx[x], ty[y], tz[z]);
    return dst;
  }
  const auto tx = linear_taps(region.min[0], region.max[0], out.nx);
  const auto ty = linear_taps(region.min[1], region.max[1], out.ny);
  const auto tz = linear_taps(region.min[2], region.max[2], out.nz);
  for (std::size_t z = 0; z < out.nz; ++z) {
    const auto& cz = tz[z];
    for (std::size_t y = 0; y < out.ny; ++y) {
      const auto& cy = ty[y];
      for (std::size_t x = 0; x < out.nx; ++x) {
        const auto& cx = tx[x];
        auto lerp_x = [&](int yy, int zz) {
          return (1.0 - cx.t) * src.at(cx.i0, yy, zz) + cx.t * src.at(cx.i1, yy, zz);
        };
        const double c0 = (1.0 - cy.t) * lerp_x(cy.i0, cz.i0) + cy.t * lerp_x(cy.i1, cz.i0);
        const double c1 = (1.0 - cy.t) * lerp_x(cy.i0, cz.i1) + cy.t * lerp_x(cy.i1, cz.i1);
        dst.at(x, y, z) = static_cast<float>((1.0 - cz.t) * c0 + cz.t * c1);
      }
    }
  }
  return dst;
}

LabelVolume resample_region(const LabelVolume& src, const Box3& region, const Dims& out) {
  check_region(region, src.dims());
  LabelVolume dst(out, src.spacing());
  const auto tx = nearest_taps(region.min[0], region.max[0], out.nx);
  const auto ty = nearest_taps(region.min[1], region.max[1], out.ny);
  const auto tz = nearest_taps(region.min[2], region.max[2], out.nz);
  for (std::size_t z = 0; z < out.nz; ++z)
    for (std::size_t y = 0; y < out.ny; ++y)
      for (std::size_t x = 0; x < out.nx; ++x) dst.at(x, y, z) = src.at(tx[x], ty[y], tz[z]);
  return dst;
}

autonet::TensorF crop_resize(const MultiModalScan& scan, const Box3& box, int offset, const Dims& out_dims,
                             Interp mode) {
  scan.validate();
  check_region(box, scan.dims());
  const Box3 grown = grow_and_clip(box, offset, scan.dims());
  autonet::TensorF out({4, out_dims.nx, out_dims.ny, out_dims.nz});
  const std::size_t per_channel = out_dims.count();
  for (std::size_t c = 0; c < 4; ++c) {
    const FloatVolume patch = resample_region(scan.modalities[c], grown, out_dims, mode);
    float* dst = out.ptr() + c * per_channel;
    for (std::size_t x = 0; x < out_dims.nx; ++x)
      for (std::size_t y = 0; y < out_dims.ny; ++y)
        for (std::size_t z = 0; z < out_dims.nz; ++z) *dst++ = patch.at(x, y, z);
  }
  return out;
}

LabelVolume paste_labels(const LabelVolume& patch, const Box3& region, const Dims& full, const Spacing& spacing) {
  check_region(region, full);
  LabelVolume out(full, spacing);
  const Dims box_dims{static_cast<std::size_t>(region.extent(0)), static_cast<std::size_t>(region.extent(1)),
                      static_cast<std::size_t>(region.extent(2))};
  const LabelVolume resized = resample_region(patch, Box3::whole(patch.dims()), box_dims);
  for (std::size_t z = 0; z < box_dims.nz; ++z)
    for (std::size_t y = 0; y < box_dims.ny; ++y)
      for (std::size_t x = 0; x < box_dims.nx; ++x)
        out.at(region.min[0] + x, region.min[1] + y, region.min[2] + z) = resized.at(x, y, z);
  return out;
}

void zscore(std::span<float> values) {
  if (values.empty()) return;
  double mean = 0.0;
  for (float v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (float v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  for (float& v : values) v = sd > 1e-12 ? static_cast<float>((v - mean) / sd) : 0.0f;
}

}  // namespace cascade::volcore
