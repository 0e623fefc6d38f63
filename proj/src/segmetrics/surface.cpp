#include <algorithm>
#include <cmath>
#include <limits>

#include "cascade/segmetrics.hpp"

namespace cascade::segmetrics {

SurfaceSet surface_voxels(const volcore::LabelVolume& mask) {
  SurfaceSet s{{}, mask.dims(), mask.spacing()};
  const auto& d = mask.dims();
  const int nx = static_cast<int>(d.nx), ny = static_cast<int>(d.ny), nz = static_cast<int>(d.nz);
  auto background = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return true;
    return mask.at(x, y, z) == 0;
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        if (background(x - 1, y, z) || background(x + 1, y, z) || background(x, y - 1, z) ||
            background(x, y + 1, z) || background(x, y, z - 1) || background(x, y, z + 1)) {
          s.voxels.push_back({x, y, z});
        }
      }
  return s;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas w*(x-q)^2 + f(q) over sample positions.
void envelope_1d(const double* f, std::size_t stride, int n, double w, double* out, std::size_t out_stride,
                 std::vector<int>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto meet = [&](int p) { return ((fq + w * q * q) - (f[p * stride] + w * p * p)) / (2.0 * w * (q - p)); };
    double s = meet(v[k]);
    while (s <= z[k]) s = meet(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int x = 0; x < n; ++x) out[x * out_stride] = kInf;
    return;
  }
  int j = 0;
  for (int x = 0; x < n; ++x) {
    while (z[j + 1] < x) ++j;
    const double dx = x - v[j];
    out[x * out_stride] = w * dx * dx + f[v[j] * stride];
  }
}

void check_pair(const SurfaceSet& a, const SurfaceSet& b) {
  if (a.dims != b.dims || a.spacing != b.spacing) throw Error(Errc::DimsMismatch, "surface grids differ");
}

std::vector<double> brute_force(const SurfaceSet& from, const SurfaceSet& to) {
  const double sx = from.spacing.sx, sy = from.spacing.sy, sz = from.spacing.sz;
  std::vector<double> out;
  out.reserve(from.voxels.size());
  for (const auto& p : from.voxels) {
    double best = kInf;
    for (const auto& t : to.voxels) {
      const double dx = (p[0] - t[0]) * sx, dy = (p[1] - t[1]) * sy, dz = (p[2] - t[2]) * sz;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

// Exact squared Euclidean distance transform of `to` inside the bounding box
// of both sets, then sampled at the `from` voxels.
std::vector<double> via_transform(const SurfaceSet& from, const SurfaceSet& to) {
  std::array<int, 3> lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
                        std::numeric_limits<int>::max()};
  std::array<int, 3> hi{-1, -1, -1};
  for (const auto* set : {&from, &to})
    for (const auto& v : set->voxels)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], v[a]);
        hi[a] = std::max(hi[a], v[a]);
      }
  const int nx = hi[0] - lo[0] + 1, ny = hi[1] - lo[1] + 1, nz = hi[2] - lo[2] + 1;
  const std::size_t sx_stride = 1, sy_stride = nx, sz_stride = static_cast<std::size_t>(nx) * ny;
  std::vector<double> grid(static_cast<std::size_t>(nx) * ny * nz, kInf);
  auto at = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x - lo[0]) + sy_stride * (y - lo[1]) + sz_stride * (z - lo[2]);
  };
  for (const auto& v : to.voxels) grid[at(v[0], v[1], v[2])] = 0.0;

  const double wx = static_cast<double>(from.spacing.sx) * from.spacing.sx;
  const double wy = static_cast<double>(from.spacing.sy) * from.spacing.sy;
  const double wz = static_cast<double>(from.spacing.sz) * from.spacing.sz;
  std::vector<double> line(std::max({nx, ny, nz}));
  std::vector<int> v;
  std::vector<double> z;

  for (int zz = 0; zz < nz; ++zz)
    for (int yy = 0; yy < ny; ++yy) {
      double* row = grid.data() + sy_stride * yy + sz_stride * zz;
      std::copy(row, row + nx, line.begin());
      envelope_1d(line.data(), 1, nx, wx, row, sx_stride, v, z);
    }
  for (int zz = 0; zz < nz; ++zz)
    for (int xx = 0; xx < nx; ++xx) {
      double* col = grid.data() + xx + sz_stride * zz;
      for (int yy = 0; yy < ny; ++yy) line[yy] = col[yy * sy_stride];
      envelope_1d(line.data(), 1, ny, wy, col, sy_stride, v, z);
    }
  for (int yy = 0; yy < ny; ++yy)
    for (int xx = 0; xx < nx; ++xx) {
      double* col = grid.data() + xx + sy_stride * yy;
      for (int k = 0; k < nz; ++k) line[k] = col[k * sz_stride];
      envelope_1d(line.data(), 1, nz, wz, col, sz_stride, v, z);
    }

  std::vector<double> out;
  out.reserve(from.voxels.size());
  for (const auto& p : from.voxels) out.push_back(std::sqrt(grid[at(p[0], p[1], p[2])]));
  return out;
}

double percentile_of(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  const double idx = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (idx - static_cast<double>(lo));
}

}  // namespace

std::vector<double> directed_distances(const SurfaceSet& from, const SurfaceSet& to, DistanceMethod method) {
  check_pair(from, to);
  if (to.empty()) throw Error(Errc::EmptySurface, "target surface is empty");
  if (from.empty()) return {};
  return method == DistanceMethod::brute_force ? brute_force(from, to) : via_transform(from, to);
}

double hausdorff(const SurfaceSet& pred, const SurfaceSet& truth, std::optional<double> percentile,
                 DistanceMethod method) {
  if (pred.empty() || truth.empty()) throw Error(Errc::EmptySurface, "hausdorff needs two nonempty surfaces");
  if (percentile && !(*percentile >= 0.0 && *percentile <= 100.0)) {
    throw Error(Errc::ConfigInvalid, "hausdorff percentile must lie in [0, 100]");
  }
  const auto pt = directed_distances(pred, truth, method);
  const auto tp = directed_distances(truth, pred, method);
  if (percentile) return std::max(percentile_of(pt, *percentile), percentile_of(tp, *percentile));
  return std::max(*std::max_element(pt.begin(), pt.end()), *std::max_element(tp.begin(), tp.end()));
}

double assd(const SurfaceSet& pred, const SurfaceSet& truth, DistanceMethod method) {
  if (pred.empty() || truth.empty()) throw Error(Errc::EmptySurface, "assd needs two nonempty surfaces");
  const auto pt = directed_distances(pred, truth, method);
  const auto tp = directed_distances(truth, pred, method);
  double sum = 0.0;
  for (double d : pt) sum += d;
  for (double d : tp) sum += d;
  return sum / static_cast<double>(pt.size() + tp.size());
}

}  // namespace cascade::segmetrics
