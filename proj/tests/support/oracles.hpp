#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Each one is written from the format/definition directly and shares
// no code with the library under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "cascade/autonet.hpp"
#include "cascade/ctxwin.hpp"
#include "cascade/volcore.hpp"

namespace oracle {

using cascade::autonet::ConvSpec;
using cascade::autonet::Shape;
using cascade::autonet::Tensor;

template <class T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Checks d/dx <R, f(x)> against the analytic vector-Jacobian product.
template <class Fwd>
double vjp_error(Fwd fwd, const Tensor<double>& x, const Tensor<double>& r, const Tensor<double>& analytic,
                 std::size_t coords = 0, std::uint64_t seed = 0) {
  return cascade::autonet::grad_check([&](const Tensor<double>& p) { return dot(fwd(p), r); }, x, analytic, 1e-5,
                                      coords, seed)
      .max_rel_error;
}

// Kernels up to 3 per axis, dilation 1..3, stride 1..2, any padding up to one past "same".
inline ConvSpec random_spec(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  ConvSpec s;
  s.in_channels = pick(1, 3);
  s.out_channels = pick(1, 3);
  s.kernel = {pick(1, 3), pick(1, 3), pick(1, 3)};
  s.dilation = pick(1, 3);
  s.stride = pick(1, 2);
  for (int a = 0; a < 3; ++a) s.padding[a] = pick(0, s.dilation * (s.kernel[a] - 1) / 2 + 1);
  return s;
}

// Input extents no larger than max_extent yet big enough for the dilated kernel.
inline Shape random_input_shape(std::mt19937_64& rng, const ConvSpec& s, std::size_t max_extent) {
  Shape shape{std::uniform_int_distribution<std::size_t>(1, 2)(rng), s.in_channels};
  for (int a = 0; a < 3; ++a) {
    const std::size_t need = s.effective_extent(a) > 2 * s.padding[a] ? s.effective_extent(a) - 2 * s.padding[a] : 1;
    shape.push_back(std::uniform_int_distribution<std::size_t>(need, std::max(need, max_extent))(rng));
  }
  return shape;
}

// Direct nested-loop cross-correlation over (N, C, X, Y, Z). Taps are
// accumulated in (ci, kx, ky, kz) order starting from zero.
template <class T>
Tensor<T> naive_conv(const Tensor<T>& in, const Tensor<T>& w, const ConvSpec& s) {
  const std::size_t n = in.extent(0), ci = in.extent(1);
  const long ix = static_cast<long>(in.extent(2)), iy = static_cast<long>(in.extent(3)),
             iz = static_cast<long>(in.extent(4));
  long ext[3];
  for (int a = 0; a < 3; ++a) {
    const long padded = (a == 0 ? ix : a == 1 ? iy : iz) + 2 * static_cast<long>(s.padding[a]);
    const long eff = static_cast<long>((s.kernel[a] - 1) * s.dilation + 1);
    ext[a] = (padded - eff) / static_cast<long>(s.stride) + 1;
  }
  Tensor<T> out(Shape{n, s.out_channels, std::size_t(ext[0]), std::size_t(ext[1]), std::size_t(ext[2])});
  auto in_at = [&](std::size_t b, std::size_t c, long x, long y, long z) {
    return in[(((b * ci + c) * ix + x) * iy + y) * iz + z];
  };
  const long st = static_cast<long>(s.stride), d = static_cast<long>(s.dilation);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < s.out_channels; ++co)
      for (long ox = 0; ox < ext[0]; ++ox)
        for (long oy = 0; oy < ext[1]; ++oy)
          for (long oz = 0; oz < ext[2]; ++oz, ++o) {
            T acc = 0;
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t a = 0; a < s.kernel[0]; ++a)
                for (std::size_t bb = 0; bb < s.kernel[1]; ++bb)
                  for (std::size_t cc = 0; cc < s.kernel[2]; ++cc) {
                    const long x = ox * st + static_cast<long>(a) * d - static_cast<long>(s.padding[0]);
                    const long y = oy * st + static_cast<long>(bb) * d - static_cast<long>(s.padding[1]);
                    const long z = oz * st + static_cast<long>(cc) * d - static_cast<long>(s.padding[2]);
                    if (x < 0 || y < 0 || z < 0 || x >= ix || y >= iy || z >= iz) continue;
                    const T wv = w[(((co * ci + c) * s.kernel[0] + a) * s.kernel[1] + bb) * s.kernel[2] + cc];
                    acc += wv * in_at(b, c, x, y, z);
                  }
            out[o] = acc;
          }
  return out;
}

// Intersection over union by visiting every pixel of the bounding area.
inline double iou_by_pixels(const cascade::ctxwin::Rect& a, const cascade::ctxwin::Rect& b) {
  const int x0 = std::min(a.x0, b.x0), x1 = std::max(a.x1, b.x1);
  const int y0 = std::min(a.y0, b.y0), y1 = std::max(a.y1, b.y1);
  long inter = 0, uni = 0;
  for (int x = x0; x <= x1; ++x)
    for (int y = y0; y <= y1; ++y) {
      const bool ia = x >= a.x0 && x <= a.x1 && y >= a.y0 && y <= a.y1;
      const bool ib = x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1;
      inter += ia && ib;
      uni += ia || ib;
    }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// Greedy negative-window selection simulated by full recount every round.
struct GreedyPick {
  std::size_t grid_index;
  int covered;
};

inline std::vector<GreedyPick> greedy_negatives(const std::vector<cascade::ctxwin::Proposal>& props,
                                                const std::vector<cascade::ctxwin::Window>& positives,
                                                const std::vector<cascade::ctxwin::Rect>& grid, int min_props) {
  auto inside = [](const cascade::ctxwin::Rect& r, double x, double y) {
    return x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1;
  };
  std::vector<std::array<double, 2>> centers;
  for (const auto& p : props) {
    const double cx = (p.rect.x0 + p.rect.x1) / 2.0, cy = (p.rect.y0 + p.rect.y1) / 2.0;
    bool in_pos = false;
    for (const auto& w : positives) in_pos = in_pos || inside(w.rect, cx, cy);
    if (!in_pos) centers.push_back({cx, cy});
  }
  std::vector<bool> covered(centers.size(), false);
  std::vector<GreedyPick> picks;
  for (;;) {
    int best = -1;
    std::size_t best_i = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      int count = 0;
      for (std::size_t c = 0; c < centers.size(); ++c)
        if (!covered[c] && inside(grid[g], centers[c][0], centers[c][1])) ++count;
      if (count > best) {
        best = count;
        best_i = g;
      }
    }
    if (best < min_props || best <= 0) break;
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (inside(grid[best_i], centers[c][0], centers[c][1])) covered[c] = true;
    picks.push_back({best_i, best});
  }
  return picks;
}

// --- volumetric metric oracles ---------------------------------------------

struct Tally {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Tally tally(const cascade::volcore::LabelVolume& p, const cascade::volcore::LabelVolume& t) {
  Tally c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p.data()[i] != 0, b = t.data()[i] != 0;
    if (a && b) ++c.tp;
    else if (a) ++c.fp;
    else if (b) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Foreground voxels with a background or out-of-bounds face neighbour.
inline std::vector<std::array<int, 3>> surface(const cascade::volcore::LabelVolume& m) {
  const auto& d = m.dims();
  const int nx = int(d.nx), ny = int(d.ny), nz = int(d.nz);
  auto fg = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return m.at(x, y, z) != 0;
  };
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!fg(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) || !fg(x, y, z - 1) ||
            !fg(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

inline std::vector<double> directed(const std::vector<std::array<int, 3>>& from,
                                    const std::vector<std::array<int, 3>>& to,
                                    const cascade::volcore::Spacing& sp) {
  std::vector<double> out;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dx = (a[0] - b[0]) * double(sp.sx), dy = (a[1] - b[1]) * double(sp.sy),
                   dz = (a[2] - b[2]) * double(sp.sz);
      best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    out.push_back(best);
  }
  return out;
}

// Linear-interpolation percentile over the sorted list (rank q/100 * (n-1)).
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - double(lo)) * (v[hi] - v[lo]);
}

inline double hausdorff(const std::vector<double>& ab, const std::vector<double>& ba) {
  return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

inline double assd(const std::vector<double>& ab, const std::vector<double>& ba) {
  double s = 0;
  for (double v : ab) s += v;
  for (double v : ba) s += v;
  return s / double(ab.size() + ba.size());
}

// Random binary mask made of a few boxes plus scattered voxels.
inline cascade::volcore::LabelVolume random_mask(const cascade::volcore::Dims& d, std::mt19937_64& rng) {
  cascade::volcore::LabelVolume m(d, {});
  std::uniform_int_distribution<int> blobs(1, 3);
  const int nb = blobs(rng);
  for (int b = 0; b < nb; ++b) {
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      std::uniform_int_distribution<int> p(0, int(d[a]) - 1);
      int u = p(rng), v = p(rng);
      lo[a] = std::min(u, v);
      hi[a] = std::max(u, v);
    }
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x) m.at(x, y, z) = 1;
  }
  std::bernoulli_distribution flip(0.03);
  for (auto& v : m.data())
    if (flip(rng)) v = static_cast<std::uint8_t>(1 - v);
  return m;
}

}  // namespace oracle
