#include <algorithm>
#include <cstring>

#include "cascade/autonet.hpp"
#include "gemm.hpp"

namespace cascade::autonet {

std::array<std::size_t, 3> ConvSpec::output_extents(const std::array<std::size_t, 3>& in) const {
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const std::size_t padded = in[a] + 2 * padding[a];
    const std::size_t eff = effective_extent(a);
    if (eff > padded) {
      throw Error(Errc::ShapeMismatch, "effective kernel extent " + std::to_string(eff) + " exceeds padded input " +
                                           std::to_string(padded) + " on axis " + std::to_string(a));
    }
    out[a] = (padded - eff) / stride + 1;
  }
  return out;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || stride < 1 || dilation < 1 || kernel[0] < 1 || kernel[1] < 1 ||
      kernel[2] < 1) {
    throw Error(Errc::ShapeMismatch, "conv spec extents must be >= 1");
  }
}

ConvSpec ConvSpec::same(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation) {
  const std::size_t pad = dilation * (k - 1) / 2;
  return ConvSpec{in, out, {k, k, k}, 1, dilation, {pad, pad, pad}};
}

ConvSpec ConvSpec::same2d(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation) {
  const std::size_t pad = dilation * (k - 1) / 2;
  return ConvSpec{in, out, {k, k, 1}, 1, dilation, {pad, pad, 0}};
}

Layout Layout::of(const Shape& shape) {
  if (shape.size() == 5) return {shape[0], shape[1], shape[2], shape[3], shape[4]};
  if (shape.size() == 4) return {1, shape[0], shape[1], shape[2], shape[3]};
  throw Error(Errc::ShapeMismatch, "expected rank 4 or 5 tensor, got " + shape_str(shape));
}

Shape Layout::with(std::size_t n, std::size_t c, std::size_t sx, std::size_t sy, std::size_t sz,
                   std::size_t rank) const {
  if (rank == 4) return {c, sx, sy, sz};
  return {n, c, sx, sy, sz};
}

namespace {

struct Geometry {
  std::size_t cin, cout, ix, iy, iz, ox, oy, oz;
  std::size_t rows() const { return cin * kx * ky * kz; }
  std::size_t cols() const { return ox * oy * oz; }
  std::size_t kx, ky, kz, stride, dil, px, py, pz;
};

Geometry geometry(const Layout& l, const ConvSpec& s) {
  const auto o = s.output_extents({l.x, l.y, l.z});
  return {s.in_channels, s.out_channels, l.x,        l.y,      l.z,          o[0],         o[1],        o[2],
          s.kernel[0],   s.kernel[1],    s.kernel[2], s.stride, s.dilation, s.padding[0], s.padding[1], s.padding[2]};
}

bool pointwise(const ConvSpec& s) {
  return s.kernel == std::array<std::size_t, 3>{1, 1, 1} && s.stride == 1 &&
         s.padding == std::array<std::size_t, 3>{0, 0, 0};
}

// Input coordinate for output index o and tap t, or -1 outside the image.
inline long tap_coord(std::size_t o, std::size_t t, const Geometry& g, std::size_t pad, std::size_t extent) {
  const long c = static_cast<long>(o * g.stride + t * g.dil) - static_cast<long>(pad);
  return (c < 0 || c >= static_cast<long>(extent)) ? -1 : c;
}

template <class T>
void im2col(const T* in, const Geometry& g, T* col) {
  const std::size_t plane = g.iy * g.iz;
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* chan = in + ci * g.ix * plane;
    for (std::size_t a = 0; a < g.kx; ++a)
      for (std::size_t b = 0; b < g.ky; ++b)
        for (std::size_t c = 0; c < g.kz; ++c, ++r) {
          T* dst = col + r * g.cols();
          for (std::size_t ox = 0; ox < g.ox; ++ox) {
            const long x = tap_coord(ox, a, g, g.px, g.ix);
            for (std::size_t oy = 0; oy < g.oy; ++oy) {
              const long y = tap_coord(oy, b, g, g.py, g.iy);
              T* out = dst + (ox * g.oy + oy) * g.oz;
              if (x < 0 || y < 0) {
                std::fill(out, out + g.oz, T{0});
                continue;
              }
              const T* src = chan + static_cast<std::size_t>(x) * plane + static_cast<std::size_t>(y) * g.iz;
              for (std::size_t oz = 0; oz < g.oz; ++oz) {
                const long z = tap_coord(oz, c, g, g.pz, g.iz);
                out[oz] = z < 0 ? T{0} : src[z];
              }
            }
          }
        }
  }
}

template <class T>
void col2im_add(const T* col, const Geometry& g, T* in) {
  const std::size_t plane = g.iy * g.iz;
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* chan = in + ci * g.ix * plane;
    for (std::size_t a = 0; a < g.kx; ++a)
      for (std::size_t b = 0; b < g.ky; ++b)
        for (std::size_t c = 0; c < g.kz; ++c, ++r) {
          const T* srcrow = col + r * g.cols();
          for (std::size_t ox = 0; ox < g.ox; ++ox) {
            const long x = tap_coord(ox, a, g, g.px, g.ix);
            if (x < 0) continue;
            for (std::size_t oy = 0; oy < g.oy; ++oy) {
              const long y = tap_coord(oy, b, g, g.py, g.iy);
              if (y < 0) continue;
              const T* src = srcrow + (ox * g.oy + oy) * g.oz;
              T* dst = chan + static_cast<std::size_t>(x) * plane + static_cast<std::size_t>(y) * g.iz;
              for (std::size_t oz = 0; oz < g.oz; ++oz) {
                const long z = tap_coord(oz, c, g, g.pz, g.iz);
                if (z >= 0) dst[z] += src[oz];
              }
            }
          }
        }
  }
}

template <class T>
void check_operands(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec, const Layout& l) {
  spec.validate();
  if (l.channels != spec.in_channels) {
    throw Error(Errc::ShapeMismatch, "input has " + std::to_string(l.channels) + " channels, spec expects " +
                                         std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) {
    throw Error(Errc::ShapeMismatch,
                "weights " + shape_str(weights.shape()) + " vs expected " + shape_str(spec.weight_shape()));
  }
  (void)input;
}

}  // namespace

template <class T>
Tensor<T> conv3_forward(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
  const Layout l = Layout::of(input.shape());
  check_operands(input, weights, spec, l);
  const Geometry g = geometry(l, spec);
  Tensor<T> out(l.with(l.batch, g.cout, g.ox, g.oy, g.oz, input.rank()));

  const bool pw = pointwise(spec);
  std::vector<T> col(pw ? 0 : g.rows() * g.cols());
  for (std::size_t n = 0; n < l.batch; ++n) {
    const T* in = input.ptr() + n * g.cin * l.spatial();
    const T* cols = in;
    if (!pw) {
      im2col(in, g, col.data());
      cols = col.data();
    }
    detail::gemm_nn(g.cout, g.cols(), g.rows(), weights.ptr(), cols, out.ptr() + n * g.cout * g.cols());
  }
  return out;
}

template <class T>
ConvGrads<T> conv3_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weights,
                            const ConvSpec& spec) {
  const Layout l = Layout::of(input.shape());
  check_operands(input, weights, spec, l);
  const Geometry g = geometry(l, spec);
  const Shape expected = l.with(l.batch, g.cout, g.ox, g.oy, g.oz, input.rank());
  if (grad_out.shape() != expected) {
    throw Error(Errc::ShapeMismatch, "grad_out " + shape_str(grad_out.shape()) + " vs " + shape_str(expected));
  }

  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape())};
  const bool pw = pointwise(spec);
  std::vector<T> col(pw ? 0 : g.rows() * g.cols());
  std::vector<T> gcol(pw ? 0 : g.rows() * g.cols());
  for (std::size_t n = 0; n < l.batch; ++n) {
    const T* in = input.ptr() + n * g.cin * l.spatial();
    const T* go = grad_out.ptr() + n * g.cout * g.cols();
    T* gi = grads.grad_input.ptr() + n * g.cin * l.spatial();
    if (pw) {
      detail::gemm_nt_acc(g.cout, g.rows(), g.cols(), go, in, grads.grad_weights.ptr());
      detail::gemm_tn(g.rows(), g.cols(), g.cout, weights.ptr(), go, gi);
      continue;
    }
    im2col(in, g, col.data());
    detail::gemm_nt_acc(g.cout, g.rows(), g.cols(), go, col.data(), grads.grad_weights.ptr());
    detail::gemm_tn(g.rows(), g.cols(), g.cout, weights.ptr(), go, gcol.data());
    col2im_add(gcol.data(), g, gi);
  }
  return grads;
}

template <class T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias) {
  const Layout l = Layout::of(x.shape());
  if (bias.size() != l.channels) throw Error(Errc::ShapeMismatch, "bias length does not match channels");
  const std::size_t s = l.spatial();
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      T* p = x.ptr() + (n * l.channels + c) * s;
      const T b = bias[c];
      for (std::size_t i = 0; i < s; ++i) p[i] += b;
    }
}

template <class T>
Tensor<T> channel_bias_grad(const Tensor<T>& grad_out) {
  const Layout l = Layout::of(grad_out.shape());
  Tensor<T> g({l.channels});
  const std::size_t s = l.spatial();
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const T* p = grad_out.ptr() + (n * l.channels + c) * s;
      T acc = T{0};
      for (std::size_t i = 0; i < s; ++i) acc += p[i];
      g[c] += acc;
    }
  return g;
}

#define CASCADE_INSTANTIATE_CONV(T)                                                                         \
  template Tensor<T> conv3_forward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&);                    \
  template ConvGrads<T> conv3_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&); \
  template void add_channel_bias(Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> channel_bias_grad(const Tensor<T>&);

CASCADE_INSTANTIATE_CONV(float)
CASCADE_INSTANTIATE_CONV(double)

}  // namespace cascade::autonet
