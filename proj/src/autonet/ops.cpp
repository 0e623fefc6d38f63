#include <algorithm>
#include <cmath>
#include <limits>

#include "cascade/autonet.hpp"

namespace cascade::autonet {

template <class T>
PoolResult<T> maxpool3(const Tensor<T>& input) {
  const Layout l = Layout::of(input.shape());
  const std::size_t ox = (l.x + 1) / 2, oy = (l.y + 1) / 2, oz = (l.z + 1) / 2;
  PoolResult<T> r{Tensor<T>(l.with(l.batch, l.channels, ox, oy, oz, input.rank())), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < l.batch * l.channels; ++nc) {
    const std::size_t base = nc * l.spatial();
    for (std::size_t x = 0; x < ox; ++x)
      for (std::size_t y = 0; y < oy; ++y)
        for (std::size_t z = 0; z < oz; ++z, ++o) {
          const std::size_t first = base + (2 * x * l.y + 2 * y) * l.z + 2 * z;
          T best = input[first];
          std::size_t arg = first;
          for (std::size_t a = 2 * x; a < std::min(2 * x + 2, l.x); ++a)
            for (std::size_t b = 2 * y; b < std::min(2 * y + 2, l.y); ++b)
              for (std::size_t c = 2 * z; c < std::min(2 * z + 2, l.z); ++c) {
                const std::size_t idx = base + (a * l.y + b) * l.z + c;
                if (input[idx] > best) {
                  best = input[idx];
                  arg = idx;
                }
              }
          r.output[o] = best;
          r.argmax[o] = static_cast<std::uint32_t>(arg);
        }
  }
  return r;
}

template <class T>
Tensor<T> maxpool3_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                            const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw Error(Errc::ShapeMismatch, "argmax/grad size mismatch");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

namespace {

struct LinTap {
  std::size_t i0, i1;
  double t;
};

std::vector<LinTap> align_corner_taps(std::size_t n_in, std::size_t n_out) {
  std::vector<LinTap> taps(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double s = n_out == 1 ? 0.0 : static_cast<double>(i) * (n_in - 1) / static_cast<double>(n_out - 1);
    std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(s)), n_in - 1);
    std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[i] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <class T>
Tensor<T> upsample_trilinear(const Tensor<T>& input, const std::array<std::size_t, 3>& target) {
  const Layout l = Layout::of(input.shape());
  if (target[0] < 1 || target[1] < 1 || target[2] < 1) throw Error(Errc::ShapeMismatch, "target extents must be >= 1");
  Tensor<T> out(l.with(l.batch, l.channels, target[0], target[1], target[2], input.rank()));
  if (target == std::array<std::size_t, 3>{l.x, l.y, l.z}) {
    out.storage() = input.storage();
    return out;
  }
  const auto tx = align_corner_taps(l.x, target[0]);
  const auto ty = align_corner_taps(l.y, target[1]);
  const auto tz = align_corner_taps(l.z, target[2]);
  const std::size_t out_spatial = target[0] * target[1] * target[2];
  for (std::size_t nc = 0; nc < l.batch * l.channels; ++nc) {
    const T* in = input.ptr() + nc * l.spatial();
    T* dst = out.ptr() + nc * out_spatial;
    for (std::size_t x = 0; x < target[0]; ++x) {
      const auto& cx = tx[x];
      for (std::size_t y = 0; y < target[1]; ++y) {
        const auto& cy = ty[y];
        const T* r00 = in + (cx.i0 * l.y + cy.i0) * l.z;
        const T* r01 = in + (cx.i0 * l.y + cy.i1) * l.z;
        const T* r10 = in + (cx.i1 * l.y + cy.i0) * l.z;
        const T* r11 = in + (cx.i1 * l.y + cy.i1) * l.z;
        const double w00 = (1 - cx.t) * (1 - cy.t), w01 = (1 - cx.t) * cy.t, w10 = cx.t * (1 - cy.t),
                     w11 = cx.t * cy.t;
        for (std::size_t z = 0; z < target[2]; ++z) {
          const auto& cz = tz[z];
          const double v0 = w00 * r00[cz.i0] + w01 * r01[cz.i0] + w10 * r10[cz.i0] + w11 * r11[cz.i0];
          const double v1 = w00 * r00[cz.i1] + w01 * r01[cz.i1] + w10 * r10[cz.i1] + w11 * r11[cz.i1];
          *dst++ = static_cast<T>((1 - cz.t) * v0 + cz.t * v1);
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> upsample_trilinear_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  const Layout l = Layout::of(input_shape);
  const Layout o = Layout::of(grad_out.shape());
  if (o.batch != l.batch || o.channels != l.channels) throw Error(Errc::ShapeMismatch, "upsample backward mismatch");
  Tensor<T> g(input_shape);
  if (o.x == l.x && o.y == l.y && o.z == l.z) {
    g.storage() = grad_out.storage();
    return g;
  }
  const auto tx = align_corner_taps(l.x, o.x);
  const auto ty = align_corner_taps(l.y, o.y);
  const auto tz = align_corner_taps(l.z, o.z);
  for (std::size_t nc = 0; nc < l.batch * l.channels; ++nc) {
    T* gi = g.ptr() + nc * l.spatial();
    const T* src = grad_out.ptr() + nc * o.spatial();
    for (std::size_t x = 0; x < o.x; ++x) {
      const auto& cx = tx[x];
      for (std::size_t y = 0; y < o.y; ++y) {
        const auto& cy = ty[y];
        T* r00 = gi + (cx.i0 * l.y + cy.i0) * l.z;
        T* r01 = gi + (cx.i0 * l.y + cy.i1) * l.z;
        T* r10 = gi + (cx.i1 * l.y + cy.i0) * l.z;
        T* r11 = gi + (cx.i1 * l.y + cy.i1) * l.z;
        const double w00 = (1 - cx.t) * (1 - cy.t), w01 = (1 - cx.t) * cy.t, w10 = cx.t * (1 - cy.t),
                     w11 = cx.t * cy.t;
        for (std::size_t z = 0; z < o.z; ++z) {
          const auto& cz = tz[z];
          const double v = *src++;
          const double v0 = (1 - cz.t) * v, v1 = cz.t * v;
          r00[cz.i0] += static_cast<T>(w00 * v0);
          r01[cz.i0] += static_cast<T>(w01 * v0);
          r10[cz.i0] += static_cast<T>(w10 * v0);
          r11[cz.i0] += static_cast<T>(w11 * v0);
          r00[cz.i1] += static_cast<T>(w00 * v1);
          r01[cz.i1] += static_cast<T>(w01 * v1);
          r10[cz.i1] += static_cast<T>(w10 * v1);
          r11[cz.i1] += static_cast<T>(w11 * v1);
        }
      }
    }
  }
  return g;
}

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& inputs) {
  if (inputs.empty()) throw Error(Errc::ShapeMismatch, "concat of zero tensors");
  const Layout first = Layout::of(inputs[0]->shape());
  std::size_t channels = 0;
  for (const auto* t : inputs) {
    const Layout l = Layout::of(t->shape());
    if (t->rank() != inputs[0]->rank() || l.batch != first.batch || l.x != first.x || l.y != first.y ||
        l.z != first.z) {
      throw Error(Errc::ShapeMismatch,
                  "concat operands " + shape_str(inputs[0]->shape()) + " and " + shape_str(t->shape()));
    }
    channels += l.channels;
  }
  Tensor<T> out(first.with(first.batch, channels, first.x, first.y, first.z, inputs[0]->rank()));
  const std::size_t s = first.spatial();
  T* dst = out.ptr();
  for (std::size_t n = 0; n < first.batch; ++n) {
    for (const auto* t : inputs) {
      const std::size_t c = Layout::of(t->shape()).channels;
      const T* src = t->ptr() + n * c * s;
      dst = std::copy(src, src + c * s, dst);
    }
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad, const std::vector<std::size_t>& channel_counts) {
  const Layout l = Layout::of(grad.shape());
  std::size_t total = 0;
  for (auto c : channel_counts) total += c;
  if (total != l.channels) throw Error(Errc::ShapeMismatch, "split counts do not sum to channel extent");
  std::vector<Tensor<T>> parts;
  for (auto c : channel_counts) parts.emplace_back(l.with(l.batch, c, l.x, l.y, l.z, grad.rank()));
  const std::size_t s = l.spatial();
  const T* src = grad.ptr();
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t len = channel_counts[p] * s;
      std::copy(src, src + len, parts[p].ptr() + n * len);
      src += len;
    }
  }
  return parts;
}

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  return out;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
  if (grad_out.shape() != input.shape()) throw Error(Errc::ShapeMismatch, "relu backward shape mismatch");
  Tensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const Layout l = Layout::of(logits.shape());
  Tensor<T> p(logits.shape());
  const std::size_t s = l.spatial();
  for (std::size_t n = 0; n < l.batch; ++n) {
    const T* in = logits.ptr() + n * l.channels * s;
    T* out = p.ptr() + n * l.channels * s;
    for (std::size_t i = 0; i < s; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < l.channels; ++c) m = std::max(m, static_cast<double>(in[c * s + i]));
      double sum = 0.0;
      for (std::size_t c = 0; c < l.channels; ++c) sum += std::exp(in[c * s + i] - m);
      for (std::size_t c = 0; c < l.channels; ++c) out[c * s + i] = static_cast<T>(std::exp(in[c * s + i] - m) / sum);
    }
  }
  return p;
}

template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& grad_probs, const Tensor<T>& probs) {
  const Layout l = Layout::of(probs.shape());
  Tensor<T> g(probs.shape());
  const std::size_t s = l.spatial();
  for (std::size_t n = 0; n < l.batch; ++n) {
    const T* p = probs.ptr() + n * l.channels * s;
    const T* gp = grad_probs.ptr() + n * l.channels * s;
    T* out = g.ptr() + n * l.channels * s;
    for (std::size_t i = 0; i < s; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < l.channels; ++c) dot += static_cast<double>(gp[c * s + i]) * p[c * s + i];
      for (std::size_t c = 0; c < l.channels; ++c) out[c * s + i] = static_cast<T>(p[c * s + i] * (gp[c * s + i] - dot));
    }
  }
  return g;
}

template <class T>
LossValue<T> softmax_ce(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw Error(Errc::ShapeMismatch, "softmax_ce expects (M, K) logits");
  const std::size_t m = logits.extent(0), k = logits.extent(1);
  if (k < 2) throw Error(Errc::ShapeMismatch, "softmax_ce needs at least two classes");
  if (labels.size() != m) throw Error(Errc::ShapeMismatch, "label count does not match logits rows");
  LossValue<T> loss{0.0, Tensor<T>(logits.shape())};
  if (m == 0) return loss;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(y) + " at row " + std::to_string(i));
    }
    const T* row = logits.ptr() + i * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(row[c] - mx);
    const double log_sum = std::log(sum) + mx;
    total += log_sum - row[y];
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(row[c] - log_sum);
      loss.gradient[i * k + c] = static_cast<T>((p - (static_cast<int>(c) == y ? 1.0 : 0.0)) / m);
    }
  }
  loss.value = total / static_cast<double>(m);
  return loss;
}

template <class T>
LossValue<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double epsilon) {
  if (probs.shape() != target.shape()) {
    throw Error(Errc::ShapeMismatch, "probs " + shape_str(probs.shape()) + " vs target " + shape_str(target.shape()));
  }
  double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += static_cast<double>(probs[i]) * target[i];
    sum_p += probs[i];
    sum_y += target[i];
  }
  const double denom = sum_p + sum_y + epsilon;
  if (!(denom > 0.0)) throw Error(Errc::NumericFailure, "soft dice undefined: empty prediction and target with eps=0");
  const double numer = 2.0 * inter + epsilon;
  LossValue<T> loss{1.0 - numer / denom, Tensor<T>(probs.shape())};
  const double d2 = denom * denom;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    loss.gradient[i] = static_cast<T>(-(2.0 * target[i] * denom - numer) / d2);
  }
  return loss;
}

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t groups,
                     GroupNormCache<T>& cache, double eps) {
  const Layout l = Layout::of(x.shape());
  if (groups == 0 || l.channels % groups != 0) throw Error(Errc::ShapeMismatch, "channels not divisible by groups");
  if (gamma.size() != l.channels || beta.size() != l.channels) throw Error(Errc::ShapeMismatch, "affine size");
  const std::size_t cpg = l.channels / groups, s = l.spatial(), len = cpg * s;
  cache.mean.assign(l.batch * groups, 0.0);
  cache.inv_std.assign(l.batch * groups, 0.0);
  cache.normalized = Tensor<T>(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = (n * l.channels + g * cpg) * s;
      double mean = 0.0;
      for (std::size_t i = 0; i < len; ++i) mean += x[off + i];
      mean /= static_cast<double>(len);
      double var = 0.0;
      for (std::size_t i = 0; i < len; ++i) var += (x[off + i] - mean) * (x[off + i] - mean);
      var /= static_cast<double>(len);
      const double inv = 1.0 / std::sqrt(var + eps);
      cache.mean[n * groups + g] = mean;
      cache.inv_std[n * groups + g] = inv;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        for (std::size_t i = 0; i < s; ++i) {
          const std::size_t idx = off + c * s + i;
          const double xh = (x[idx] - mean) * inv;
          cache.normalized[idx] = static_cast<T>(xh);
          out[idx] = static_cast<T>(gamma[ch] * xh + beta[ch]);
        }
      }
    }
  return out;
}

template <class T>
GroupNormGrads<T> group_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma, std::size_t groups,
                                      const GroupNormCache<T>& cache) {
  const Layout l = Layout::of(grad_out.shape());
  const std::size_t cpg = l.channels / groups, s = l.spatial();
  const double len = static_cast<double>(cpg * s);
  GroupNormGrads<T> r{Tensor<T>(grad_out.shape()), Tensor<T>({l.channels}), Tensor<T>({l.channels})};
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = (n * l.channels + g * cpg) * s;
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        double gg = 0.0, gb = 0.0;
        for (std::size_t i = 0; i < s; ++i) {
          const std::size_t idx = off + c * s + i;
          const double go = grad_out[idx];
          const double d = go * gamma[ch];
          sum_d += d;
          sum_dx += d * cache.normalized[idx];
          gg += go * cache.normalized[idx];
          gb += go;
        }
        r.grad_gamma[ch] += static_cast<T>(gg);
        r.grad_beta[ch] += static_cast<T>(gb);
      }
      const double inv = cache.inv_std[n * groups + g];
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        for (std::size_t i = 0; i < s; ++i) {
          const std::size_t idx = off + c * s + i;
          const double d = grad_out[idx] * gamma[ch];
          r.grad_input[idx] = static_cast<T>(inv * (d - sum_d / len - cache.normalized[idx] * sum_dx / len));
        }
      }
    }
  return r;
}

template <class T>
void sgd_step(std::span<Parameter<T>*> params, double lr, double momentum) {
  for (auto* p : params) {
    if (p->grad.shape() != p->value.shape()) throw Error(Errc::ShapeMismatch, p->name + ": grad shape mismatch");
    if (p->velocity.shape() != p->value.shape()) p->velocity = Tensor<T>(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->velocity[i] = static_cast<T>(momentum * p->velocity[i] + p->grad[i]);
      p->value[i] = static_cast<T>(p->value[i] - lr * p->velocity[i]);
    }
  }
}

#define CASCADE_INSTANTIATE_OPS(T)                                                                             \
  template PoolResult<T> maxpool3(const Tensor<T>&);                                                           \
  template Tensor<T> maxpool3_backward(const Tensor<T>&, const std::vector<std::uint32_t>&, const Shape&);     \
  template Tensor<T> upsample_trilinear(const Tensor<T>&, const std::array<std::size_t, 3>&);                  \
  template Tensor<T> upsample_trilinear_backward(const Tensor<T>&, const Shape&);                              \
  template Tensor<T> concat_channels(const std::vector<const Tensor<T>*>&);                                    \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, const std::vector<std::size_t>&);           \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                                       \
  template Tensor<T> softmax_channels_backward(const Tensor<T>&, const Tensor<T>&);                            \
  template LossValue<T> softmax_ce(const Tensor<T>&, std::span<const int>);                                    \
  template LossValue<T> soft_dice_loss(const Tensor<T>&, const Tensor<T>&, double);                            \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,             \
                                GroupNormCache<T>&, double);                                                   \
  template GroupNormGrads<T> group_norm_backward(const Tensor<T>&, const Tensor<T>&, std::size_t,              \
                                                 const GroupNormCache<T>&);                                    \
  template void sgd_step(std::span<Parameter<T>*>, double, double);

CASCADE_INSTANTIATE_OPS(float)
CASCADE_INSTANTIATE_OPS(double)

}  // namespace cascade::autonet
