#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade::autonet {

/// 3D convolution geometry. Weights are laid out (out, in, kx, ky, kz).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 3> kernel{3, 3, 3};
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::array<std::size_t, 3> padding{0, 0, 0};

  std::size_t effective_extent(int axis) const { return (kernel[axis] - 1) * dilation + 1; }
  std::size_t weight_count() const { return out_channels * in_channels * kernel[0] * kernel[1] * kernel[2]; }
  Shape weight_shape() const { return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]}; }
  /// Output spatial extents for the given input extents; throws ShapeMismatch.
  std::array<std::size_t, 3> output_extents(const std::array<std::size_t, 3>& in) const;
  void validate() const;

  /// Same-size 3D convolution: padding = dilation * (k - 1) / 2 per axis.
  static ConvSpec same(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation = 1);
  /// Same-size 2D convolution over (x, y); kernel depth 1.
  static ConvSpec same2d(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation = 1);
};

/// Tensors of rank 4 (C, X, Y, Z) or rank 5 (N, C, X, Y, Z).
struct Layout {
  std::size_t batch, channels, x, y, z;
  std::size_t spatial() const { return x * y * z; }
  static Layout of(const Shape& shape);
  Shape with(std::size_t n, std::size_t c, std::size_t sx, std::size_t sy, std::size_t sz, std::size_t rank) const;
};

template <class T>
Tensor<T> conv3_forward(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec);

template <class T>
struct ConvGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_weights;
};

template <class T>
ConvGrads<T> conv3_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weights,
                            const ConvSpec& spec);

/// Adds one bias value per channel.
template <class T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias);
template <class T>
Tensor<T> channel_bias_grad(const Tensor<T>& grad_out);

template <class T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2x2 max pooling, stride 2; odd extents replicate the last element.
template <class T>
PoolResult<T> maxpool3(const Tensor<T>& input);
template <class T>
Tensor<T> maxpool3_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                            const Shape& input_shape);

/// Align-corners trilinear resampling of every channel to `target` extents.
template <class T>
Tensor<T> upsample_trilinear(const Tensor<T>& input, const std::array<std::size_t, 3>& target);
template <class T>
Tensor<T> upsample_trilinear_backward(const Tensor<T>& grad_out, const Shape& input_shape);

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& inputs);
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad, const std::vector<std::size_t>& channel_counts);

template <class T>
Tensor<T> relu(const Tensor<T>& input);
template <class T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input);

/// Softmax across the channel axis at every voxel.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits);
template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& grad_probs, const Tensor<T>& probs);

template <class T>
struct LossValue {
  double value = 0.0;
  Tensor<T> gradient;
};

/// Mean cross-entropy of softmax over rows of (M, K) logits.
template <class T>
LossValue<T> softmax_ce(const Tensor<T>& logits, std::span<const int> labels);

inline constexpr double kDefaultDiceEpsilon = 1e-5;

/// 1 - (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps), with gradient wrt probs.
template <class T>
LossValue<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double epsilon = kDefaultDiceEpsilon);

/// Per-group feature normalisation with per-channel affine.
template <class T>
struct GroupNormCache {
  std::vector<double> mean, inv_std;
  Tensor<T> normalized;
};
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t groups,
                     GroupNormCache<T>& cache, double eps = 1e-5);
template <class T>
struct GroupNormGrads {
  Tensor<T> grad_input, grad_gamma, grad_beta;
};
template <class T>
GroupNormGrads<T> group_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma, std::size_t groups,
                                      const GroupNormCache<T>& cache);

/// Trainable tensor with its gradient accumulator and momentum buffer.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> velocity;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), velocity(value.shape()) {}
};

/// v <- momentum * v + g;  p <- p - lr * v
template <class T>
void sgd_step(std::span<Parameter<T>*> params, double lr, double momentum);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences of `objective` at `x` compared against `analytic`.
/// `max_coords` = 0 checks every coordinate, otherwise a seeded sample.
GradCheckResult grad_check(const std::function<double(const TensorD&)>& objective, const TensorD& x,
                           const TensorD& analytic, double h = 1e-5, std::size_t max_coords = 0,
                           std::uint64_t seed = 0);

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF& tensor(const std::string& name) const;
};

/// Writes `<path>` (text manifest) and `<path>.bin` (little-endian f32 blob).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cascade::autonet
