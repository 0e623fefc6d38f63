#include <cmath>
#include <random>
#include <sstream>

#include "cascade/segarch.hpp"

namespace cascade::segarch {

template <class T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x) {
  input_ = x;
  Tensor<T> y = autonet::conv3_forward(x, weight.value, spec);
  autonet::add_channel_bias(y, bias.value);
  if (groups) y = autonet::group_norm(y, gamma.value, beta.value, groups, norm_);
  if (!relu) return y;
  pre_ = std::move(y);
  return autonet::relu(pre_);
}

template <class T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = relu ? autonet::relu_backward(grad_out, pre_) : grad_out;
  if (groups) {
    auto gn = autonet::group_norm_backward(g, gamma.value, groups, norm_);
    for (std::size_t i = 0; i < gamma.grad.size(); ++i) {
      gamma.grad[i] += gn.grad_gamma[i];
      beta.grad[i] += gn.grad_beta[i];
    }
    g = std::move(gn.grad_input);
  }
  const auto gb = autonet::channel_bias_grad(g);
  for (std::size_t i = 0; i < gb.size(); ++i) bias.grad[i] += gb[i];
  auto cg = autonet::conv3_backward(g, input_, weight.value, spec);
  for (std::size_t i = 0; i < cg.grad_weights.size(); ++i) weight.grad[i] += cg.grad_weights[i];
  return std::move(cg.grad_input);
}

template <class T>
std::vector<Parameter<T>*> ConvBlock<T>::parameters() {
  std::vector<Parameter<T>*> out{&weight, &bias};
  if (groups) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  return out;
}

template <class T>
std::size_t ConvBlock<T>::parameter_count() const {
  return weight.value.size() + bias.value.size() + (groups ? gamma.value.size() + beta.value.size() : 0);
}

template <class T>
ConvBlock<T> make_block(const std::string& name, const ConvSpec& spec, bool relu, std::size_t groups,
                        std::uint64_t seed, double init_gain) {
  spec.validate();
  if (groups && spec.out_channels % groups) {
    throw Error(Errc::ConfigInvalid, name + ": " + std::to_string(spec.out_channels) +
                                         " channels not divisible into " + std::to_string(groups) + " groups");
  }
  ConvBlock<T> b;
  b.spec = spec;
  b.relu = relu;
  b.groups = groups;
  Tensor<T> w(spec.weight_shape());
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
  if (init_gain > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(init_gain / fan_in));
    for (auto& v : w.data()) v = static_cast<T>(normal(rng));
  }
  b.weight = Parameter<T>(name + ".weight", std::move(w));
  b.bias = Parameter<T>(name + ".bias", Tensor<T>({spec.out_channels}));
  if (groups) {
    b.gamma = Parameter<T>(name + ".gamma", Tensor<T>({spec.out_channels}, T{1}));
    b.beta = Parameter<T>(name + ".beta", Tensor<T>({spec.out_channels}));
  }
  return b;
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template ConvBlock<float> make_block<float>(const std::string&, const ConvSpec&, bool, std::size_t, std::uint64_t,
                                            double);
template ConvBlock<double> make_block<double>(const std::string&, const ConvSpec&, bool, std::size_t,
                                              std::uint64_t, double);

// ---------------------------------------------------------------------------
// Config (de)serialisation for checkpoints

namespace {

template <class C>
std::string join(const C& values) {
  std::ostringstream out;
  bool first = true;
  for (const auto& v : values) {
    if (!first) out << ',';
    out << v;
    first = false;
  }
  return out.str();
}

const std::string& need(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw Error(Errc::CheckpointMismatch, "checkpoint meta lacks '" + key + "'");
  return it->second;
}

template <class V>
std::vector<V> split_list(const std::string& text, const std::string& key) {
  std::vector<V> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream one(item);
    V v{};
    if (!(one >> v) || !one.eof()) throw Error(Errc::CheckpointMismatch, "bad value for '" + key + "': " + text);
    out.push_back(v);
  }
  return out;
}

template <class V, std::size_t N>
std::array<V, N> fixed_list(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto v = split_list<V>(need(meta, key), key);
  if (v.size() != N) throw Error(Errc::CheckpointMismatch, "wrong arity for '" + key + "'");
  std::array<V, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

template <class V>
V scalar(const std::map<std::string, std::string>& meta, const std::string& key) {
  return fixed_list<V, 1>(meta, key)[0];
}

}  // namespace

std::map<std::string, std::string> to_meta(const SegNetConfig& cfg) {
  return {{"kind", "segnet"},
          {"in_channels", std::to_string(cfg.in_channels)},
          {"channels", join(cfg.channels)},
          {"dilations", join(cfg.dilations)},
          {"atrous_kernel", std::to_string(cfg.atrous_kernel)},
          {"vanilla_kernel", std::to_string(cfg.vanilla_kernel)},
          {"convs_per_stage", std::to_string(cfg.convs_per_stage)},
          {"patch", join(std::array<std::size_t, 3>{cfg.patch.nx, cfg.patch.ny, cfg.patch.nz})},
          {"classes", std::to_string(cfg.classes)},
          {"norm_groups", std::to_string(cfg.norm_groups)}};
}

SegNetConfig segnet_config_from_meta(const std::map<std::string, std::string>& meta) {
  if (need(meta, "kind") != "segnet") throw Error(Errc::CheckpointMismatch, "checkpoint is not a segmentation net");
  SegNetConfig cfg;
  cfg.in_channels = scalar<std::size_t>(meta, "in_channels");
  cfg.channels = fixed_list<std::size_t, 4>(meta, "channels");
  cfg.dilations = fixed_list<std::size_t, 2>(meta, "dilations");
  cfg.atrous_kernel = scalar<std::size_t>(meta, "atrous_kernel");
  cfg.vanilla_kernel = scalar<std::size_t>(meta, "vanilla_kernel");
  cfg.convs_per_stage = scalar<std::size_t>(meta, "convs_per_stage");
  const auto p = fixed_list<std::size_t, 3>(meta, "patch");
  cfg.patch = {p[0], p[1], p[2]};
  cfg.classes = scalar<std::size_t>(meta, "classes");
  cfg.norm_groups = scalar<std::size_t>(meta, "norm_groups");
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> to_meta(const DetectorConfig& cfg) {
  std::vector<int> mods;
  for (auto m : cfg.modalities) mods.push_back(static_cast<int>(m));
  std::ostringstream floor, weight;
  floor.precision(17);
  weight.precision(17);
  floor << cfg.score_floor;
  weight << cfg.regression_weight;
  return {{"kind", "detector"},
          {"modalities", join(mods)},
          {"trunk_channels", join(cfg.trunk_channels)},
          {"trunk_dilations", join(cfg.trunk_dilations)},
          {"anchor_sizes", join(cfg.anchor_sizes)},
          {"score_floor", floor.str()},
          {"regression_weight", weight.str()}};
}

DetectorConfig detector_config_from_meta(const std::map<std::string, std::string>& meta) {
  if (need(meta, "kind") != "detector") throw Error(Errc::CheckpointMismatch, "checkpoint is not a detector");
  DetectorConfig cfg;
  cfg.modalities.clear();
  for (int m : split_list<int>(need(meta, "modalities"), "modalities")) {
    if (m < 0 || m > 3) throw Error(Errc::CheckpointMismatch, "bad modality index");
    cfg.modalities.push_back(static_cast<volcore::Modality>(m));
  }
  cfg.trunk_channels = split_list<std::size_t>(need(meta, "trunk_channels"), "trunk_channels");
  cfg.trunk_dilations = split_list<std::size_t>(need(meta, "trunk_dilations"), "trunk_dilations");
  cfg.anchor_sizes = split_list<int>(need(meta, "anchor_sizes"), "anchor_sizes");
  cfg.score_floor = scalar<double>(meta, "score_floor");
  cfg.regression_weight = scalar<double>(meta, "regression_weight");
  cfg.validate();
  return cfg;
}

}  // namespace cascade::segarch
