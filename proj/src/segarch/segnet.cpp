#include <algorithm>

#include "cascade/segarch.hpp"

namespace cascade::segarch {

void SegNetConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::ConfigInvalid, what); };
  if (in_channels == 0) bad("in_channels must be positive");
  for (auto c : channels)
    if (c == 0) bad("channel counts must be positive");
  for (std::size_t i = 1; i < channels.size(); ++i)
    if (channels[i] <= channels[i - 1]) bad("channel plan must be strictly increasing");
  for (auto d : dilations)
    if (d == 0) bad("dilations must be positive");
  if (atrous_kernel % 2 == 0 || vanilla_kernel % 2 == 0) bad("kernel sizes must be odd");
  if (convs_per_stage == 0) bad("convs_per_stage must be positive");
  if (patch.nx < 4 || patch.ny < 4 || patch.nz < 4) bad("patch extents must be at least 4");
  if (classes != 4) bad("the region decomposition needs exactly 4 classes");
  if (batch == 0) bad("batch must be positive");
  if (norm_groups)
    for (auto c : channels)
      if (c % norm_groups) bad("norm_groups must divide every channel count");
}

std::vector<LayerDesc> segnet_layers(const SegNetConfig& cfg) {
  cfg.validate();
  std::vector<LayerDesc> out;
  const auto k = cfg.vanilla_kernel;
  std::size_t prev = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.convs_per_stage; ++i) {
    out.push_back({"stage1.conv" + std::to_string(i), ConvSpec::same(prev, cfg.channels[0], k), true});
    prev = cfg.channels[0];
  }
  for (std::size_t i = 0; i < cfg.convs_per_stage; ++i) {
    out.push_back({"stage2.conv" + std::to_string(i), ConvSpec::same(prev, cfg.channels[1], k), true});
    prev = cfg.channels[1];
  }
  out.push_back({"atrous_a", ConvSpec::same(prev, cfg.channels[2], cfg.atrous_kernel, cfg.dilations[0]), true});
  out.push_back({"atrous_b", ConvSpec::same(prev, cfg.channels[3], cfg.atrous_kernel, cfg.dilations[1]), true});
  out.push_back({"head", ConvSpec::same(cfg.feature_channels(), cfg.classes, 1), false});
  return out;
}

std::size_t segnet_parameter_count(const SegNetConfig& cfg) {
  std::size_t n = 0;
  for (const auto& l : segnet_layers(cfg)) {
    n += l.spec.weight_count() + l.spec.out_channels;
    if (cfg.norm_groups && l.relu) n += 2 * l.spec.out_channels;
  }
  return n;
}

namespace {

std::array<std::size_t, 3> pooled(const std::array<std::size_t, 3>& e) {
  return {(e[0] + 1) / 2, (e[1] + 1) / 2, (e[2] + 1) / 2};
}

std::array<std::size_t, 3> spatial_of(const Shape& s) {
  const auto l = autonet::Layout::of(s);
  return {l.x, l.y, l.z};
}

}  // namespace

ShapeAudit audit_shapes(const SegNetConfig& cfg, const Shape& input) {
  const auto layers = segnet_layers(cfg);
  const auto lay = autonet::Layout::of(input);
  if (lay.channels != cfg.in_channels) {
    throw Error(Errc::ShapeMismatch, "input " + autonet::shape_str(input) + " does not have " +
                                         std::to_string(cfg.in_channels) + " channels");
  }
  const std::size_t rank = input.size();
  auto shape = [&](std::size_t c, const std::array<std::size_t, 3>& e) {
    return lay.with(lay.batch, c, e[0], e[1], e[2], rank);
  };
  ShapeAudit a;
  a.input = input;
  std::array<std::size_t, 3> e{lay.x, lay.y, lay.z};
  std::size_t i = 0;
  for (; i < cfg.convs_per_stage; ++i) e = layers[i].spec.output_extents(e);
  a.full_res = shape(cfg.channels[0], e);
  const auto full = e;
  e = pooled(e);
  for (; i < 2 * cfg.convs_per_stage; ++i) e = layers[i].spec.output_extents(e);
  a.half_res = shape(cfg.channels[1], e);
  e = pooled(e);
  a.quarter_a = shape(cfg.channels[2], layers[i].spec.output_extents(e));
  a.quarter_b = shape(cfg.channels[3], layers[i + 1].spec.output_extents(e));
  a.features = shape(cfg.feature_channels(), full);
  a.logits = shape(cfg.classes, layers.back().spec.output_extents(full));
  return a;
}

template <class T>
SegNet<T>::SegNet(const SegNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const auto layers = segnet_layers(cfg);
  std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + 1;
  auto block = [&](const LayerDesc& l) {
    s += 0xBF58476D1CE4E5B9ULL;
    return make_block<T>(l.name, l.spec, l.relu, l.relu ? cfg.norm_groups : 0, s, l.relu ? 2.0 : 1.0);
  };
  std::size_t i = 0;
  for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) stage1_.push_back(block(layers[i++]));
  for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) stage2_.push_back(block(layers[i++]));
  path_a_.push_back(block(layers[i++]));
  path_b_.push_back(block(layers[i++]));
  head_ = block(layers[i]);
}

namespace {

template <class T>
Tensor<T> run(std::vector<ConvBlock<T>>& blocks, Tensor<T> x) {
  for (auto& b : blocks) x = b.forward(x);
  return x;
}

template <class T>
Tensor<T> run_back(std::vector<ConvBlock<T>>& blocks, Tensor<T> g) {
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
  return g;
}

template <class T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw Error(Errc::ShapeMismatch, "gradient shapes differ");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

template <class T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& input) {
  const auto lay = autonet::Layout::of(input.shape());
  if (lay.channels != cfg_.in_channels) {
    throw Error(Errc::ShapeMismatch, "input " + autonet::shape_str(input.shape()) + " does not have " +
                                         std::to_string(cfg_.in_channels) + " channels");
  }
  in_shape_ = input.shape();
  Tensor<T> f1 = run(stage1_, input);
  f1_shape_ = f1.shape();
  auto p1 = autonet::maxpool3(f1);
  pool1_in_ = f1.shape();
  pool1_arg_ = std::move(p1.argmax);

  Tensor<T> f2 = run(stage2_, std::move(p1.output));
  f2_shape_ = f2.shape();
  auto p2 = autonet::maxpool3(f2);
  pool2_in_ = f2.shape();
  pool2_arg_ = std::move(p2.argmax);

  Tensor<T> fa = run(path_a_, p2.output);
  Tensor<T> fb = run(path_b_, std::move(p2.output));
  f3a_shape_ = fa.shape();
  f3b_shape_ = fb.shape();

  const auto target = spatial_of(f1_shape_);
  const Tensor<T> u2 = autonet::upsample_trilinear(f2, target);
  const Tensor<T> ua = autonet::upsample_trilinear(fa, target);
  const Tensor<T> ub = autonet::upsample_trilinear(fb, target);
  features_ = autonet::concat_channels<T>({&f1, &u2, &ua, &ub});
  return head_.forward(features_);
}

template <class T>
Tensor<T> SegNet<T>::backward(const Tensor<T>& grad_logits) {
  if (in_shape_.empty()) throw Error(Errc::ShapeMismatch, "backward called before forward");
  const Tensor<T> g_features = head_.backward(grad_logits);
  auto parts = autonet::split_channels(g_features, {cfg_.channels[0], cfg_.channels[1], cfg_.channels[2],
                                                    cfg_.channels[3]});
  Tensor<T> g_f1 = std::move(parts[0]);
  Tensor<T> g_f2 = autonet::upsample_trilinear_backward(parts[1], f2_shape_);
  const Tensor<T> g_a = autonet::upsample_trilinear_backward(parts[2], f3a_shape_);
  const Tensor<T> g_b = autonet::upsample_trilinear_backward(parts[3], f3b_shape_);

  Tensor<T> g_p2 = run_back(path_a_, g_a);
  add_into(g_p2, run_back(path_b_, g_b));
  add_into(g_f2, autonet::maxpool3_backward(g_p2, pool2_arg_, pool2_in_));

  const Tensor<T> g_p1 = run_back(stage2_, std::move(g_f2));
  add_into(g_f1, autonet::maxpool3_backward(g_p1, pool1_arg_, pool1_in_));
  return run_back(stage1_, std::move(g_f1));
}

template <class T>
std::vector<Parameter<T>*> SegNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto add = [&](ConvBlock<T>& b) {
    for (auto* p : b.parameters()) out.push_back(p);
  };
  for (auto* group : {&stage1_, &stage2_, &path_a_, &path_b_})
    for (auto& b : *group) add(b);
  add(head_);
  return out;
}

template <class T>
void SegNet<T>::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(T{0});
}

template <class T>
autonet::Checkpoint SegNet<T>::to_checkpoint() const {
  autonet::Checkpoint ckpt;
  ckpt.meta = to_meta(cfg_);
  for (auto* p : const_cast<SegNet*>(this)->parameters()) ckpt.tensors.emplace_back(p->name, p->value.template cast<float>());
  return ckpt;
}

template <class T>
void SegNet<T>::load(const autonet::Checkpoint& ckpt) {
  const auto cfg = segnet_config_from_meta(ckpt.meta);
  if (to_meta(cfg) != to_meta(cfg_)) throw Error(Errc::CheckpointMismatch, "checkpoint network layout differs");
  for (auto* p : parameters()) {
    const auto& t = ckpt.tensor(p->name);
    if (t.shape() != p->value.shape()) {
      throw Error(Errc::CheckpointMismatch, p->name + ": stored shape " + autonet::shape_str(t.shape()) +
                                                " expected " + autonet::shape_str(p->value.shape()));
    }
    p->value = t.template cast<T>();
    p->velocity.fill(T{0});
    p->grad.fill(T{0});
  }
}

template <class T>
template <class U>
SegNet<U> SegNet<T>::cast() const {
  SegNet<U> out(cfg_, 0);
  auto src = const_cast<SegNet*>(this)->parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  return out;
}

template class SegNet<float>;
template class SegNet<double>;
template SegNet<double> SegNet<float>::cast<double>() const;
template SegNet<float> SegNet<double>::cast<float>() const;
template SegNet<float> SegNet<float>::cast<float>() const;
template SegNet<double> SegNet<double>::cast<double>() const;

// ---------------------------------------------------------------------------
// Region heads

template <class T>
Tensor<T> region_probs(const Tensor<T>& class_probs) {
  const auto lay = autonet::Layout::of(class_probs.shape());
  if (lay.channels != 4) throw Error(Errc::ShapeMismatch, "region maps need 4 class channels");
  const std::size_t n = lay.spatial();
  Tensor<T> out(lay.with(lay.batch, 3, lay.x, lay.y, lay.z, class_probs.rank()));
  for (std::size_t b = 0; b < lay.batch; ++b) {
    const T* p = class_probs.ptr() + b * 4 * n;
    T* r = out.ptr() + b * 3 * n;
    for (std::size_t i = 0; i < n; ++i) {
      const T p1 = p[n + i], p2 = p[2 * n + i], p4 = p[3 * n + i];
      r[i] = p1 + p2 + p4;
      r[n + i] = p1 + p4;
      r[2 * n + i] = p4;
    }
  }
  return out;
}

template <class T>
Tensor<T> region_probs_backward(const Tensor<T>& grad_regions) {
  const auto lay = autonet::Layout::of(grad_regions.shape());
  if (lay.channels != 3) throw Error(Errc::ShapeMismatch, "region gradient needs 3 channels");
  const std::size_t n = lay.spatial();
  Tensor<T> out(lay.with(lay.batch, 4, lay.x, lay.y, lay.z, grad_regions.rank()));
  for (std::size_t b = 0; b < lay.batch; ++b) {
    const T* g = grad_regions.ptr() + b * 3 * n;
    T* o = out.ptr() + b * 4 * n;
    for (std::size_t i = 0; i < n; ++i) {
      const T gwt = g[i], gtc = g[n + i], get = g[2 * n + i];
      o[n + i] = gwt + gtc;
      o[2 * n + i] = gwt;
      o[3 * n + i] = gwt + gtc + get;
    }
  }
  return out;
}

template <class T>
autonet::LossValue<T> region_dice_loss(const Tensor<T>& logits, const Tensor<T>& region_targets, double epsilon) {
  const Tensor<T> probs = autonet::softmax_channels(logits);
  const Tensor<T> regions = region_probs(probs);
  if (regions.shape() != region_targets.shape()) {
    throw Error(Errc::ShapeMismatch, "region targets " + autonet::shape_str(region_targets.shape()) +
                                         " do not match " + autonet::shape_str(regions.shape()));
  }
  const auto lay = autonet::Layout::of(regions.shape());
  const std::size_t n = lay.spatial();
  Tensor<T> grad_regions(regions.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    Tensor<T> p({lay.batch * n}), y({lay.batch * n});
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const std::size_t off = (b * 3 + r) * n;
      std::copy_n(regions.ptr() + off, n, p.ptr() + b * n);
      std::copy_n(region_targets.ptr() + off, n, y.ptr() + b * n);
    }
    auto loss = autonet::soft_dice_loss(p, y, epsilon);
    total += loss.value;
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const std::size_t off = (b * 3 + r) * n;
      for (std::size_t i = 0; i < n; ++i) grad_regions[off + i] = loss.gradient[b * n + i] / T{3};
    }
  }
  autonet::LossValue<T> out;
  out.value = total / 3.0;
  out.gradient = autonet::softmax_channels_backward(region_probs_backward(grad_regions), probs);
  return out;
}

template Tensor<float> region_probs(const Tensor<float>&);
template Tensor<double> region_probs(const Tensor<double>&);
template Tensor<float> region_probs_backward(const Tensor<float>&);
template Tensor<double> region_probs_backward(const Tensor<double>&);
template autonet::LossValue<float> region_dice_loss(const Tensor<float>&, const Tensor<float>&, double);
template autonet::LossValue<double> region_dice_loss(const Tensor<double>&, const Tensor<double>&, double);

volcore::LabelVolume labels_from_regions(const autonet::TensorF& regions, const volcore::Spacing& spacing) {
  if (regions.rank() != 4 || regions.extent(0) != 3) {
    throw Error(Errc::ShapeMismatch, "expected (3, X, Y, Z) region maps, got " + autonet::shape_str(regions.shape()));
  }
  const std::size_t X = regions.extent(1), Y = regions.extent(2), Z = regions.extent(3), n = X * Y * Z;
  volcore::LabelVolume out({X, Y, Z}, spacing);
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t y = 0; y < Y; ++y)
      for (std::size_t z = 0; z < Z; ++z) {
        const std::size_t i = (x * Y + y) * Z + z;
        std::uint8_t label = 0;
        if (regions[2 * n + i] > 0.5f) label = 4;
        else if (regions[n + i] > 0.5f) label = 1;
        else if (regions[i] > 0.5f) label = 2;
        out.at(x, y, z) = label;
      }
  return out;
}

}  // namespace cascade::segarch
