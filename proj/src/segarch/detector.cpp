#include <algorithm>
#include <cmath>
#include <numeric>

#include "cascade/segarch.hpp"

namespace cascade::segarch {

void DetectorConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::ConfigInvalid, what); };
  if (modalities.empty()) bad("detector needs at least one modality");
  if (trunk_channels.empty() || trunk_channels.size() != trunk_dilations.size()) {
    bad("trunk_channels and trunk_dilations must be nonempty and equally long");
  }
  for (auto c : trunk_channels)
    if (c == 0) bad("trunk channels must be positive");
  for (auto d : trunk_dilations)
    if (d == 0) bad("trunk dilations must be positive");
  if (anchor_sizes.empty()) bad("at least one anchor size is required");
  for (auto a : anchor_sizes)
    if (a < 1) bad("anchor sizes must be positive");
  if (!(score_floor >= 0.0 && score_floor <= 1.0)) bad("score_floor must lie in [0, 1]");
  if (!(regression_weight >= 0.0)) bad("regression_weight must be nonnegative");
}

template <class T>
Detector<T>::Detector(const DetectorConfig& cfg, std::uint64_t seed, bool zero_head) : cfg_(cfg) {
  cfg.validate();
  std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + 7;
  std::size_t prev = cfg.in_channels();
  for (std::size_t i = 0; i < cfg.trunk_channels.size(); ++i) {
    s += 0xBF58476D1CE4E5B9ULL;
    trunk_.push_back(make_block<T>("trunk" + std::to_string(i),
                                   ConvSpec::same2d(prev, cfg.trunk_channels[i], 3, cfg.trunk_dilations[i]), true,
                                   0, s));
    prev = cfg.trunk_channels[i];
  }
  s += 0xBF58476D1CE4E5B9ULL;
  const std::size_t maps = cfg.anchor_sizes.size() * DetectorConfig::kMapsPerAnchor;
  head_ = make_block<T>("head", ConvSpec::same2d(prev, maps, 1), false, 0, s, zero_head ? 0.0 : 0.01);
}

template <class T>
Tensor<T> Detector<T>::forward(const Tensor<T>& input) {
  const auto lay = autonet::Layout::of(input.shape());
  if (lay.channels != cfg_.in_channels() || lay.z != 1) {
    throw Error(Errc::ShapeMismatch, "detector input " + autonet::shape_str(input.shape()) + " needs " +
                                         std::to_string(cfg_.in_channels()) + " channels and depth 1");
  }
  Tensor<T> x = input;
  for (auto& b : trunk_) x = b.forward(x);
  return head_.forward(x);
}

template <class T>
Tensor<T> Detector<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = head_.backward(grad_out);
  for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) g = it->backward(g);
  return g;
}

template <class T>
std::vector<Parameter<T>*> Detector<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& b : trunk_)
    for (auto* p : b.parameters()) out.push_back(p);
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <class T>
void Detector<T>::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(T{0});
}

template <class T>
autonet::Checkpoint Detector<T>::to_checkpoint() const {
  autonet::Checkpoint ckpt;
  ckpt.meta = to_meta(cfg_);
  for (auto* p : const_cast<Detector*>(this)->parameters())
    ckpt.tensors.emplace_back(p->name, p->value.template cast<float>());
  return ckpt;
}

template <class T>
void Detector<T>::load(const autonet::Checkpoint& ckpt) {
  const auto cfg = detector_config_from_meta(ckpt.meta);
  auto layout = [](const DetectorConfig& c) {
    auto m = to_meta(c);
    m.erase("score_floor");
    m.erase("regression_weight");
    return m;
  };
  if (layout(cfg) != layout(cfg_)) throw Error(Errc::CheckpointMismatch, "checkpoint detector layout differs");
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
Detector<U> Detector<T>::cast() const {
  Detector<U> out(cfg_, 0);
  auto src = const_cast<Detector*>(this)->parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  return out;
}

template class Detector<float>;
template class Detector<double>;
template Detector<double> Detector<float>::cast<double>() const;
template Detector<float> Detector<double>::cast<float>() const;

ctxwin::Rect anchor_rect(int x, int y, int size) {
  const int x0 = x - size / 2, y0 = y - size / 2;
  return {x0, y0, x0 + size - 1, y0 + size - 1};
}

namespace {

struct HeadView {
  std::size_t maps, X, Y;
  std::size_t at(std::size_t ch, int x, int y) const { return (ch * X + static_cast<std::size_t>(x)) * Y + y; }
};

template <class T>
HeadView head_view(const Tensor<T>& out, std::size_t anchors) {
  const auto lay = autonet::Layout::of(out.shape());
  if (lay.batch != 1 || lay.z != 1 || lay.channels != anchors * DetectorConfig::kMapsPerAnchor) {
    throw Error(Errc::ShapeMismatch, "unexpected detector head shape " + autonet::shape_str(out.shape()));
  }
  return {lay.channels, lay.x, lay.y};
}

}  // namespace

template <class T>
DetectorLoss detector_loss(const Tensor<T>& head_out, const std::vector<AnchorTarget>& targets,
                           std::size_t anchors, double regression_weight, Tensor<T>& grad) {
  const HeadView v = head_view(head_out, anchors);
  grad = Tensor<T>(head_out.shape());
  DetectorLoss out;
  if (targets.empty()) return out;

  const std::size_t m = targets.size();
  Tensor<T> logits({m, 2});
  std::vector<int> labels(m);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = targets[i];
    if (t.anchor < 0 || static_cast<std::size_t>(t.anchor) >= anchors || t.x < 0 || t.y < 0 ||
        static_cast<std::size_t>(t.x) >= v.X || static_cast<std::size_t>(t.y) >= v.Y) {
      throw Error(Errc::ShapeMismatch, "anchor target outside the head map");
    }
    const std::size_t base = static_cast<std::size_t>(t.anchor) * DetectorConfig::kMapsPerAnchor;
    logits[2 * i] = head_out[v.at(base, t.x, t.y)];
    logits[2 * i + 1] = head_out[v.at(base + 1, t.x, t.y)];
    labels[i] = t.label == ctxwin::ProposalLabel::positive ? 1 : 0;
    if (labels[i] && t.delta) ++positives;
    const int predicted = logits[2 * i + 1] > logits[2 * i] ? 1 : 0;
    if (predicted == labels[i]) ++out.correct;
  }
  out.total = m;
  auto ce = autonet::softmax_ce(logits, labels);
  out.classification = ce.value;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = targets[i];
    const std::size_t base = static_cast<std::size_t>(t.anchor) * DetectorConfig::kMapsPerAnchor;
    grad[v.at(base, t.x, t.y)] += ce.gradient[2 * i];
    grad[v.at(base + 1, t.x, t.y)] += ce.gradient[2 * i + 1];
  }

  if (positives && regression_weight > 0.0) {
    const double scale = regression_weight / static_cast<double>(positives);
    double reg = 0.0;
    for (const auto& t : targets) {
      if (t.label != ctxwin::ProposalLabel::positive || !t.delta) continue;
      const std::size_t base = static_cast<std::size_t>(t.anchor) * DetectorConfig::kMapsPerAnchor + 2;
      const std::array<double, 4> target{t.delta->dx, t.delta->dy, t.delta->dw, t.delta->dh};
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t idx = v.at(base + k, t.x, t.y);
        const double d = static_cast<double>(head_out[idx]) - target[k];
        const double ad = std::abs(d);
        reg += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
        const double g = ad < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
        grad[idx] += static_cast<T>(scale * g);
      }
    }
    out.regression = reg / static_cast<double>(positives);
  }
  out.value = out.classification + regression_weight * out.regression;
  return out;
}

template DetectorLoss detector_loss(const Tensor<float>&, const std::vector<AnchorTarget>&, std::size_t, double,
                                    Tensor<float>&);
template DetectorLoss detector_loss(const Tensor<double>&, const std::vector<AnchorTarget>&, std::size_t, double,
                                    Tensor<double>&);

std::vector<ctxwin::Proposal> decode_proposals(const autonet::TensorF& head_out, const DetectorConfig& cfg,
                                               std::size_t top_k, int slice_z, int scale_id) {
  const std::size_t anchors = cfg.anchor_sizes.size();
  const HeadView v = head_view(head_out, anchors);
  struct Cand {
    double score;
    std::size_t a;
    int x, y;
  };
  std::vector<Cand> cands;
  cands.reserve(anchors * v.X * v.Y);
  for (std::size_t a = 0; a < anchors; ++a) {
    const std::size_t base = a * DetectorConfig::kMapsPerAnchor;
    for (int x = 0; x < static_cast<int>(v.X); ++x)
      for (int y = 0; y < static_cast<int>(v.Y); ++y) {
        const double l0 = head_out[v.at(base, x, y)], l1 = head_out[v.at(base + 1, x, y)];
        cands.push_back({1.0 / (1.0 + std::exp(l0 - l1)), a, x, y});
      }
  }
  const std::size_t k = std::min(top_k, cands.size());
  // Stable ordering: score descending, then anchor, x, y ascending.
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                    [](const Cand& p, const Cand& q) {
                      if (p.score != q.score) return p.score > q.score;
                      if (p.a != q.a) return p.a < q.a;
                      if (p.x != q.x) return p.x < q.x;
                      return p.y < q.y;
                    });
  std::vector<ctxwin::Proposal> out;
  out.reserve(k);
  const int mx = static_cast<int>(v.X) - 1, my = static_cast<int>(v.Y) - 1;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& c = cands[i];
    const std::size_t base = c.a * DetectorConfig::kMapsPerAnchor + 2;
    ctxwin::BoxDelta d{head_out[v.at(base, c.x, c.y)], head_out[v.at(base + 1, c.x, c.y)],
                       std::clamp<double>(head_out[v.at(base + 2, c.x, c.y)], -4.0, 4.0),
                       std::clamp<double>(head_out[v.at(base + 3, c.x, c.y)], -4.0, 4.0)};
    ctxwin::Rect r = ctxwin::decode_delta(anchor_rect(c.x, c.y, cfg.anchor_sizes[c.a]), d);
    r.x0 = std::clamp(r.x0, 0, mx);
    r.x1 = std::clamp(r.x1, 0, mx);
    r.y0 = std::clamp(r.y0, 0, my);
    r.y1 = std::clamp(r.y1, 0, my);
    out.push_back({r, c.score, slice_z, scale_id});
  }
  return out;
}

}  // namespace cascade::segarch
