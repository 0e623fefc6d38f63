#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "cascade/segarch.hpp"

namespace cascade::segarch {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_finite(double loss, std::size_t iteration) {
  if (!std::isfinite(loss)) {
    throw Error(Errc::NumericFailure, "loss became non-finite at iteration " + std::to_string(iteration));
  }
}

// Stacks (C, X, Y, Z) samples into one (N, C, X, Y, Z) batch.
autonet::TensorF stack(const std::vector<const autonet::TensorF*>& items) {
  const auto& s = items.front()->shape();
  autonet::Shape shape{items.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  autonet::TensorF out(shape);
  std::size_t off = 0;
  for (const auto* t : items) {
    if (t->shape() != s) throw Error(Errc::ShapeMismatch, "batch members differ in shape");
    std::copy(t->storage().begin(), t->storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off));
    off += t->size();
  }
  return out;
}

}  // namespace

SegNet<float> train_seg(const std::vector<SegSample>& data, const SegNetConfig& cfg, const TrainOptions& opts,
                        TrainReport& report, const std::vector<SegSample>* validation) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "no segmentation training samples");
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  SegNet<float> net(cfg, opts.seed);
  auto params = net.parameters();
  std::mt19937_64 rng(opts.seed ^ 0x5E65E65EULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const std::size_t batch = std::max<std::size_t>(1, opts.batch);

  report = TrainReport{};
  report.kind = "seg";
  report.seed = opts.seed;
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    std::vector<const autonet::TensorF*> images, targets;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = data[pick(rng)];
      images.push_back(&s.image);
      targets.push_back(&s.regions);
    }
    net.zero_grad();
    const auto logits = net.forward(stack(images));
    auto loss = region_dice_loss(logits, stack(targets), opts.epsilon);
    check_finite(loss.value, it);
    net.backward(loss.gradient);
    autonet::sgd_step<float>(params, opts.lr, opts.momentum);
    report.loss_curve.push_back(loss.value);
  }
  report.train_dice = evaluate_seg_dice(net, data);
  if (validation && !validation->empty()) report.val_dice = evaluate_seg_dice(net, *validation);
  report.wall_clock_s = seconds_since(start);
  return net;
}

std::array<double, 3> evaluate_seg_dice(SegNet<float>& net, const std::vector<SegSample>& data) {
  std::array<double, 3> inter{0, 0, 0}, sizes{0, 0, 0};
  for (const auto& s : data) {
    autonet::TensorF x = s.image;
    auto shape = x.shape();
    shape.insert(shape.begin(), 1);
    x.reshape(shape);
    const auto regions = region_probs(autonet::softmax_channels(net.forward(x)));
    const std::size_t n = s.regions.size() / 3;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t i = 0; i < n; ++i) {
        const bool p = regions[r * n + i] > 0.5f, t = s.regions[r * n + i] > 0.5f;
        inter[r] += p && t;
        sizes[r] += static_cast<double>(p) + static_cast<double>(t);
      }
  }
  std::array<double, 3> out{};
  for (std::size_t r = 0; r < 3; ++r) out[r] = sizes[r] == 0 ? 1.0 : 2.0 * inter[r] / sizes[r];
  return out;
}

Detector<float> train_detector(const std::vector<DetectorSample>& data, const DetectorConfig& cfg,
                               const TrainOptions& opts, TrainReport& report) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "no detector training chips");
  const auto start = std::chrono::steady_clock::now();
  Detector<float> det(cfg, opts.seed);
  auto params = det.parameters();
  const std::size_t anchors = cfg.anchor_sizes.size();

  // Chips holding a positive anchor are drawn for half of every batch so the
  // rare tumour windows are not swamped by background.
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool any = std::any_of(data[i].targets.begin(), data[i].targets.end(),
                                 [](const AnchorTarget& t) { return t.label == ctxwin::ProposalLabel::positive; });
    (any ? pos : neg).push_back(i);
  }
  std::mt19937_64 rng(opts.seed ^ 0xDE7EC7ULL);
  auto draw = [&](const std::vector<std::size_t>& from) {
    return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
  };
  const std::size_t batch = std::max<std::size_t>(1, opts.batch);

  report = TrainReport{};
  report.kind = "detector";
  report.seed = opts.seed;
  autonet::TensorF grad;
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    det.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const bool want_pos = !pos.empty() && (neg.empty() || b % 2 == 0);
      const auto& s = data[draw(want_pos ? pos : neg)];
      const auto out = det.forward(s.image);
      const auto loss = detector_loss(out, s.targets, anchors, cfg.regression_weight, grad);
      check_finite(loss.value, it);
      for (auto& g : grad.data()) g /= static_cast<float>(batch);
      det.backward(grad);
      total += loss.value;
    }
    autonet::sgd_step<float>(params, opts.lr, opts.momentum);
    report.loss_curve.push_back(total / static_cast<double>(batch));
  }

  // Accuracy over an evenly spaced subset of at most 512 chips.
  const std::size_t step = std::max<std::size_t>(1, data.size() / 512);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); i += step) {
    const auto out = det.forward(data[i].image);
    const auto loss = detector_loss(out, data[i].targets, anchors, cfg.regression_weight, grad);
    correct += loss.correct;
    total += loss.total;
  }
  report.train_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  report.wall_clock_s = seconds_since(start);
  return det;
}

}  // namespace cascade::segarch
