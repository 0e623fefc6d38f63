#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cascade/autonet.hpp"
#include "cascade/ctxwin.hpp"
#include "cascade/volcore.hpp"

namespace cascade::segarch {

using autonet::ConvSpec;
using autonet::Parameter;
using autonet::Shape;
using autonet::Tensor;

// --------------------------------------------------------------------------
// Building blocks

/// Convolution + bias, optional group norm, optional ReLU.
template <class T>
struct ConvBlock {
  ConvSpec spec;
  bool relu = true;
  std::size_t groups = 0;
  Parameter<T> weight, bias, gamma, beta;

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients and returns the input gradient.
  Tensor<T> backward(const Tensor<T>& grad_out);

  std::vector<Parameter<T>*> parameters();
  std::size_t parameter_count() const;

 private:
  Tensor<T> input_, pre_;
  autonet::GroupNormCache<T> norm_;
};

template <class T>
ConvBlock<T> make_block(const std::string& name, const ConvSpec& spec, bool relu, std::size_t groups,
                        std::uint64_t seed, double init_gain = 2.0);

// --------------------------------------------------------------------------
// Segmentation network

struct SegNetConfig {
  std::size_t in_channels = 4;
  std::array<std::size_t, 4> channels{32, 64, 128, 256};
  std::array<std::size_t, 2> dilations{2, 3};
  std::size_t atrous_kernel = 3;
  std::size_t vanilla_kernel = 3;
  std::size_t convs_per_stage = 2;
  volcore::Dims patch{64, 64, 64};
  std::size_t classes = 4;
  std::size_t batch = 4;
  std::size_t norm_groups = 0;  // 0 disables group normalisation

  void validate() const;
  std::size_t feature_channels() const { return channels[0] + channels[1] + channels[2] + channels[3]; }
};

struct LayerDesc {
  std::string name;
  ConvSpec spec;
  bool relu;
};

/// Every convolution of the network in execution order.
std::vector<LayerDesc> segnet_layers(const SegNetConfig& cfg);
std::size_t segnet_parameter_count(const SegNetConfig& cfg);

/// Symbolic shape propagation; no tensors are allocated.
struct ShapeAudit {
  Shape input, full_res, half_res, quarter_a, quarter_b, features, logits;
};
ShapeAudit audit_shapes(const SegNetConfig& cfg, const Shape& input);

std::map<std::string, std::string> to_meta(const SegNetConfig& cfg);
SegNetConfig segnet_config_from_meta(const std::map<std::string, std::string>& meta);

template <class T>
class SegNet {
 public:
  SegNet(const SegNetConfig& cfg, std::uint64_t seed);

  const SegNetConfig& config() const { return cfg_; }

  /// (N, C, X, Y, Z) -> logits (N, classes, X, Y, Z). Caches activations.
  Tensor<T> forward(const Tensor<T>& input);
  /// The 480-channel concatenation from the last forward call.
  const Tensor<T>& features() const { return features_; }
  /// Accumulates parameter gradients; returns d(loss)/d(input).
  Tensor<T> backward(const Tensor<T>& grad_logits);

  std::vector<Parameter<T>*> parameters();
  void zero_grad();

  autonet::Checkpoint to_checkpoint() const;
  void load(const autonet::Checkpoint& ckpt);

  template <class U>
  SegNet<U> cast() const;

 private:
  template <class U>
  friend class SegNet;

  SegNetConfig cfg_;
  std::vector<ConvBlock<T>> stage1_, stage2_, path_a_, path_b_;
  ConvBlock<T> head_;

  Shape in_shape_, f1_shape_, f2_shape_;
  Tensor<T> features_;
  std::vector<std::uint32_t> pool1_arg_, pool2_arg_;
  Shape pool1_in_, pool2_in_, f3a_shape_, f3b_shape_;
};

/// (N, 4, ...) class probabilities ordered (bg, 1, 2, 4) -> (N, 3, ...) as
/// WT = p1 + p2 + p4, TC = p1 + p4, ET = p4.
template <class T>
Tensor<T> region_probs(const Tensor<T>& class_probs);
template <class T>
Tensor<T> region_probs_backward(const Tensor<T>& grad_regions);

/// Mean soft dice over the three region maps, with gradient wrt logits.
template <class T>
autonet::LossValue<T> region_dice_loss(const Tensor<T>& logits, const Tensor<T>& region_targets, double epsilon);

/// Thresholds region probabilities at 0.5 with ET > TC > WT override.
volcore::LabelVolume labels_from_regions(const autonet::TensorF& regions, const volcore::Spacing& spacing);

// --------------------------------------------------------------------------
// Detector

struct DetectorConfig {
  std::vector<volcore::Modality> modalities{volcore::Modality::flair};
  std::vector<std::size_t> trunk_channels{16, 16, 16, 16};
  std::vector<std::size_t> trunk_dilations{1, 2, 4, 8};
  std::vector<int> anchor_sizes{8, 12, 16, 24, 32};
  double score_floor = 0.7;
  double regression_weight = 1.0;

  /// Objectness plus (dx, dy, dw, dh).
  static constexpr std::size_t kOutputsPerAnchor = 5;
  /// Head maps per anchor: an objectness logit pair and four deltas.
  static constexpr std::size_t kMapsPerAnchor = 6;

  void validate() const;
  std::size_t in_channels() const { return modalities.size(); }
};

std::map<std::string, std::string> to_meta(const DetectorConfig& cfg);
DetectorConfig detector_config_from_meta(const std::map<std::string, std::string>& meta);

template <class T>
class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t seed, bool zero_head = false);

  const DetectorConfig& config() const { return cfg_; }

  /// (N, C, X, Y, 1) -> (N, anchors * 6, X, Y, 1).
  Tensor<T> forward(const Tensor<T>& input);
  Tensor<T> backward(const Tensor<T>& grad_out);

  std::vector<Parameter<T>*> parameters();
  void zero_grad();

  autonet::Checkpoint to_checkpoint() const;
  void load(const autonet::Checkpoint& ckpt);

  template <class U>
  Detector<U> cast() const;

 private:
  template <class U>
  friend class Detector;

  DetectorConfig cfg_;
  std::vector<ConvBlock<T>> trunk_;
  ConvBlock<T> head_;
};

/// Anchor centred on pixel (x, y).
ctxwin::Rect anchor_rect(int x, int y, int size);

/// One supervised anchor on a detector input chip.
struct AnchorTarget {
  int anchor = 0;
  int x = 0, y = 0;
  ctxwin::ProposalLabel label = ctxwin::ProposalLabel::negative;
  std::optional<ctxwin::BoxDelta> delta;
};

struct DetectorSample {
  autonet::TensorF image;  // (1, C, w, h, 1)
  std::vector<AnchorTarget> targets;
};

struct DetectorLoss {
  double value = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Softmax cross-entropy over targets plus robust (smooth-L1) regression on
/// positives. Writes d(loss)/d(head output) into `grad`.
template <class T>
DetectorLoss detector_loss(const Tensor<T>& head_out, const std::vector<AnchorTarget>& targets,
                           std::size_t anchors, double regression_weight, Tensor<T>& grad);

/// Scores and decodes every anchor of a head output map, best first.
std::vector<ctxwin::Proposal> decode_proposals(const autonet::TensorF& head_out, const DetectorConfig& cfg,
                                               std::size_t top_k, int slice_z = 0, int scale_id = 0);

// --------------------------------------------------------------------------
// Training

struct TrainOptions {
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t iterations = 300;
  std::size_t batch = 4;
  double epsilon = autonet::kDefaultDiceEpsilon;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::string kind;
  std::vector<double> loss_curve;
  std::array<double, 3> train_dice{0, 0, 0};
  std::optional<std::array<double, 3>> val_dice;
  double train_accuracy = 0.0;
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;
};

struct SegSample {
  autonet::TensorF image;    // (4, W, H, D)
  autonet::TensorF regions;  // (3, W, H, D) binary WT/TC/ET
};

SegNet<float> train_seg(const std::vector<SegSample>& data, const SegNetConfig& cfg, const TrainOptions& opts,
                        TrainReport& report, const std::vector<SegSample>* validation = nullptr);

Detector<float> train_detector(const std::vector<DetectorSample>& data, const DetectorConfig& cfg,
                               const TrainOptions& opts, TrainReport& report);

/// Hard dice per region of the thresholded network output over `data`.
std::array<double, 3> evaluate_seg_dice(SegNet<float>& net, const std::vector<SegSample>& data);

// --------------------------------------------------------------------------
// Cascade

struct CascadeConfig {
  DetectorConfig detector;
  SegNetConfig seg;
  std::vector<double> scales{0.5, 1.0, 2.0};
  ctxwin::Size2 window{32, 32};
  int stride = 4;
  int min_proposals = 2;
  int proposals_per_window = 300;
  double iou_threshold = 0.5;
  int f_offset = 6;
  int box_jitter = 3;
  std::size_t seg_samples_per_scan = 4;
  /// Tumour-free slices contribute detector chips only every n-th slice.
  int background_slice_stride = 1;
  /// Context margin cropped around every training window so that border
  /// anchors see real image content rather than zero padding.
  int chip_halo = 16;
};

/// The per-scale geometry and labels of one axial slice.
struct SliceWindows {
  int slice_z = 0;
  ctxwin::ScaleSpec scale;
  std::vector<ctxwin::Rect> gt;
  std::vector<ctxwin::Proposal> proposals;
  std::vector<ctxwin::Window> positives, negatives;
};

/// Pluggable proposal source used for negative-window mining.
using ProposalSource = std::function<std::vector<ctxwin::Proposal>(
    const autonet::TensorF& scaled_slice, const std::vector<ctxwin::Rect>& gt, const ctxwin::ScaleSpec& scale,
    int slice_z, std::uint64_t seed)>;

ProposalSource oracle_proposal_source(int count);
ProposalSource detector_proposal_source(Detector<float>& detector, int count);

/// Z-scored detector input for axial slice `z` resized by `factor`: (1, C, w, h, 1).
autonet::TensorF detector_slice(const volcore::MultiModalScan& scan, int z, const DetectorConfig& cfg,
                                const ctxwin::ScaleSpec& scale);

/// WT bounding rectangles of axial slice `z` (at most one, the slice union).
std::vector<ctxwin::Rect> slice_gt(const volcore::LabelVolume& labels, int z);

std::vector<SliceWindows> build_windows(const volcore::MultiModalScan& scan, const CascadeConfig& cfg,
                                        const ProposalSource& source, std::uint64_t seed);

std::vector<DetectorSample> build_detector_dataset(const std::vector<volcore::MultiModalScan>& scans,
                                                   const CascadeConfig& cfg, const ProposalSource& source,
                                                   std::uint64_t seed);

std::vector<SegSample> build_seg_dataset(const std::vector<volcore::MultiModalScan>& scans, const CascadeConfig& cfg,
                                         std::uint64_t seed);

/// Input tensor for the segmentation network from an explicit crop box.
autonet::TensorF seg_input(const volcore::MultiModalScan& scan, const volcore::Box3& box, const CascadeConfig& cfg);

struct InferenceInfo {
  bool detected = false;
  volcore::Box3 box;    // detected box before growth
  volcore::Box3 grown;  // box actually segmented
};

std::optional<volcore::Box3> detect_box(const volcore::MultiModalScan& scan, Detector<float>& detector,
                                        const CascadeConfig& cfg);

volcore::LabelVolume segment_box(const volcore::MultiModalScan& scan, const volcore::Box3& box, SegNet<float>& seg,
                                 const CascadeConfig& cfg, volcore::Box3* grown_out = nullptr);

volcore::LabelVolume infer_cascade(const volcore::MultiModalScan& scan, Detector<float>& detector,
                                   SegNet<float>& seg, const CascadeConfig& cfg, InferenceInfo* info = nullptr);

}  // namespace cascade::segarch
