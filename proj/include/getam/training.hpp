#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "getam/attribution.hpp"
#include "getam/data_eval.hpp"
#include "getam/label_completion.hpp"
#include "getam/vit.hpp"

namespace getam {

struct TrainConfig {
  std::size_t total_epochs = 10;
  std::size_t phase1_epochs = 6;
  std::size_t batch_size = 8;  // phase 1 only; phase 2 steps per image
  double lr = 0.02;
  double momentum = 0.9;
  double sal_weight = 0.1;
  std::uint64_t seed = 0;
  MiningConfig mining;
  std::size_t probe_epochs = 30;
  double probe_lr = 0.5;

  void validate() const;
};

struct LossReport {
  std::size_t epoch = 0;  // 1-based
  std::size_t iter = 0;   // optimizer step within the epoch, 0-based
  double l_cls = 0.0;
  double l_seg = 0.0;
  double l_sal = 0.0;  // unweighted BCE; total adds sal_weight * l_sal
  double total = 0.0;
  std::optional<double> pseudo_miou;
};

/// Mean BCE over the C logits against the 0/1 vector of 1-based `labels`.
Var l_cls(const Prediction& pred, std::span<const int> labels);
/// Pixel softmax cross-entropy of [(C+1), H, W] logits; 255 pixels ignored.
Var l_seg(const Var& seg_logits, const LabelImage& pseudo);
/// weight * BCE(sigmoid(background logit), 1 - S), mean over pixels.
Var l_sal(const Var& seg_logits, const LabelImage& saliency, double weight);

/// SGD with momentum over a ParameterSet; v = mu v + g, p -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), mu_(momentum) {}
  /// `grads` is parallel to the parameter set; empty tensors are skipped.
  void step(ParameterSet& params, const std::vector<Tensor>& grads);

 private:
  double lr_, mu_;
  std::vector<Tensor> velocity_;
};

/// Parameter gradients of a pass after backward(); zero-sized when absent.
std::vector<Tensor> collect_gradients(const Tape& tape, const ForwardPass& pass);

/// Stacks per-class maps into [C, g, g] in classifier order; classes without
/// a map stay zero.
Tensor stack_class_maps(std::span<const ClassAttentionMap> maps, std::size_t num_classes);

/// Attribution for the image's labels, then label completion.
LabelImage pseudo_label(const VisionTransformer& model, const Sample& sample,
                        AttributionMethod method, Fusion fusion, const MiningConfig& mining);

struct StepResult {
  LossReport loss;
  LabelImage pseudo;
  std::vector<ClassAttentionMap> maps;  // GETAM per present label, sum fusion
  std::uint64_t hash_before = 0;        // parameters at entry
  std::uint64_t hash_after_attribution = 0;
  std::uint64_t hash_after_update = 0;
  bool segmentation_skipped = false;    // empty label set
};

/// One phase-2 iteration: attribution backward per present class, label
/// completion, then a fresh forward and a single supervised update.
StepResult double_backward_step(VisionTransformer& model, const Sample& sample, SgdMomentum& opt,
                                const TrainConfig& cfg);

/// Phase-1 step on a minibatch: mean l_cls, one update.
LossReport classification_step(VisionTransformer& model, std::span<const Sample* const> batch,
                               SgdMomentum& opt);

struct TrainResult {
  std::vector<LossReport> log;
  std::vector<double> epoch_mean_l_cls;
};

using EpochCallback = std::function<void(std::size_t epoch, const TrainResult&)>;

/// Two-phase schedule; writes `metrics.csv` and the checkpoint under
/// `out_dir` when it is non-empty. CAM probes are fitted at the end.
TrainResult run_training(VisionTransformer& model, const std::vector<Sample>& train,
                         const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                         const EpochCallback& on_epoch = {});

std::string format_metrics_csv(const std::vector<LossReport>& log);

/// Fits both GAP probe heads on frozen backbone features with BCE.
void train_cam_probes(VisionTransformer& model, const std::vector<Sample>& train,
                      std::size_t epochs, double lr, std::uint64_t seed);

struct ClassificationStats {
  double label_accuracy = 0.0;  // over all (image, class) decisions at logit > 0
  double exact_match = 0.0;     // images with every decision right
};
ClassificationStats classification_accuracy(const VisionTransformer& model,
                                            const std::vector<Sample>& samples);

/// Dataset-level pseudo-label quality against ground truth.
QualityReport evaluate_pseudo_labels(const VisionTransformer& model,
                                     const std::vector<Sample>& samples, AttributionMethod method,
                                     Fusion fusion, const MiningConfig& mining,
                                     bool count_unknown_as_error = false);

/// Argmax of the segmentation branch.
LabelImage predict_segmentation(const VisionTransformer& model, const Tensor& image);

}  // namespace getam
