#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "getam/label_image.hpp"
#include "getam/tensor.hpp"

namespace getam {

struct MiningConfig {
  double alpha = 0.9;  // quantile level in (0, 1]; 1 disables mining
  double gamma = 4.0;  // background exponent, > 1
  bool pamr = true;
  int pamr_iterations = 10;

  /// Throws ValidationError on out-of-range values.
  void validate() const;
};

/// Foreground maps [C, h, w] (channel k is label k+1), each max-normalized,
/// absent classes zeroed; background [h, w].
struct ActivationStack {
  Tensor fg;
  Tensor bg;
  double gamma = 4.0;
  std::vector<int> present;  // 1-based labels

  std::size_t num_classes() const { return fg.dim(0); }
  /// [(C+1), h, w] with background at channel 0.
  Tensor stacked() const;
};

/// (1 - max_c fg_c)^gamma per pixel. Throws ValidationError for gamma <= 1.
Tensor background_channel(const Tensor& fg, double gamma);

/// Normalizes each present channel of `maps` to [0,1], zeroes the others and
/// appends the background channel. Labels outside 1..C throw ValidationError.
ActivationStack build_activation_stack(const Tensor& maps, std::span<const int> present,
                                       double gamma);

/// Throws ValidationError when the map holds anything other than 0 and 1.
void check_binary(const LabelImage& saliency);

/// Saliency-constrained masking: salient pixels take the argmax label (255 if background wins,
/// ties go to background), non-salient pixels are background.
LabelImage saliency_constrained_masking(const ActivationStack& m, const LabelImage& saliency);

/// alpha-quantile of every channel, linear interpolation at alpha*(N-1).
std::vector<double> mining_thresholds(const Tensor& fg, double alpha);

/// Number of classes strictly above their threshold at each pixel.
std::vector<int> conflict_counts(const Tensor& fg, std::span<const double> thresholds);

/// High-activation mining on non-salient pixels: one class above threshold relabels the pixel,
/// several mark it 255, none leaves it alone.
LabelImage high_activation_mining(const LabelImage& p, const Tensor& fg,
                                  const LabelImage& saliency, double alpha);

/// One affinity propagation step on maps [K, h, w] with an image [3, h, w].
Tensor pamr_step(const Tensor& maps, const Tensor& image);

/// `iterations` propagation steps, then per-channel max-normalization.
/// Zero iterations returns the input unchanged.
Tensor pamr_refine(const Tensor& maps, const Tensor& image, int iterations);

/// Full pipeline for one image. `maps` is [C, h, w] in classifier order and
/// is bilinearly resized to the saliency resolution when needed; `image` is
/// [3, H, W] matching the saliency map. `present` holds 1-based labels.
LabelImage complete_labels(const Tensor& maps, std::span<const int> present,
                           const LabelImage& saliency, const Tensor& image,
                           const MiningConfig& cfg);

struct CompletionStages {
  ActivationStack stack;  // after resizing and PAMR
  LabelImage masked;      // saliency-constrained masking, before mining
  LabelImage completed;   // after mining
};

/// Same pipeline as complete_labels, keeping the intermediate results.
CompletionStages complete_labels_staged(const Tensor& maps, std::span<const int> present,
                                        const LabelImage& saliency, const Tensor& image,
                                        const MiningConfig& cfg);

}  // namespace getam
