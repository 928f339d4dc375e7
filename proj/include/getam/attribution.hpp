#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "getam/tensor.hpp"
#include "getam/vit.hpp"

namespace getam {

/// Nonnegative [h, w] map for one model class (0-based classifier index).
struct ClassAttentionMap {
  std::size_t class_id = 0;
  Tensor map;
  bool normalized = false;
};

/// Row 0, columns 1..n of a tap's attention and of its gradient.
struct ClsAttentionRow {
  std::size_t block = 0;
  std::size_t class_id = 0;
  std::vector<double> a_cls;
  std::vector<double> grad_cls;
};

/// Throws std::invalid_argument when the tap holds no gradient for class c.
ClsAttentionRow extract_cls_row(const AttentionTap& tap, std::size_t c);

/// ReLU(g * a) * ReLU(g), elementwise, reshaped to [h, w]. Never normalized.
ClassAttentionMap getam_block(const ClsAttentionRow& row, std::size_t h, std::size_t w);
/// Square-grid convenience overload.
ClassAttentionMap getam_block(const ClsAttentionRow& row);

enum class Fusion { kSum, kEwMul, kMatMul };
std::string_view fusion_name(Fusion f);
Fusion parse_fusion(std::string_view name);

/// Divides by the maximum; an all-zero map stays zero.
Tensor max_normalize(const Tensor& map);

/// Fuses block maps and max-normalizes the result.
///   sum    - elementwise sum (the published aggregation)
///   ewmul  - elementwise product
///   matmul - maps taken as [h, h] matrices, multiplied in block order with a
///            max-normalization after every product
ClassAttentionMap aggregate(std::span<const ClassAttentionMap> blocks, Fusion mode);

inline constexpr std::size_t kFusionHistogramBins = 20;
inline constexpr double kSuppressedThreshold = 0.1;

struct FusionStats {
  double suppressed_mass = 0.0;  // fraction of normalized values < 0.1
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
  std::array<std::size_t, kFusionHistogramBins> histogram{};
};

/// Statistics over already-normalized fused maps.
FusionStats distribution_stats(std::span<const ClassAttentionMap> fused);

/// Fuses each image's block maps with `mode` and summarizes the normalized
/// values. Requires at least 10 images.
FusionStats fusion_distribution_stats(std::span<const std::vector<ClassAttentionMap>> per_image,
                                      Fusion mode);

/// GETAM for class c from taps whose gradients were filled for c: per-block
/// maps fused by `mode`.
ClassAttentionMap getam_from_taps(std::span<const AttentionTap> taps, std::size_t c,
                                  Fusion mode = Fusion::kSum);

/// Per-block GETAM maps (unnormalized) for class c.
std::vector<ClassAttentionMap> getam_block_maps(std::span<const AttentionTap> taps,
                                                std::size_t c);

/// Grad-CAM on tokens: channel weights are the token-averaged gradients of the
/// final block's normalized input tokens; map = ReLU(weighted channel sum)
/// over patch tokens, max-normalized. `grad` must be d y^c / d features.
ClassAttentionMap gradcam_baseline(const Tensor& features, const Tensor& grad, std::size_t c);
ClassAttentionMap gradcam_baseline(const ForwardPass& pass, std::size_t c);

/// ReLU of the CAM probe map for class c, max-normalized.
ClassAttentionMap cam_baseline(const VisionTransformer& model, const ForwardPass& pass,
                               CamVariant variant, std::size_t c);

enum class AttributionMethod { kGetam, kGradCam, kCamAdd, kCamIgnore };
std::string_view method_name(AttributionMethod m);
AttributionMethod parse_method(std::string_view name);

/// One forward pass and, for gradient methods, one class-score backward per
/// requested class (gradients cleared in between). Returns one normalized map
/// per class, in the order given.
std::vector<ClassAttentionMap> attribute(const VisionTransformer& model, const Tensor& image,
                                         std::span<const std::size_t> classes,
                                         AttributionMethod method, Fusion fusion = Fusion::kSum);

}  // namespace getam
