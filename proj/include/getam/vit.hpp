#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "getam/autodiff.hpp"
#include "getam/tensor.hpp"

namespace getam {

// Pixels enter the patch embedding as (x - kPixelMean) / kPixelStd.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t num_classes = 3;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t mlp_dim() const { return 4 * dim; }

  /// Throws ValidationError on inconsistent sizes.
  void validate() const;
};

/// Named model parameters in a fixed registration order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& operator[](std::string_view name);
  const Tensor& operator[](std::string_view name) const;

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  std::size_t index(std::string_view name) const;
  std::size_t total_elements() const;

  /// FNV-1a over names, shapes and raw bytes of every parameter.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Parameters registered as leaves on one tape.
class BoundParameters {
 public:
  BoundParameters() = default;
  BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad);

  const Var& operator[](std::string_view name) const;
  const Var& at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

 private:
  const ParameterSet* params_ = nullptr;
  std::vector<Var> vars_;
};

/// Head-averaged attention of one block, captured as a retained tape node.
struct AttentionTap {
  std::size_t block = 0;
  Var node;
  Tensor attention;             // [(n+1), (n+1)]
  std::optional<Tensor> grad;   // d y^c / d attention for class_id
  std::optional<std::size_t> class_id;
};

struct TokenFeatures {
  Var tokens;    // O: [(n+1), d]
  Var cls;       // O_CLS: row 0
  Var patches;   // O_patch: rows 1..n
};

struct Prediction {
  Var logits;  // [1, C]
  std::size_t num_classes() const { return logits.value().size(); }
  double score(std::size_t c) const;
  /// y^c as a scalar node.
  Var score_node(std::size_t c) const;
};

/// Replaces the attention tap of one block by a fixed matrix. Every head then
/// attends with head_attention + (value - head_average), so perturbing the
/// value moves all heads by the same amount while the rest of the forward pass
/// stays untouched.
struct TapOverride {
  std::size_t block = 0;
  Tensor value;
};

struct ForwardOptions {
  bool params_require_grad = true;
  bool image_requires_grad = false;
  std::optional<TapOverride> tap_override;
};

struct ForwardPass {
  Prediction prediction;
  TokenFeatures features;
  std::vector<AttentionTap> taps;
  Var image;
  BoundParameters params;
  /// Normalized input tokens of the final block (retained; Grad-CAM target).
  Var gradcam_features;
  std::optional<Tensor> gradcam_grad;
};

enum class CamVariant { kAdd, kIgnore };
std::string_view cam_variant_name(CamVariant v);
CamVariant parse_cam_variant(std::string_view name);

/// Small ViT classifier with a segmentation branch and GAP probe heads.
///
/// Layout: patch embedding + learned [class] token + learned positional
/// embedding, `depth` pre-norm blocks (multi-head attention, GELU MLP of width
/// 4d), final layer norm, linear classifier on O_CLS.
class VisionTransformer {
 public:
  explicit VisionTransformer(ModelConfig cfg);
  VisionTransformer(ModelConfig cfg, ParameterSet params);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// image [3, H, W] -> tokens [(n+1), d]; row 0 is the [class] token.
  Var patch_embed(const BoundParameters& p, const Var& image) const;

  ForwardPass forward_with_taps(Tape& tape, const Tensor& image,
                                const ForwardOptions& opts = {}) const;

  /// Per-token linear head to C+1 logits, bilinearly upsampled: [(C+1), H, W].
  /// Channel 0 is background.
  Var segmentation_head(const ForwardPass& pass) const;

  /// Logits of the GAP probe classifier for a CAM variant. Features are
  /// detached so the probe never moves the backbone.
  Var cam_probe_logits(const ForwardPass& pass, CamVariant variant) const;

  /// Raw class activation maps theta_c . f(x, y) from the probe weights:
  /// [C, grid, grid]. Not clamped.
  Tensor cam_head_variants(const ForwardPass& pass, CamVariant variant) const;

  void save(const std::filesystem::path& dir) const;
  static VisionTransformer load(const std::filesystem::path& dir);

 private:
  Var block_forward(Tape& tape, const BoundParameters& p, std::size_t block, const Var& x,
                    const ForwardOptions& opts, ForwardPass& pass) const;

  ModelConfig cfg_;
  ParameterSet params_;
  Tensor upsample_;  // [n, H*W]
};

/// Back-propagates y^c and stores d y^c / dA in every tap (and the Grad-CAM
/// feature gradient). Gradients on the tape are cleared before and after;
/// model parameters are never touched.
void backprop_class_score(Tape& tape, ForwardPass& pass, std::size_t c);

/// Registration order of parameter names for a config.
ParameterSet init_parameters(const ModelConfig& cfg);

/// Adds N(0, stddev) noise to every parameter entry. Gradient checks use this
/// to move away from the zero-initialized heads.
void randomize_parameters(ParameterSet& params, std::uint64_t seed, double stddev);

std::string format_manifest(const ModelConfig& cfg);
ModelConfig parse_manifest(std::string_view text);

}  // namespace getam
