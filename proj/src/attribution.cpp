#include "getam/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace getam {

ClsAttentionRow extract_cls_row(const AttentionTap& tap, std::size_t c) {
  if (!tap.grad) {
    throw std::invalid_argument("extract_cls_row: block " + std::to_string(tap.block) +
                                " has no attention gradient");
  }
  if (tap.class_id != c) {
    throw std::invalid_argument("extract_cls_row: block " + std::to_string(tap.block) +
                                " holds the gradient of class " +
                                (tap.class_id ? std::to_string(*tap.class_id) : "?") +
                                ", requested " + std::to_string(c));
  }
  const Tensor& A = tap.attention;
  if (A.rank() != 2 || A.dim(0) != A.dim(1) || A.dim(0) < 2) {
    throw DimensionError("extract_cls_row: attention must be square with >= 2 tokens, got " +
                         shape_to_string(A.shape()));
  }
  const std::size_t tokens = A.dim(1);
  ClsAttentionRow row;
  row.block = tap.block;
  row.class_id = c;
  row.a_cls.assign(A.data().begin() + 1, A.data().begin() + tokens);
  row.grad_cls.assign(tap.grad->data().begin() + 1, tap.grad->data().begin() + tokens);
  return row;
}

ClassAttentionMap getam_block(const ClsAttentionRow& row, std::size_t h, std::size_t w) {
  if (row.a_cls.size() != row.grad_cls.size() || row.a_cls.size() != h * w) {
    throw DimensionError("getam_block: rows of length " + std::to_string(row.a_cls.size()) + "/" +
                         std::to_string(row.grad_cls.size()) + " do not fill a " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  Tensor map({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const double g = row.grad_cls[i];
    const double coupled = g * row.a_cls[i];
    map[i] = (coupled > 0.0 ? coupled : 0.0) * (g > 0.0 ? g : 0.0);
  }
  return {row.class_id, std::move(map), false};
}

ClassAttentionMap getam_block(const ClsAttentionRow& row) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(row.a_cls.size())));
  if (side * side != row.a_cls.size()) {
    throw DimensionError("getam_block: " + std::to_string(row.a_cls.size()) +
                         " patches do not form a square grid");
  }
  return getam_block(row, side, side);
}

std::string_view fusion_name(Fusion f) {
  switch (f) {
    case Fusion::kSum: return "sum";
    case Fusion::kEwMul: return "ewmul";
    case Fusion::kMatMul: return "matmul";
  }
  return "?";
}

Fusion parse_fusion(std::string_view name) {
  if (name == "sum") return Fusion::kSum;
  if (name == "ewmul") return Fusion::kEwMul;
  if (name == "matmul") return Fusion::kMatMul;
  throw ValidationError("unknown fusion '" + std::string(name) + "' (expected sum|ewmul|matmul)");
}

Tensor max_normalize(const Tensor& map) {
  Tensor out = map;
  if (out.empty()) return out;
  const double mx = out.max();
  if (mx > 0.0) {
    for (auto& v : out.data()) v /= mx;
  }
  return out;
}

namespace {

Tensor square_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0);
  Tensor c({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double av = a[i * n + k];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[k * n + j];
    }
  return c;
}

}  // namespace

ClassAttentionMap aggregate(std::span<const ClassAttentionMap> blocks, Fusion mode) {
  if (blocks.empty()) throw std::invalid_argument("aggregate: no block maps");
  const Shape& shape = blocks.front().map.shape();
  for (const auto& b : blocks) {
    if (b.map.shape() != shape) {
      throw DimensionError("aggregate: shape mismatch " + shape_to_string(shape) + " vs " +
                           shape_to_string(b.map.shape()));
    }
  }
  if (mode == Fusion::kMatMul && (shape.size() != 2 || shape[0] != shape[1])) {
    throw DimensionError("aggregate: matmul fusion needs square maps, got " +
                         shape_to_string(shape));
  }
  Tensor acc = blocks.front().map;
  for (std::size_t b = 1; b < blocks.size(); ++b) {
    const Tensor& m = blocks[b].map;
    switch (mode) {
      case Fusion::kSum:
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
        break;
      case Fusion::kEwMul:
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= m[i];
        break;
      case Fusion::kMatMul:
        acc = max_normalize(square_matmul(acc, m));
        break;
    }
  }
  return {blocks.front().class_id, max_normalize(acc), true};
}

FusionStats distribution_stats(std::span<const ClassAttentionMap> fused) {
  FusionStats st;
  double sum = 0.0, sq = 0.0;
  for (const auto& m : fused) {
    for (double v : m.map.data()) {
      ++st.count;
      sum += v;
      sq += v * v;
      if (v < kSuppressedThreshold) st.suppressed_mass += 1.0;
      auto bin = static_cast<std::size_t>(std::floor(v * kFusionHistogramBins));
      st.histogram[std::min(bin, kFusionHistogramBins - 1)] += 1;
    }
  }
  if (st.count == 0) return st;
  const double n = static_cast<double>(st.count);
  st.suppressed_mass /= n;
  st.mean = sum / n;
  st.stddev = std::sqrt(std::max(0.0, sq / n - st.mean * st.mean));
  return st;
}

FusionStats fusion_distribution_stats(std::span<const std::vector<ClassAttentionMap>> per_image,
                                      Fusion mode) {
  if (per_image.size() < 10) {
    throw std::invalid_argument("fusion_distribution_stats: need at least 10 images, got " +
                                std::to_string(per_image.size()));
  }
  std::vector<ClassAttentionMap> fused;
  fused.reserve(per_image.size());
  for (const auto& blocks : per_image) fused.push_back(aggregate(blocks, mode));
  return distribution_stats(fused);
}

std::vector<ClassAttentionMap> getam_block_maps(std::span<const AttentionTap> taps,
                                                std::size_t c) {
  std::vector<ClassAttentionMap> maps;
  maps.reserve(taps.size());
  for (const auto& tap : taps) maps.push_back(getam_block(extract_cls_row(tap, c)));
  return maps;
}

ClassAttentionMap getam_from_taps(std::span<const AttentionTap> taps, std::size_t c, Fusion mode) {
  const auto maps = getam_block_maps(taps, c);
  return aggregate(maps, mode);
}

ClassAttentionMap gradcam_baseline(const Tensor& features, const Tensor& grad, std::size_t c) {
  if (features.shape() != grad.shape() || features.rank() != 2 || features.dim(0) < 2) {
    throw DimensionError("gradcam_baseline: features " + shape_to_string(features.shape()) +
                         " vs gradient " + shape_to_string(grad.shape()));
  }
  const std::size_t tokens = features.dim(0), d = features.dim(1), n = tokens - 1;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(n)));
  if (side * side != n) throw DimensionError("gradcam_baseline: patches do not form a square grid");
  std::vector<double> weights(d, 0.0);
  for (std::size_t i = 1; i < tokens; ++i)
    for (std::size_t k = 0; k < d; ++k) weights[k] += grad.at(i, k);
  for (auto& w : weights) w /= static_cast<double>(n);
  Tensor map({side, side});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += weights[k] * features.at(i + 1, k);
    map[i] = acc > 0.0 ? acc : 0.0;
  }
  return {c, max_normalize(map), true};
}

ClassAttentionMap gradcam_baseline(const ForwardPass& pass, std::size_t c) {
  if (!pass.gradcam_grad || pass.taps.empty() || pass.taps.back().class_id != c) {
    throw std::invalid_argument("gradcam_baseline: no feature gradient for class " +
                                std::to_string(c));
  }
  return gradcam_baseline(pass.gradcam_features.value(), *pass.gradcam_grad, c);
}

ClassAttentionMap cam_baseline(const VisionTransformer& model, const ForwardPass& pass,
                               CamVariant variant, std::size_t c) {
  const Tensor cams = model.cam_head_variants(pass, variant);
  const std::size_t g = cams.dim(1);
  if (c >= cams.dim(0)) throw std::out_of_range("cam_baseline: class " + std::to_string(c));
  Tensor map({g, g});
  for (std::size_t i = 0; i < g * g; ++i) map[i] = std::max(0.0, cams[c * g * g + i]);
  return {c, max_normalize(map), true};
}

std::string_view method_name(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::kGetam: return "getam";
    case AttributionMethod::kGradCam: return "gradcam";
    case AttributionMethod::kCamAdd: return "cam-add";
    case AttributionMethod::kCamIgnore: return "cam-ignore";
  }
  return "?";
}

AttributionMethod parse_method(std::string_view name) {
  if (name == "getam") return AttributionMethod::kGetam;
  if (name == "gradcam") return AttributionMethod::kGradCam;
  if (name == "cam-add") return AttributionMethod::kCamAdd;
  if (name == "cam-ignore") return AttributionMethod::kCamIgnore;
  throw ValidationError("unknown attribution method '" + std::string(name) +
                        "' (expected getam|gradcam|cam-add|cam-ignore)");
}

std::vector<ClassAttentionMap> attribute(const VisionTransformer& model, const Tensor& image,
                                         std::span<const std::size_t> classes,
                                         AttributionMethod method, Fusion fusion) {
  Tape tape;
  ForwardPass pass = model.forward_with_taps(tape, image);
  std::vector<ClassAttentionMap> maps;
  maps.reserve(classes.size());
  for (std::size_t c : classes) {
    switch (method) {
      case AttributionMethod::kGetam:
        backprop_class_score(tape, pass, c);
        maps.push_back(getam_from_taps(pass.taps, c, fusion));
        break;
      case AttributionMethod::kGradCam:
        backprop_class_score(tape, pass, c);
        maps.push_back(gradcam_baseline(pass, c));
        break;
      case AttributionMethod::kCamAdd:
        maps.push_back(cam_baseline(model, pass, CamVariant::kAdd, c));
        break;
      case AttributionMethod::kCamIgnore:
        maps.push_back(cam_baseline(model, pass, CamVariant::kIgnore, c));
        break;
    }
  }
  return maps;
}

}  // namespace getam
