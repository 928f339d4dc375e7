#include "getam/vit.hpp"

#include <cmath>
#include <cstring>

#include "getam/config.hpp"
#include "getam/fileio.hpp"
#include "getam/resample.hpp"
#include "getam/rng.hpp"

namespace getam {

namespace fs = std::filesystem;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (depth < 1) fail("depth must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
}

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw std::logic_error("duplicate parameter " + name);
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParameterSet::index(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
  return it->second;
}

Tensor& ParameterSet::operator[](std::string_view name) { return values_[index(name)]; }
const Tensor& ParameterSet::operator[](std::string_view name) const { return values_[index(name)]; }

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::uint64_t ParameterSet::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (std::size_t i = 0; i < values_.size(); ++i) {
    mix(names_[i].data(), names_[i].size());
    for (auto d : values_[i].shape()) mix(&d, sizeof d);
    mix(values_[i].data().data(), values_[i].size() * sizeof(double));
  }
  return h;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad)
    : params_(&params) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars_.push_back(tape.leaf(params.value(i), requires_grad));
  }
}

const Var& BoundParameters::operator[](std::string_view name) const {
  return vars_[params_->index(name)];
}

double Prediction::score(std::size_t c) const { return logits.value()[c]; }

Var Prediction::score_node(std::size_t c) const {
  if (c >= num_classes()) {
    throw std::out_of_range("class index " + std::to_string(c) + " out of range for " +
                            std::to_string(num_classes()) + " classes");
  }
  return select(logits, c);
}

std::string_view cam_variant_name(CamVariant v) { return v == CamVariant::kAdd ? "add" : "ignore"; }

CamVariant parse_cam_variant(std::string_view name) {
  if (name == "add") return CamVariant::kAdd;
  if (name == "ignore") return CamVariant::kIgnore;
  throw ValidationError("unknown CAM variant '" + std::string(name) + "' (expected add|ignore)");
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

std::string block_key(std::size_t b, std::string_view rest) {
  return "blocks." + std::to_string(b) + "." + std::string(rest);
}

std::string head_key(std::size_t b, char proj, std::size_t h, std::string_view what) {
  return block_key(b, std::string("attn.") + proj + "." + std::to_string(h) + "." +
                          std::string(what));
}

}  // namespace

ParameterSet init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.dim, dh = cfg.head_dim(), C = cfg.num_classes;
  auto normal = [&rng](Shape shape, double std = 0.02) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.truncated_normal(std);
    return t;
  };
  ParameterSet p;
  // Weight matrices use LeCun-normal fan-in scaling; with std 0.02 at d = 32
  // the image-dependent part of O_CLS is ~0.2% of its energy and SGD sits on
  // a long plateau. Tokens and embeddings keep 0.02.
  auto fan_in = [&normal](Shape shape) {
    const double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    return normal(std::move(shape), std);
  };
  p.add("patch_embed.weight", fan_in({cfg.patch_dim(), d}));
  p.add("patch_embed.bias", Tensor({d}));
  p.add("cls_token", normal({1, d}));
  p.add("pos_embed", normal({cfg.num_tokens(), d}));
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    p.add(block_key(b, "norm1.weight"), Tensor::ones({d}));
    p.add(block_key(b, "norm1.bias"), Tensor({d}));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      p.add(head_key(b, 'q', h, "weight"), fan_in({d, dh}));
      p.add(head_key(b, 'q', h, "bias"), Tensor({dh}));
      p.add(head_key(b, 'k', h, "weight"), fan_in({d, dh}));
      p.add(head_key(b, 'v', h, "weight"), fan_in({d, dh}));
      p.add(head_key(b, 'v', h, "bias"), Tensor({dh}));
    }
    p.add(block_key(b, "attn.proj.weight"), fan_in({d, d}));
    p.add(block_key(b, "attn.proj.bias"), Tensor({d}));
    p.add(block_key(b, "norm2.weight"), Tensor::ones({d}));
    p.add(block_key(b, "norm2.bias"), Tensor({d}));
    p.add(block_key(b, "mlp.fc1.weight"), fan_in({d, cfg.mlp_dim()}));
    p.add(block_key(b, "mlp.fc1.bias"), Tensor({cfg.mlp_dim()}));
    p.add(block_key(b, "mlp.fc2.weight"), fan_in({cfg.mlp_dim(), d}));
    p.add(block_key(b, "mlp.fc2.bias"), Tensor({d}));
  }
  p.add("norm.weight", Tensor::ones({d}));
  p.add("norm.bias", Tensor({d}));
  // Classifier starts at zero, so an untrained model has y^c constant in A.
  p.add("head.weight", Tensor({d, C}));
  p.add("head.bias", Tensor({C}));
  p.add("seg_head.weight", normal({d, C + 1}));
  p.add("seg_head.bias", Tensor({C + 1}));
  p.add("cam_add.weight", Tensor({d, C}));
  p.add("cam_add.bias", Tensor({C}));
  p.add("cam_ignore.weight", Tensor({d, C}));
  p.add("cam_ignore.bias", Tensor({C}));
  return p;
}

void randomize_parameters(ParameterSet& params, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& v : params.value(i).data()) v += stddev * rng.normal();
}

// ---------------------------------------------------------------------------
// VisionTransformer

VisionTransformer::VisionTransformer(ModelConfig cfg)
    : VisionTransformer(cfg, init_parameters(cfg)) {}

VisionTransformer::VisionTransformer(ModelConfig cfg, ParameterSet params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  const ParameterSet reference = init_parameters(cfg_);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& name = reference.name(i);
    if (!params_.contains(name)) throw ValidationError("missing parameter " + name);
    if (params_[name].shape() != reference.value(i).shape()) {
      throw ValidationError("parameter " + name + " has shape " +
                            shape_to_string(params_[name].shape()) + ", expected " +
                            shape_to_string(reference.value(i).shape()));
    }
  }
  upsample_ = bilinear_upsample_matrix(cfg_.grid(), cfg_.grid(), cfg_.image_size, cfg_.image_size);
}

Var VisionTransformer::patch_embed(const BoundParameters& p, const Var& image) const {
  const std::size_t S = cfg_.image_size, P = cfg_.patch_size, g = cfg_.grid();
  if (image.shape() != Shape{3, S, S}) {
    throw DimensionError("patch_embed: expected image " + shape_to_string({3, S, S}) + ", got " +
                         shape_to_string(image.shape()));
  }
  // Patch k = (row-major grid cell), features ordered (channel, dy, dx).
  std::vector<std::size_t> idx;
  idx.reserve(cfg_.num_patches() * cfg_.patch_dim());
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t dy = 0; dy < P; ++dy)
          for (std::size_t dx = 0; dx < P; ++dx)
            idx.push_back((ch * S + gy * P + dy) * S + gx * P + dx);
  Var patches = gather(image, std::move(idx), {cfg_.num_patches(), cfg_.patch_dim()});
  // fixed input normalization: [0,1] pixels -> roughly zero mean, unit scale
  patches = scale(add(patches, -kPixelMean), 1.0 / kPixelStd);
  Var embedded = linear(patches, p["patch_embed.weight"], p["patch_embed.bias"]);
  const Var rows[] = {p["cls_token"], embedded};
  return add(concat_rows(rows), p["pos_embed"]);
}

Var VisionTransformer::block_forward(Tape& tape, const BoundParameters& p, std::size_t b,
                                     const Var& x, const ForwardOptions& opts,
                                     ForwardPass& pass) const {
  Var xn = layer_norm(x, p[block_key(b, "norm1.weight")], p[block_key(b, "norm1.bias")]);
  if (b + 1 == cfg_.depth) {
    tape.retain(xn);
    pass.gradcam_features = xn;
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));
  std::vector<Var> attn, values;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    Var q = linear(xn, p[head_key(b, 'q', h, "weight")], p[head_key(b, 'q', h, "bias")]);
    Var k = matmul(xn, p[head_key(b, 'k', h, "weight")]);
    values.push_back(linear(xn, p[head_key(b, 'v', h, "weight")], p[head_key(b, 'v', h, "bias")]));
    attn.push_back(softmax_rows(scale(matmul(q, transpose(k)), inv_scale)));
  }
  auto head_mean = [&]() {
    Var acc = attn[0];
    for (std::size_t h = 1; h < attn.size(); ++h) acc = add(acc, attn[h]);
    return scale(acc, 1.0 / static_cast<double>(attn.size()));
  };
  // The tap is the head average. Heads attend with tap + (A_h - mean(A)), where
  // the second mean is a separate node: the value equals A_h, parameter
  // gradients are unchanged, and d y / d tap is the response to shifting all
  // heads together.
  Var tap;
  if (opts.tap_override && opts.tap_override->block == b) {
    if (opts.tap_override->value.shape() != attn[0].shape()) {
      throw DimensionError("tap override for block " + std::to_string(b) + " has shape " +
                           shape_to_string(opts.tap_override->value.shape()) + ", expected " +
                           shape_to_string(attn[0].shape()));
    }
    tap = tape.leaf(opts.tap_override->value, true);
  } else {
    tap = head_mean();
  }
  tape.retain(tap);
  pass.taps.push_back(AttentionTap{b, tap, tap.value(), std::nullopt, std::nullopt});
  const Var centre = head_mean();
  std::vector<Var> outs;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    Var used = add(tap, sub(attn[h], centre));
    outs.push_back(matmul(used, values[h]));
  }
  Var mha = linear(concat_cols(outs), p[block_key(b, "attn.proj.weight")],
                   p[block_key(b, "attn.proj.bias")]);
  Var x1 = add(x, mha);
  Var x1n = layer_norm(x1, p[block_key(b, "norm2.weight")], p[block_key(b, "norm2.bias")]);
  Var hidden = gelu(linear(x1n, p[block_key(b, "mlp.fc1.weight")], p[block_key(b, "mlp.fc1.bias")]));
  Var mlp = linear(hidden, p[block_key(b, "mlp.fc2.weight")], p[block_key(b, "mlp.fc2.bias")]);
  return add(x1, mlp);
}

ForwardPass VisionTransformer::forward_with_taps(Tape& tape, const Tensor& image,
                                                 const ForwardOptions& opts) const {
  if (opts.tap_override && opts.tap_override->block >= cfg_.depth) {
    throw std::out_of_range("tap override block " + std::to_string(opts.tap_override->block) +
                            " out of range");
  }
  ForwardPass pass;
  pass.params = BoundParameters(tape, params_, opts.params_require_grad);
  pass.image = tape.leaf(image, opts.image_requires_grad);
  Var x = patch_embed(pass.params, pass.image);
  for (std::size_t b = 0; b < cfg_.depth; ++b) x = block_forward(tape, pass.params, b, x, opts, pass);
  const auto& p = pass.params;
  Var o = layer_norm(x, p["norm.weight"], p["norm.bias"]);
  pass.features.tokens = o;
  pass.features.cls = slice_rows(o, 0, 1);
  pass.features.patches = slice_rows(o, 1, cfg_.num_tokens());
  pass.prediction.logits = linear(pass.features.cls, p["head.weight"], p["head.bias"]);
  return pass;
}

Var VisionTransformer::segmentation_head(const ForwardPass& pass) const {
  const auto& p = pass.params;
  Var token_logits = linear(pass.features.patches, p["seg_head.weight"], p["seg_head.bias"]);
  Var grid_logits = transpose(token_logits);  // [(C+1), n]
  Var up = matmul(grid_logits, pass.image.tape().constant(upsample_));
  return reshape(up, {cfg_.num_classes + 1, cfg_.image_size, cfg_.image_size});
}

Var VisionTransformer::cam_probe_logits(const ForwardPass& pass, CamVariant variant) const {
  const auto& p = pass.params;
  Var pooled = mean_rows(detach(pass.features.patches));
  const char* prefix = "cam_ignore";
  if (variant == CamVariant::kAdd) {
    pooled = add(pooled, detach(pass.features.cls));
    prefix = "cam_add";
  }
  return linear(pooled, p[std::string(prefix) + ".weight"], p[std::string(prefix) + ".bias"]);
}

Tensor VisionTransformer::cam_head_variants(const ForwardPass& pass, CamVariant variant) const {
  const std::string prefix = variant == CamVariant::kAdd ? "cam_add" : "cam_ignore";
  const Tensor& w = params_[prefix + ".weight"];
  const Tensor& P = pass.features.patches.value();
  const Tensor& cls = pass.features.cls.value();
  const std::size_t n = cfg_.num_patches(), d = cfg_.dim, C = cfg_.num_classes, g = cfg_.grid();
  Tensor cam({C, g, g});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double f = P[i * d + k];
        if (variant == CamVariant::kAdd) f += cls[k];
        acc += w[k * C + c] * f;
      }
      cam[c * n + i] = acc;
    }
  return cam;
}

// ---------------------------------------------------------------------------
// Attribution backward

void backprop_class_score(Tape& tape, ForwardPass& pass, std::size_t c) {
  Var root = pass.prediction.score_node(c);
  for (const auto& tap : pass.taps) {
    if (!tape.requires_grad(tap.node)) {
      throw std::invalid_argument("backprop_class_score: taps carry no gradient; forward with "
                                  "params_require_grad or image_requires_grad");
    }
  }
  tape.clear_gradients();
  tape.backward(root);
  for (auto& tap : pass.taps) {
    tap.grad = tape.has_grad(tap.node) ? tape.grad(tap.node) : Tensor(tap.attention.shape());
    tap.class_id = c;
  }
  pass.gradcam_grad = tape.has_grad(pass.gradcam_features)
                          ? tape.grad(pass.gradcam_features)
                          : Tensor(pass.gradcam_features.shape());
  tape.clear_gradients();
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string format_manifest(const ModelConfig& cfg) {
  KeyValues kv;
  kv["image_size"] = std::to_string(cfg.image_size);
  kv["patch_size"] = std::to_string(cfg.patch_size);
  kv["d"] = std::to_string(cfg.dim);
  kv["L"] = std::to_string(cfg.depth);
  kv["heads"] = std::to_string(cfg.heads);
  kv["C"] = std::to_string(cfg.num_classes);
  kv["seed"] = std::to_string(cfg.seed);
  return format_key_values(kv);
}

ModelConfig parse_manifest(std::string_view text) {
  const KeyValues kv = parse_key_values(text);
  auto get = [&kv](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError(std::string("manifest: missing key ") + key);
    return parse_u64(key, it->second);
  };
  ModelConfig cfg;
  cfg.image_size = get("image_size");
  cfg.patch_size = get("patch_size");
  cfg.dim = get("d");
  cfg.depth = get("L");
  cfg.heads = get("heads");
  cfg.num_classes = get("C");
  cfg.seed = get("seed");
  cfg.validate();
  return cfg;
}

void VisionTransformer::save(const fs::path& dir) const {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    write_gtt(dir / (params_.name(i) + ".gtt"), params_.value(i));
  }
  // Manifest last: a directory with a manifest is a complete checkpoint.
  write_text_atomic(dir / "manifest.txt", format_manifest(cfg_));
}

VisionTransformer VisionTransformer::load(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  if (!fs::exists(manifest)) throw ValidationError("checkpoint manifest not found: " + manifest.string());
  const ModelConfig cfg = parse_manifest(read_text_file(manifest));
  const ParameterSet reference = init_parameters(cfg);
  ParameterSet params;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    params.add(reference.name(i), read_gtt(dir / (reference.name(i) + ".gtt")));
  }
  return VisionTransformer(cfg, std::move(params));
}

}  // namespace getam
