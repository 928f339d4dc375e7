#include "getam/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "getam/fileio.hpp"
#include "getam/rng.hpp"

namespace getam {

void TrainConfig::validate() const {
  if (phase1_epochs > total_epochs) {
    throw ValidationError("phase1 epochs (" + std::to_string(phase1_epochs) +
                          ") exceed total epochs (" + std::to_string(total_epochs) + ")");
  }
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(sal_weight >= 0.0)) throw ValidationError("saliency weight must be >= 0");
  mining.validate();
}

Var l_cls(const Prediction& pred, std::span<const int> labels) {
  const std::size_t c = pred.num_classes();
  Tensor target({1, c});
  for (int l : labels) {
    if (l < 1 || static_cast<std::size_t>(l) > c) {
      throw ValidationError("label " + std::to_string(l) + " outside 1.." + std::to_string(c));
    }
    target[l - 1] = 1.0;
  }
  return bce_with_logits(pred.logits, target);
}

Var l_seg(const Var& seg_logits, const LabelImage& pseudo) {
  const Shape& s = seg_logits.shape();
  if (s.size() != 3 || s[1] != pseudo.height || s[2] != pseudo.width) {
    throw DimensionError("l_seg: logits " + shape_to_string(s) + " vs labels " +
                         std::to_string(pseudo.height) + "x" + std::to_string(pseudo.width));
  }
  std::vector<int> labels(pseudo.data.begin(), pseudo.data.end());
  return softmax_cross_entropy(reshape(seg_logits, {s[0], s[1] * s[2]}), labels, kIgnoreLabel);
}

Var l_sal(const Var& seg_logits, const LabelImage& saliency, double weight) {
  const Shape& s = seg_logits.shape();
  if (s.size() != 3 || s[1] != saliency.height || s[2] != saliency.width) {
    throw DimensionError("l_sal: logits " + shape_to_string(s) + " vs saliency " +
                         std::to_string(saliency.height) + "x" + std::to_string(saliency.width));
  }
  const std::size_t hw = s[1] * s[2];
  Var bg = slice_rows(reshape(seg_logits, {s[0], hw}), 0, 1);
  Tensor target({1, hw});
  for (std::size_t i = 0; i < hw; ++i) target[i] = saliency.data[i] ? 0.0 : 1.0;
  return scale(bce_with_logits(bg, target), weight);
}

void SgdMomentum::step(ParameterSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("sgd: gradient count mismatch");
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) velocity_.emplace_back(params.value(i).shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) continue;
    Tensor& p = params.value(i);
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = mu_ * v[k] + grads[i][k];
      p[k] -= lr_ * v[k];
    }
  }
}

std::vector<Tensor> collect_gradients(const Tape& tape, const ForwardPass& pass) {
  std::vector<Tensor> grads(pass.params.size());
  for (std::size_t i = 0; i < pass.params.size(); ++i) {
    const Var& v = pass.params.at(i);
    if (tape.has_grad(v)) grads[i] = tape.grad(v);
  }
  return grads;
}

Tensor stack_class_maps(std::span<const ClassAttentionMap> maps, std::size_t num_classes) {
  if (maps.empty()) throw std::invalid_argument("stack_class_maps: no maps");
  const Shape& s = maps.front().map.shape();
  Tensor out({num_classes, s[0], s[1]});
  const std::size_t hw = s[0] * s[1];
  for (const auto& m : maps) {
    if (m.class_id >= num_classes) throw std::out_of_range("stack_class_maps: class id");
    std::copy(m.map.data().begin(), m.map.data().end(), out.data().begin() + m.class_id * hw);
  }
  return out;
}

namespace {

std::vector<std::size_t> model_classes(std::span<const int> labels) {
  std::vector<std::size_t> out;
  for (int l : labels) out.push_back(static_cast<std::size_t>(l - 1));
  return out;
}

LabelImage complete_from_maps(const VisionTransformer& model, const Sample& sample,
                              std::span<const ClassAttentionMap> maps, const MiningConfig& mining) {
  const std::size_t c = model.config().num_classes, g = model.config().grid();
  Tensor stacked = maps.empty() ? Tensor({c, g, g}) : stack_class_maps(maps, c);
  return complete_labels(stacked, sample.labels, sample.saliency, sample.image, mining);
}

}  // namespace

LabelImage pseudo_label(const VisionTransformer& model, const Sample& sample,
                        AttributionMethod method, Fusion fusion, const MiningConfig& mining) {
  const auto classes = model_classes(sample.labels);
  const auto maps = classes.empty() ? std::vector<ClassAttentionMap>{}
                                    : attribute(model, sample.image, classes, method, fusion);
  return complete_from_maps(model, sample, maps, mining);
}

StepResult double_backward_step(VisionTransformer& model, const Sample& sample, SgdMomentum& opt,
                                const TrainConfig& cfg) {
  StepResult r;
  r.hash_before = model.parameters().hash();

  // Attribution backward: gradients land on the taps only, never on weights.
  const auto classes = model_classes(sample.labels);
  if (!classes.empty()) {
    r.maps = attribute(model, sample.image, classes, AttributionMethod::kGetam, Fusion::kSum);
  }
  r.pseudo = complete_from_maps(model, sample, r.maps, cfg.mining);
  r.hash_after_attribution = model.parameters().hash();

  // Supervised backward on a fresh tape, single update.
  Tape tape;
  ForwardPass pass = model.forward_with_taps(tape, sample.image);
  Var cls = l_cls(pass.prediction, sample.labels);
  Var total = cls;
  r.segmentation_skipped = classes.empty();
  if (r.segmentation_skipped) {
    std::cerr << "warning: " << sample.id << " has no image labels; classification-only step\n";
  } else if (std::all_of(r.pseudo.data.begin(), r.pseudo.data.end(),
                         [](std::uint8_t v) { return v == kIgnoreLabel; })) {
    std::cerr << "warning: " << sample.id << " pseudo label is all 255; l_seg is 0\n";
  }
  if (!r.segmentation_skipped) {
    Var seg_logits = model.segmentation_head(pass);
    Var seg = l_seg(seg_logits, r.pseudo);
    Var sal_raw = l_sal(seg_logits, sample.saliency, 1.0);
    total = add(add(cls, seg), scale(sal_raw, cfg.sal_weight));
    r.loss.l_seg = seg.value()[0];
    r.loss.l_sal = sal_raw.value()[0];
  }
  r.loss.l_cls = cls.value()[0];
  r.loss.total = total.value()[0];
  tape.backward(total);
  opt.step(model.parameters(), collect_gradients(tape, pass));
  r.hash_after_update = model.parameters().hash();
  r.loss.pseudo_miou = miou(r.pseudo, sample.gt, model.config().num_classes + 1).mean;
  return r;
}

LossReport classification_step(VisionTransformer& model, std::span<const Sample* const> batch,
                               SgdMomentum& opt) {
  if (batch.empty()) throw std::invalid_argument("classification_step: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> acc;
  LossReport rep;
  for (const Sample* s : batch) {
    Tape tape;
    ForwardPass pass = model.forward_with_taps(tape, s->image);
    Var loss = l_cls(pass.prediction, s->labels);
    tape.backward(loss);
    auto grads = collect_gradients(tape, pass);
    if (acc.empty()) {
      acc.resize(grads.size());
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].empty()) continue;
      if (acc[i].empty()) acc[i] = Tensor(grads[i].shape());
      for (std::size_t k = 0; k < grads[i].size(); ++k) acc[i][k] += inv * grads[i][k];
    }
    rep.l_cls += inv * loss.value()[0];
  }
  rep.total = rep.l_cls;
  opt.step(model.parameters(), acc);
  return rep;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed * 1000003ULL + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

TrainResult run_training(VisionTransformer& model, const std::vector<Sample>& train,
                         const TrainConfig& cfg, const std::filesystem::path& out_dir,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  SgdMomentum opt(cfg.lr, cfg.momentum);
  TrainResult res;
  for (std::size_t epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    double cls_sum = 0.0;
    std::size_t cls_count = 0;
    if (epoch <= cfg.phase1_epochs) {
      std::size_t iter = 0;
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++iter) {
        std::vector<const Sample*> batch;
        for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k)
          batch.push_back(&train[order[k]]);
        LossReport rep = classification_step(model, batch, opt);
        rep.epoch = epoch;
        rep.iter = iter;
        cls_sum += rep.l_cls * static_cast<double>(batch.size());
        cls_count += batch.size();
        res.log.push_back(rep);
      }
    } else {
      for (std::size_t k = 0; k < order.size(); ++k) {
        StepResult st = double_backward_step(model, train[order[k]], opt, cfg);
        st.loss.epoch = epoch;
        st.loss.iter = k;
        cls_sum += st.loss.l_cls;
        ++cls_count;
        res.log.push_back(st.loss);
      }
    }
    res.epoch_mean_l_cls.push_back(cls_sum / static_cast<double>(cls_count));
    if (on_epoch) on_epoch(epoch, res);
  }
  train_cam_probes(model, train, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
  if (!out_dir.empty()) {
    write_text_atomic(out_dir / "metrics.csv", format_metrics_csv(res.log));
    model.save(out_dir / "checkpoint");
  }
  return res;
}

std::string format_metrics_csv(const std::vector<LossReport>& log) {
  std::ostringstream os;
  os << "epoch,iter,l_cls,l_seg,l_sal,total,pseudo_miou\n";
  os << std::setprecision(17);
  for (const auto& r : log) {
    os << r.epoch << ',' << r.iter << ',' << r.l_cls << ',' << r.l_seg << ',' << r.l_sal << ','
       << r.total << ',';
    if (r.pseudo_miou) os << *r.pseudo_miou;
    os << '\n';
  }
  return os.str();
}

void train_cam_probes(VisionTransformer& model, const std::vector<Sample>& train,
                      std::size_t epochs, double lr, std::uint64_t seed) {
  const std::size_t c = model.config().num_classes, d = model.config().dim;
  struct Feat {
    std::vector<double> ignore, add;
    std::vector<double> y;
  };
  std::vector<Feat> feats;
  feats.reserve(train.size());
  for (const auto& s : train) {
    Tape tape;
    ForwardOptions opts;
    opts.params_require_grad = false;
    ForwardPass pass = model.forward_with_taps(tape, s.image, opts);
    const Tensor& patches = pass.features.patches.value();
    const Tensor& cls = pass.features.cls.value();
    const std::size_t n = patches.dim(0);
    Feat f;
    f.ignore.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) f.ignore[k] += patches[i * d + k] / static_cast<double>(n);
    f.add = f.ignore;
    for (std::size_t k = 0; k < d; ++k) f.add[k] += cls[k];
    f.y.assign(c, 0.0);
    for (int l : s.labels) f.y[l - 1] = 1.0;
    feats.push_back(std::move(f));
  }
  // Logistic regression per variant, plain per-sample SGD.
  for (CamVariant v : {CamVariant::kIgnore, CamVariant::kAdd}) {
    const std::string prefix = v == CamVariant::kAdd ? "cam_add" : "cam_ignore";
    Tensor& w = model.parameters()[prefix + ".weight"];
    Tensor& b = model.parameters()[prefix + ".bias"];
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t idx : epoch_order(feats.size(), seed ^ 0x5eedULL, e)) {
        const auto& f = feats[idx];
        const auto& x = v == CamVariant::kAdd ? f.add : f.ignore;
        for (std::size_t j = 0; j < c; ++j) {
          double z = b[j];
          for (std::size_t k = 0; k < d; ++k) z += x[k] * w[k * c + j];
          const double err = (1.0 / (1.0 + std::exp(-z)) - f.y[j]) / static_cast<double>(c);
          for (std::size_t k = 0; k < d; ++k) w[k * c + j] -= lr * err * x[k];
          b[j] -= lr * err;
        }
      }
    }
  }
}

ClassificationStats classification_accuracy(const VisionTransformer& model,
                                            const std::vector<Sample>& samples) {
  ClassificationStats st;
  if (samples.empty()) return st;
  const std::size_t c = model.config().num_classes;
  std::size_t right = 0, exact = 0;
  for (const auto& s : samples) {
    Tape tape;
    ForwardOptions opts;
    opts.params_require_grad = false;
    const auto pass = model.forward_with_taps(tape, s.image, opts);
    bool all = true;
    for (std::size_t k = 0; k < c; ++k) {
      const bool truth = std::find(s.labels.begin(), s.labels.end(), static_cast<int>(k + 1)) !=
                         s.labels.end();
      const bool ok = (pass.prediction.score(k) > 0.0) == truth;
      right += ok ? 1 : 0;
      all = all && ok;
    }
    exact += all ? 1 : 0;
  }
  st.label_accuracy = static_cast<double>(right) / static_cast<double>(samples.size() * c);
  st.exact_match = static_cast<double>(exact) / static_cast<double>(samples.size());
  return st;
}

QualityReport evaluate_pseudo_labels(const VisionTransformer& model,
                                     const std::vector<Sample>& samples, AttributionMethod method,
                                     Fusion fusion, const MiningConfig& mining,
                                     bool count_unknown_as_error) {
  ConfusionCounts counts(model.config().num_classes + 1, count_unknown_as_error);
  for (const auto& s : samples) counts.add(pseudo_label(model, s, method, fusion, mining), s.gt);
  return quality_report(counts);
}

LabelImage predict_segmentation(const VisionTransformer& model, const Tensor& image) {
  Tape tape;
  ForwardOptions opts;
  opts.params_require_grad = false;
  const auto pass = model.forward_with_taps(tape, image, opts);
  const Tensor logits = model.segmentation_head(pass).value();
  const std::size_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
  LabelImage out(h, w, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits[c * hw + i] > logits[best * hw + i]) best = c;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace getam
