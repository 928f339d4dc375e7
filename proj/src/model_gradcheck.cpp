#include "getam/model_gradcheck.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "getam/gradcheck.hpp"
#include "getam/rng.hpp"
#include "getam/training.hpp"

namespace getam {

ModelConfig gradcheck_toy_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.num_classes = 3;
  cfg.seed = seed;
  return cfg;
}

namespace {

constexpr double kModelTol = 1e-4;
constexpr double kIsolatedTol = 1e-6;
// Pixel-mean losses have per-entry gradients near 1e-7, where rounding noise
// at a 1e-5 step already costs ~1e-4 relative error.
constexpr double kLossStep = 1e-4;

using ModelLoss = std::function<Var(const VisionTransformer&, const ForwardPass&)>;

double evaluate(const VisionTransformer& m, const Tensor& image, const ModelLoss& loss) {
  Tape t;
  ForwardOptions o;
  o.params_require_grad = false;
  return loss(m, m.forward_with_taps(t, image, o)).value()[0];
}

void merge(GradCheckRow& row, const GradCheckResult& r) {
  row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
  row.checked += r.checked;
}

// Gradients of `loss` w.r.t. the image and every parameter that receives one.
void check_through_model(VisionTransformer& m, const Tensor& image, const std::string& label,
                         const ModelLoss& loss, std::vector<GradCheckRow>& rows,
                         double eps = 1e-5) {
  Tape t;
  ForwardOptions o;
  o.image_requires_grad = true;
  auto pass = m.forward_with_taps(t, image, o);
  t.backward(loss(m, pass));

  GradCheckRow img{label + " / image", 0.0, 0, kModelTol};
  auto f_img = [&](const Tensor& x) { return evaluate(m, x, loss); };
  merge(img, compare_with_finite_differences(f_img, image, t.grad(pass.image), eps));
  rows.push_back(img);

  GradCheckRow par{label + " / parameters", 0.0, 0, kModelTol};
  ParameterSet& ps = m.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!t.has_grad(pass.params.at(i))) continue;  // not on this loss's path
    const Tensor original = ps.value(i);
    auto f = [&](const Tensor& x) {
      ps.value(i) = x;
      const double v = evaluate(m, image, loss);
      ps.value(i) = original;
      return v;
    };
    merge(par, compare_with_finite_differences(f, original, t.grad(pass.params.at(i)), eps));
  }
  rows.push_back(par);
}

LabelImage random_labels(Rng& rng, std::size_t h, std::size_t w, std::size_t classes) {
  LabelImage l(h, w);
  for (auto& v : l.data) v = rng.below(5) == 0 ? kIgnoreLabel : rng.below(classes + 1);
  return l;
}

LabelImage random_saliency(Rng& rng, std::size_t h, std::size_t w) {
  LabelImage s(h, w);
  for (auto& v : s.data) v = rng.below(2);
  return s;
}

}  // namespace

std::vector<GradCheckRow> run_model_gradcheck(std::uint64_t seed, const ModelConfig& cfg) {
  VisionTransformer m(cfg);
  randomize_parameters(m.parameters(), seed, 0.3);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor image({3, cfg.image_size, cfg.image_size});
  for (auto& v : image.data()) v = rng.uniform();
  std::vector<GradCheckRow> rows;

  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const std::string label = "y^" + std::to_string(c + 1);
    check_through_model(
        m, image, label,
        [c](const VisionTransformer&, const ForwardPass& p) { return p.prediction.score_node(c); },
        rows);

    Tape t;
    auto pass = m.forward_with_taps(t, image);
    backprop_class_score(t, pass, c);
    for (const auto& tap : pass.taps) {
      GradCheckRow row{label + " / tap A^" + std::to_string(tap.block + 1), 0.0, 0, kModelTol};
      auto f = [&](const Tensor& a) {
        Tape t2;
        ForwardOptions o;
        o.params_require_grad = false;
        o.tap_override = TapOverride{tap.block, a};
        return m.forward_with_taps(t2, image, o).prediction.score(c);
      };
      merge(row, compare_with_finite_differences(f, tap.attention, *tap.grad));
      rows.push_back(row);
    }
  }

  const std::size_t side = cfg.image_size, k = cfg.num_classes + 1;
  const std::vector<int> labels{1, 3};
  const LabelImage pseudo = random_labels(rng, side, side, cfg.num_classes);
  const LabelImage sal = random_saliency(rng, side, side);

  check_through_model(
      m, image, "l_cls",
      [&](const VisionTransformer&, const ForwardPass& p) { return l_cls(p.prediction, labels); },
      rows, kLossStep);
  check_through_model(
      m, image, "l_seg",
      [&](const VisionTransformer& mm, const ForwardPass& p) {
        return l_seg(mm.segmentation_head(p), pseudo);
      },
      rows, kLossStep);
  check_through_model(
      m, image, "l_sal",
      [&](const VisionTransformer& mm, const ForwardPass& p) {
        return l_sal(mm.segmentation_head(p), sal, 0.1);
      },
      rows, kLossStep);

  // Losses on their own, with the logits as leaves.
  Tensor logits({1, cfg.num_classes});
  for (auto& v : logits.data()) v = 2.0 * rng.normal();
  GradCheckRow cls_row{"l_cls / logits", 0.0, 0, kIsolatedTol};
  merge(cls_row, finite_difference_check(
                     [&](const Var& x) { return l_cls(Prediction{x}, labels); }, logits));
  rows.push_back(cls_row);

  const std::size_t small = 6;
  Tensor seg({k, small, small});
  for (auto& v : seg.data()) v = 2.0 * rng.normal();
  const LabelImage small_pseudo = random_labels(rng, small, small, cfg.num_classes);
  const LabelImage small_sal = random_saliency(rng, small, small);
  GradCheckRow seg_row{"l_seg / logits", 0.0, 0, kIsolatedTol};
  merge(seg_row, finite_difference_check([&](const Var& x) { return l_seg(x, small_pseudo); }, seg));
  rows.push_back(seg_row);
  GradCheckRow sal_row{"l_sal / logits", 0.0, 0, kIsolatedTol};
  merge(sal_row,
        finite_difference_check([&](const Var& x) { return l_sal(x, small_sal, 0.1); }, seg));
  rows.push_back(sal_row);
  return rows;
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "check" << std::setw(10) << "entries" << std::setw(14)
     << "max_rel_err" << std::setw(10) << "tol" << "result\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(28) << r.name << std::setw(10) << r.checked << std::setw(14)
       << std::setprecision(3) << std::scientific << r.max_rel_error << std::setw(10) << r.tolerance
       << std::defaultfloat << (r.passed() ? "PASS" : "FAIL") << '\n';
  }
  return os.str();
}

}  // namespace getam
