#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "getam/label_completion.hpp"
#include "getam/rng.hpp"

namespace oracle {

// Block map entry written out branch by branch.
inline double getam_entry(double a, double g) {
  double first = 0.0;
  if (g > 0 && a > 0) first = g * a;
  if (g < 0 && a < 0) first = g * a;
  double second = g > 0 ? g : 0.0;
  return first * second;
}

inline double quantile(std::vector<double> v, double alpha) {
  std::sort(v.begin(), v.end());
  double pos = alpha * (v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  double frac = pos - lo;
  if (frac == 0.0) return v[lo];
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

struct CompletionCase {
  std::size_t h = 4, w = 4, classes = 2;
  std::vector<double> maps;  // [C, h, w]
  std::vector<int> present;
  std::vector<std::uint8_t> saliency;
  double alpha = 0.9;
  double gamma = 4.0;
};

// Per-pixel case analysis of masking followed by mining.
inline std::vector<std::uint8_t> complete(const CompletionCase& cc) {
  const std::size_t hw = cc.h * cc.w;
  std::vector<std::vector<double>> fg(cc.classes, std::vector<double>(hw, 0.0));
  for (int label : cc.present) {
    std::size_t k = label - 1;
    double mx = 0;
    for (std::size_t i = 0; i < hw; ++i) mx = std::max(mx, cc.maps[k * hw + i]);
    for (std::size_t i = 0; i < hw; ++i) fg[k][i] = mx > 0 ? cc.maps[k * hw + i] / mx : 0.0;
  }
  std::vector<double> thr(cc.classes);
  for (std::size_t k = 0; k < cc.classes; ++k) thr[k] = quantile(fg[k], cc.alpha);

  std::vector<std::uint8_t> out(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    double mfg = 0;
    for (std::size_t k = 0; k < cc.classes; ++k) mfg = std::max(mfg, fg[k][i]);
    double bg = std::pow(1.0 - mfg, cc.gamma);
    if (cc.saliency[i] == 1) {
      // first channel attaining the maximum, background first
      std::size_t best = 0;
      double bv = bg;
      for (std::size_t k = 0; k < cc.classes; ++k)
        if (fg[k][i] > bv) { bv = fg[k][i]; best = k + 1; }
      out[i] = best == 0 ? 255 : static_cast<std::uint8_t>(best);
    } else {
      int hits = 0;
      std::size_t who = 0;
      for (std::size_t k = 0; k < cc.classes; ++k)
        if (fg[k][i] > thr[k]) { ++hits; who = k + 1; }
      if (hits == 0) out[i] = 0;
      else if (hits == 1) out[i] = static_cast<std::uint8_t>(who);
      else out[i] = 255;
    }
  }
  return out;
}

// Random 4x4 instance; every third trial uses coarse values so that ties occur.
inline CompletionCase random_case(getam::Rng& rng, std::size_t classes = 2) {
  CompletionCase cc;
  cc.classes = classes;
  const std::size_t hw = cc.h * cc.w;
  const bool coarse = rng.below(3) == 0;
  cc.maps.resize(classes * hw);
  for (auto& v : cc.maps) v = coarse ? rng.below(5) / 4.0 : rng.uniform();
  for (std::size_t k = 1; k <= classes; ++k)
    if (rng.below(4) != 0) cc.present.push_back(static_cast<int>(k));
  cc.saliency.resize(hw);
  for (auto& s : cc.saliency) s = rng.below(2);
  const double alphas[] = {0.5, 0.85, 0.9, 0.95, 1.0};
  cc.alpha = alphas[rng.below(5)];
  const double gammas[] = {1.5, 2.0, 4.0};
  cc.gamma = gammas[rng.below(3)];
  return cc;
}

inline getam::LabelImage run_pipeline(const CompletionCase& cc) {
  getam::Tensor maps({cc.classes, cc.h, cc.w}, cc.maps);
  getam::LabelImage sal(cc.h, cc.w);
  sal.data = cc.saliency;
  getam::MiningConfig cfg;
  cfg.alpha = cc.alpha;
  cfg.gamma = cc.gamma;
  cfg.pamr = false;
  getam::Tensor image({3, cc.h, cc.w});
  return getam::complete_labels(maps, cc.present, sal, image, cfg);
}

}  // namespace oracle
