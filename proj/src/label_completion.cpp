#include "getam/label_completion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "getam/resample.hpp"

namespace getam {

void MiningConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ValidationError("alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
  if (!(gamma > 1.0) || !std::isfinite(gamma)) {
    throw ValidationError("gamma must be > 1, got " + std::to_string(gamma));
  }
  if (pamr_iterations < 0) {
    throw ValidationError("pamr iterations must be >= 0, got " + std::to_string(pamr_iterations));
  }
}

namespace {

void require_maps(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw DimensionError(std::string(what) + ": expected [K, h, w], got " +
                         shape_to_string(t.shape()));
  }
}

void require_grid(const LabelImage& s, std::size_t h, std::size_t w, const char* what) {
  if (s.height != h || s.width != w) {
    throw DimensionError(std::string(what) + ": saliency " + std::to_string(s.height) + "x" +
                         std::to_string(s.width) + " vs maps " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
}

}  // namespace

Tensor ActivationStack::stacked() const {
  const std::size_t c = fg.dim(0), hw = bg.size();
  Tensor out({c + 1, bg.dim(0), bg.dim(1)});
  std::copy(bg.data().begin(), bg.data().end(), out.data().begin());
  std::copy(fg.data().begin(), fg.data().end(), out.data().begin() + hw);
  return out;
}

Tensor background_channel(const Tensor& fg, double gamma) {
  if (!(gamma > 1.0)) throw ValidationError("gamma must be > 1, got " + std::to_string(gamma));
  require_maps(fg, "background_channel");
  const std::size_t c = fg.dim(0), h = fg.dim(1), w = fg.dim(2), hw = h * w;
  Tensor bg({h, w});
  for (std::size_t i = 0; i < hw; ++i) {
    double mx = 0.0;
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, fg[k * hw + i]);
    bg[i] = std::pow(1.0 - mx, gamma);
  }
  return bg;
}

ActivationStack build_activation_stack(const Tensor& maps, std::span<const int> present,
                                       double gamma) {
  require_maps(maps, "build_activation_stack");
  const std::size_t c = maps.dim(0), hw = maps.dim(1) * maps.dim(2);
  ActivationStack st;
  st.gamma = gamma;
  st.fg = Tensor(maps.shape());
  for (int label : present) {
    if (label < 1 || static_cast<std::size_t>(label) > c) {
      throw ValidationError("label " + std::to_string(label) + " outside 1.." + std::to_string(c));
    }
    if (std::find(st.present.begin(), st.present.end(), label) != st.present.end()) continue;
    st.present.push_back(label);
    const std::size_t k = static_cast<std::size_t>(label - 1);
    double mx = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mx = std::max(mx, maps[k * hw + i]);
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = std::max(0.0, maps[k * hw + i]);
      st.fg[k * hw + i] = mx > 0.0 ? v / mx : 0.0;
    }
  }
  std::sort(st.present.begin(), st.present.end());
  st.bg = background_channel(st.fg, gamma);
  return st;
}

void check_binary(const LabelImage& saliency) {
  for (auto v : saliency.data) {
    if (v > 1) throw ValidationError("saliency map must be binary, found value " + std::to_string(v));
  }
}

LabelImage saliency_constrained_masking(const ActivationStack& m, const LabelImage& saliency) {
  const std::size_t c = m.num_classes(), h = m.fg.dim(1), w = m.fg.dim(2), hw = h * w;
  require_grid(saliency, h, w, "saliency_constrained_masking");
  check_binary(saliency);
  LabelImage p(h, w, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    if (!saliency.data[i]) continue;
    double best = m.bg[i];
    std::size_t arg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      if (m.fg[k * hw + i] > best) {
        best = m.fg[k * hw + i];
        arg = k + 1;
      }
    }
    p.data[i] = arg == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(arg);
  }
  return p;
}

std::vector<double> mining_thresholds(const Tensor& fg, double alpha) {
  require_maps(fg, "mining_thresholds");
  const std::size_t c = fg.dim(0), hw = fg.dim(1) * fg.dim(2);
  std::vector<double> t(c, 0.0);
  std::vector<double> vals(hw);
  for (std::size_t k = 0; k < c; ++k) {
    std::copy_n(fg.data().begin() + k * hw, hw, vals.begin());
    std::sort(vals.begin(), vals.end());
    const double pos = alpha * static_cast<double>(hw - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, hw - 1);
    const double frac = pos - static_cast<double>(lo);
    t[k] = frac == 0.0 ? vals[lo] : vals[lo] + frac * (vals[hi] - vals[lo]);
  }
  return t;
}

std::vector<int> conflict_counts(const Tensor& fg, std::span<const double> thresholds) {
  require_maps(fg, "conflict_counts");
  const std::size_t c = fg.dim(0), hw = fg.dim(1) * fg.dim(2);
  if (thresholds.size() != c) throw DimensionError("conflict_counts: threshold count mismatch");
  std::vector<int> count(hw, 0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < hw; ++i) count[i] += fg[k * hw + i] > thresholds[k] ? 1 : 0;
  return count;
}

LabelImage high_activation_mining(const LabelImage& p, const Tensor& fg,
                                  const LabelImage& saliency, double alpha) {
  require_maps(fg, "high_activation_mining");
  const std::size_t c = fg.dim(0), h = fg.dim(1), w = fg.dim(2), hw = h * w;
  require_grid(saliency, h, w, "high_activation_mining");
  require_grid(p, h, w, "high_activation_mining");
  const auto t = mining_thresholds(fg, alpha);
  const auto count = conflict_counts(fg, t);
  LabelImage out = p;
  for (std::size_t i = 0; i < hw; ++i) {
    if (saliency.data[i] || count[i] == 0) continue;
    if (count[i] > 1) {
      out.data[i] = kIgnoreLabel;
      continue;
    }
    for (std::size_t k = 0; k < c; ++k) {
      if (fg[k * hw + i] > t[k]) out.data[i] = static_cast<std::uint8_t>(k + 1);
    }
  }
  return out;
}

namespace {

// 8 directions at L-inf radii 1, 2, 4, 8.
std::vector<std::array<int, 2>> pamr_offsets() {
  std::vector<std::array<int, 2>> off;
  for (int r : {1, 2, 4, 8})
    for (int dy : {-1, 0, 1})
      for (int dx : {-1, 0, 1})
        if (dy || dx) off.push_back({dy * r, dx * r});
  return off;
}

std::size_t clamp_index(long v, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
}

}  // namespace

Tensor pamr_step(const Tensor& maps, const Tensor& image) {
  require_maps(maps, "pamr_step");
  require_maps(image, "pamr_step image");
  const std::size_t k = maps.dim(0), h = maps.dim(1), w = maps.dim(2), hw = h * w;
  if (image.dim(0) != 3 || image.dim(1) != h || image.dim(2) != w) {
    throw DimensionError("pamr_step: image " + shape_to_string(image.shape()) + " vs maps " +
                         shape_to_string(maps.shape()));
  }
  const auto off = pamr_offsets();
  const std::size_t nb = off.size();
  std::vector<std::size_t> nbr(hw * nb);
  std::vector<double> dist(hw * nb);
  double sum = 0.0, sq = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      for (std::size_t j = 0; j < nb; ++j) {
        const std::size_t ny = clamp_index(static_cast<long>(y) + off[j][0], h);
        const std::size_t nx = clamp_index(static_cast<long>(x) + off[j][1], w);
        const std::size_t n = ny * w + nx;
        double d2 = 0.0;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double diff = image[ch * hw + i] - image[ch * hw + n];
          d2 += diff * diff;
        }
        const double d = std::sqrt(d2);
        nbr[i * nb + j] = n;
        dist[i * nb + j] = d;
        sum += d;
        sq += d * d;
      }
    }
  const double cnt = static_cast<double>(hw * nb);
  const double mean = sum / cnt;
  const double sigma = std::sqrt(std::max(0.0, sq / cnt - mean * mean));

  Tensor out(maps.shape());
  std::vector<double> aff(nb);
  for (std::size_t i = 0; i < hw; ++i) {
    if (sigma > 1e-12) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nb; ++j) {
        const double d = dist[i * nb + j];
        aff[j] = -d * d / (2.0 * sigma * sigma);
        mx = std::max(mx, aff[j]);
      }
      double z = 0.0;
      for (auto& a : aff) z += (a = std::exp(a - mx));
      for (auto& a : aff) a /= z;
    } else {
      std::fill(aff.begin(), aff.end(), 1.0 / static_cast<double>(nb));
    }
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nb; ++j) acc += aff[j] * maps[c * hw + nbr[i * nb + j]];
      out[c * hw + i] = acc;
    }
  }
  return out;
}

Tensor pamr_refine(const Tensor& maps, const Tensor& image, int iterations) {
  if (iterations < 0) {
    throw ValidationError("pamr iterations must be >= 0, got " + std::to_string(iterations));
  }
  if (iterations == 0) return maps;
  Tensor cur = maps;
  for (int t = 0; t < iterations; ++t) cur = pamr_step(cur, image);
  const std::size_t k = cur.dim(0), hw = cur.dim(1) * cur.dim(2);
  for (std::size_t c = 0; c < k; ++c) {
    double mx = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mx = std::max(mx, cur[c * hw + i]);
    if (mx > 0.0)
      for (std::size_t i = 0; i < hw; ++i) cur[c * hw + i] /= mx;
  }
  return cur;
}

CompletionStages complete_labels_staged(const Tensor& maps, std::span<const int> present,
                                        const LabelImage& saliency, const Tensor& image,
                                        const MiningConfig& cfg) {
  cfg.validate();
  require_maps(maps, "complete_labels");
  check_binary(saliency);
  const std::size_t h = saliency.height, w = saliency.width;
  Tensor m = (maps.dim(1) == h && maps.dim(2) == w) ? maps : bilinear_resize(maps, h, w);
  if (cfg.pamr) m = pamr_refine(m, image, cfg.pamr_iterations);
  CompletionStages st{build_activation_stack(m, present, cfg.gamma), {}, {}};
  st.masked = saliency_constrained_masking(st.stack, saliency);
  st.completed = high_activation_mining(st.masked, st.stack.fg, saliency, cfg.alpha);
  return st;
}

LabelImage complete_labels(const Tensor& maps, std::span<const int> present,
                           const LabelImage& saliency, const Tensor& image,
                           const MiningConfig& cfg) {
  return complete_labels_staged(maps, present, saliency, image, cfg).completed;
}

}  // namespace getam
