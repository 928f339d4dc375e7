#include "getam/viz.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "getam/resample.hpp"

namespace getam {

namespace {

constexpr std::uint8_t ramp(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

constexpr std::array<Rgb8, 256> make_jet() {
  std::array<Rgb8, 256> t{};
  for (int i = 0; i < 256; ++i) {
    t[i] = {ramp(std::min(4 * i - 384, -4 * i + 1020)), ramp(std::min(4 * i - 128, -4 * i + 892)),
            ramp(std::min(4 * i + 128, -4 * i + 636))};
  }
  return t;
}

constexpr std::array<Rgb8, 256> kJet = make_jet();

double byte(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

const std::array<Rgb8, 256>& colormap() { return kJet; }

Tensor heatmap(const Tensor& map) {
  if (map.rank() != 2) throw DimensionError("heatmap: expected [h, w], got " + shape_to_string(map.shape()));
  const std::size_t hw = map.size();
  Tensor out({3, map.dim(0), map.dim(1)});
  for (std::size_t i = 0; i < hw; ++i) {
    const double v = std::isfinite(map[i]) ? std::clamp(map[i], 0.0, 1.0) : 0.0;
    const Rgb8& c = kJet[static_cast<std::size_t>(std::lround(v * 255.0))];
    for (std::size_t k = 0; k < 3; ++k) out[k * hw + i] = c[k] / 255.0;
  }
  return out;
}

Tensor overlay(const Tensor& image, const Tensor& map) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("overlay: image must be [3, H, W], got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor m = map;
  if (map.dim(0) != h || map.dim(1) != w) {
    m = bilinear_resize(map.reshaped({1, map.dim(0), map.dim(1)}), h, w).reshaped({h, w});
  }
  const Tensor heat = heatmap(m);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = byte(0.5 * image[i] + 0.5 * heat[i]);
  return out;
}

Tensor histogram_image(std::span<const FusionHistogram> panels) {
  constexpr std::size_t bar = 6, gap = 1, height = 100, margin = 8;
  const std::size_t panel_w = kFusionHistogramBins * (bar + gap);
  const std::size_t w = margin + panels.size() * (panel_w + margin), h = height + 2 * margin;
  Tensor img({3, h, w}, 1.0);
  double top = 0.0;
  for (const auto& p : panels)
    for (auto n : p.stats.histogram)
      if (p.stats.count) top = std::max(top, static_cast<double>(n) / p.stats.count);
  static constexpr std::array<Rgb8, 3> colors{{{90, 90, 90}, {200, 40, 40}, {40, 80, 200}}};
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& st = panels[p].stats;
    const Rgb8 col = colors[static_cast<std::size_t>(panels[p].fusion) % colors.size()];
    const std::size_t x0 = margin + p * (panel_w + margin);
    // baseline
    for (std::size_t x = x0; x < x0 + panel_w; ++x)
      for (std::size_t k = 0; k < 3; ++k) img[(k * h + margin + height) * w + x] = 0.0;
    if (!st.count || top <= 0.0) continue;
    for (std::size_t b = 0; b < kFusionHistogramBins; ++b) {
      const double frac = static_cast<double>(st.histogram[b]) / st.count / top;
      const auto bh = static_cast<std::size_t>(std::lround(frac * height));
      for (std::size_t y = margin + height - bh; y < margin + height; ++y)
        for (std::size_t x = x0 + b * (bar + gap); x < x0 + b * (bar + gap) + bar; ++x)
          for (std::size_t k = 0; k < 3; ++k) img[(k * h + y) * w + x] = col[k] / 255.0;
    }
  }
  return img;
}

std::string format_histogram_csv(std::span<const FusionHistogram> panels) {
  std::ostringstream os;
  os << "fusion,count,suppressed_mass,mean,stddev";
  for (std::size_t b = 0; b < kFusionHistogramBins; ++b) os << ",bin" << b;
  os << '\n' << std::setprecision(17);
  for (const auto& p : panels) {
    os << fusion_name(p.fusion) << ',' << p.stats.count << ',' << p.stats.suppressed_mass << ','
       << p.stats.mean << ',' << p.stats.stddev;
    for (auto n : p.stats.histogram) os << ',' << n;
    os << '\n';
  }
  return os.str();
}

}  // namespace getam
