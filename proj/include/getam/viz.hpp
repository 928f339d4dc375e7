#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "getam/attribution.hpp"
#include "getam/tensor.hpp"

namespace getam {

using Rgb8 = std::array<std::uint8_t, 3>;

/// Fixed 256-entry jet table built from integer ramps, identical everywhere.
const std::array<Rgb8, 256>& colormap();

/// Map [h, w] with values in [0, 1] (clamped) to an RGB image [3, h, w] of
/// k/255 values.
Tensor heatmap(const Tensor& map);

/// 0.5 image + 0.5 heatmap, with the map bilinearly resized to the image.
Tensor overlay(const Tensor& image, const Tensor& map);

struct FusionHistogram {
  Fusion fusion = Fusion::kSum;
  FusionStats stats;
};

/// Bar chart of the value histograms, one panel per fusion, shared y scale.
Tensor histogram_image(std::span<const FusionHistogram> panels);

std::string format_histogram_csv(std::span<const FusionHistogram> panels);

}  // namespace getam
