#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "getam/tensor.hpp"

namespace getam {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Single-channel 8-bit label map, row-major: 0 background, 1..C classes,
/// 255 unknown.
struct LabelImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  LabelImage() = default;
  LabelImage(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::uint8_t& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * width + c]; }

  friend bool operator==(const LabelImage&, const LabelImage&) = default;
};

}  // namespace getam
