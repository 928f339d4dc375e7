#pragma once

#include <filesystem>

#include "getam/label_image.hpp"
#include "getam/tensor.hpp"

namespace getam {

/// 8-bit RGB PNG from a [3, H, W] tensor in [0,1] (rounded, clamped).
void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
/// [3, H, W] tensor of k/255 values. Gray and alpha inputs are expanded.
Tensor read_png_rgb(const std::filesystem::path& path);

/// 8-bit single-channel PNG with raw label values.
void write_png_gray(const std::filesystem::path& path, const LabelImage& labels);
LabelImage read_png_gray(const std::filesystem::path& path);

/// Gray PNG thresholded at 128 into {0, 1}.
LabelImage read_saliency_png(const std::filesystem::path& path);
/// {0, 1} map written as {0, 255}.
void write_saliency_png(const std::filesystem::path& path, const LabelImage& saliency);

}  // namespace getam
