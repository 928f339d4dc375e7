#pragma once

#include <cstddef>

#include "getam/tensor.hpp"

namespace getam {

/// Interpolation matrix U[src_h*src_w, dst_h*dst_w] for bilinear resizing
/// with half-pixel centers and edge clamping, so that dst = src_flat * U.
/// Every column sums to 1.
Tensor bilinear_upsample_matrix(std::size_t src_h, std::size_t src_w, std::size_t dst_h,
                                std::size_t dst_w);

/// Resizes each channel of a [K, h, w] tensor (or a single [h, w] map).
Tensor bilinear_resize(const Tensor& maps, std::size_t dst_h, std::size_t dst_w);

}  // namespace getam
