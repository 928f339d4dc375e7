#include "getam/resample.hpp"

#include <algorithm>
#include <cmath>

namespace getam {

namespace {

struct Tap1d {
  std::size_t lo, hi;
  double w_hi;
};

Tap1d source_taps(std::size_t dst, std::size_t src_n, std::size_t dst_n) {
  double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) /
                 static_cast<double>(dst_n) -
             0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
  const auto lo = static_cast<std::size_t>(std::floor(s));
  const std::size_t hi = std::min(lo + 1, src_n - 1);
  return {lo, hi, s - static_cast<double>(lo)};
}

}  // namespace

Tensor bilinear_upsample_matrix(std::size_t src_h, std::size_t src_w, std::size_t dst_h,
                                std::size_t dst_w) {
  if (src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0) {
    throw DimensionError("bilinear_upsample_matrix: empty grid");
  }
  Tensor U({src_h * src_w, dst_h * dst_w});
  const std::size_t cols = dst_h * dst_w;
  for (std::size_t y = 0; y < dst_h; ++y) {
    const Tap1d ty = source_taps(y, src_h, dst_h);
    for (std::size_t x = 0; x < dst_w; ++x) {
      const Tap1d tx = source_taps(x, src_w, dst_w);
      const std::size_t col = y * dst_w + x;
      U[(ty.lo * src_w + tx.lo) * cols + col] += (1 - ty.w_hi) * (1 - tx.w_hi);
      U[(ty.lo * src_w + tx.hi) * cols + col] += (1 - ty.w_hi) * tx.w_hi;
      U[(ty.hi * src_w + tx.lo) * cols + col] += ty.w_hi * (1 - tx.w_hi);
      U[(ty.hi * src_w + tx.hi) * cols + col] += ty.w_hi * tx.w_hi;
    }
  }
  return U;
}

Tensor bilinear_resize(const Tensor& maps, std::size_t dst_h, std::size_t dst_w) {
  const bool single = maps.rank() == 2;
  if (!single && maps.rank() != 3) {
    throw DimensionError("bilinear_resize: expected [h,w] or [K,h,w], got " +
                         shape_to_string(maps.shape()));
  }
  const std::size_t k = single ? 1 : maps.dim(0);
  const std::size_t h = maps.dim(single ? 0 : 1), w = maps.dim(single ? 1 : 2);
  if (h == dst_h && w == dst_w) return maps;
  const Tensor U = bilinear_upsample_matrix(h, w, dst_h, dst_w);
  const std::size_t src_n = h * w, dst_n = dst_h * dst_w;
  Tensor out(single ? Shape{dst_h, dst_w} : Shape{k, dst_h, dst_w});
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < src_n; ++i) {
      const double v = maps[c * src_n + i];
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < dst_n; ++j) out[c * dst_n + j] += v * U[i * dst_n + j];
    }
  return out;
}

}  // namespace getam
