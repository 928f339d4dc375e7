#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "getam/vit.hpp"

namespace getam {

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// 2 blocks, d = 8, 2 heads, 32x32 images with 8x8 patches.
ModelConfig gradcheck_toy_config(std::uint64_t seed = 7);

/// Central-difference checks of the toy model with randomized weights:
/// class scores w.r.t. pixels, parameters and every attention tap; each loss
/// on its own (tolerance 1e-6) and through the model (1e-4).
std::vector<GradCheckRow> run_model_gradcheck(std::uint64_t seed, const ModelConfig& cfg);

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace getam
