#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "getam/autodiff.hpp"

namespace getam {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline constexpr double kGradCheckFloor = 1e-8;

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central differences of `f` around `x` at each index in `indices` (all
/// indices when empty), compared against `analytic`.
GradCheckResult compare_with_finite_differences(const std::function<double(const Tensor&)>& f,
                                                const Tensor& x, const Tensor& analytic,
                                                double eps = 1e-5,
                                                std::span<const std::size_t> indices = {});

/// Builds `f` on a fresh tape with x as a leaf, back-propagates, and checks the
/// analytic gradient against central differences.
GradCheckResult finite_difference_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                                        double eps = 1e-5);

}  // namespace getam
