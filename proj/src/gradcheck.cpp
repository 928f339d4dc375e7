#include "getam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace getam {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult compare_with_finite_differences(const std::function<double(const Tensor&)>& f,
                                                const Tensor& x, const Tensor& analytic,
                                                double eps,
                                                std::span<const std::size_t> indices) {
  if (analytic.size() != x.size()) {
    throw DimensionError("gradient check: analytic gradient " + shape_to_string(analytic.shape()) +
                         " vs input " + shape_to_string(x.shape()));
  }
  GradCheckResult res;
  Tensor probe = x;
  auto check_one = [&](std::size_t i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (res.checked == 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.worst_analytic = analytic[i];
      res.worst_numeric = numeric;
    }
    ++res.checked;
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : indices) check_one(i);
  }
  return res;
}

GradCheckResult finite_difference_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                                        double eps) {
  Tape tape;
  Var leaf = tape.leaf(x, true);
  Var root = f(leaf);
  tape.backward(root);
  const Tensor analytic = tape.has_grad(leaf) ? tape.grad(leaf) : Tensor(x.shape());
  auto eval = [&f](const Tensor& at) {
    Tape t;
    return f(t.leaf(at, false)).value()[0];
  };
  return compare_with_finite_differences(eval, x, analytic, eps);
}

}  // namespace getam
