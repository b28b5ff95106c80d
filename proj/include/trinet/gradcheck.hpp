#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "trinet/autodiff.hpp"

namespace trinet::ad {

/// Scalar function of one tensor, built on a fresh tape per evaluation.
template <typename T>
using ScalarFn = std::function<Var<T>(Tape<T>&, Var<T>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central differences elementwise. The relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <typename T>
GradCheckResult finite_diff_check(const ScalarFn<T>& f, const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("finite_diff_check: eps must be positive");

  auto eval = [&f](const Tensor<T>& at) {
    Tape<T> tape;
    Var<T> out = f(tape, tape.constant(at));
    if (out.numel() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
    const T v = out.item();
    if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: f(x) is not finite");
    return v;
  };

  Tensor<T> analytic;
  {
    Tape<T> tape;
    Var<T> xv = tape.leaf(x);
    Var<T> out = f(tape, xv);
    if (!std::isfinite(out.item())) throw std::runtime_error("finite_diff_check: f(x) is not finite");
    tape.backward(out);
    analytic = tape.grad(xv);
  }

  GradCheckResult res;
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const T fp = eval(probe);
    probe[i] = x[i] - eps;
    const T fm = eval(probe);
    probe[i] = x[i];
    const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > res.max_rel_error || i == 0) {
      res = {std::max(rel, res.max_rel_error), i, a, numeric};
    }
  }
  return res;
}

}  // namespace trinet::ad
