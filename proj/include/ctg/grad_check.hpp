#pragma once

#include "ctg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace ctg {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor for the relative error, so vanishing gradients are
  // judged on absolute error.
  double abs_floor = 1e-6;
  // Per-tensor coordinate budget; larger tensors are sampled.
  Index max_coords_per_tensor = 64;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  Index coords_checked = 0;
  bool passed = false;
};

class NondeterministicFunction : public TensorError {
 public:
  NondeterministicFunction()
      : TensorError("nondeterministic function: gradient check requires dropout disabled") {}
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences over (a sample of) the coordinates of `params`. `f` must
/// rebuild its graph from the current parameter values on every call.
template <typename Scalar>
GradCheckReport grad_check(const std::function<BasicTensor<Scalar>()>& f,
                           std::vector<BasicTensor<Scalar>> params,
                           const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0)) throw TensorError("grad_check eps must be positive");
  for (auto& p : params) p.zero_grad();
  auto loss = f();
  if (loss.stochastic()) throw NondeterministicFunction();
  const Scalar base = loss.item();
  backward(loss);
  if (f().item() != base) throw NondeterministicFunction();

  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;
  for (auto& p : params) {
    const Index n = p.size();
    const auto analytic = p.has_grad() ? typename BasicTensor<Scalar>::Array(p.grad())
                                       : BasicTensor<Scalar>::Array::Zero(n).eval();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    if (n > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.max_coords_per_tensor));
    }
    for (Index i : coords) {
      auto& v = p.mutable_values();
      const Scalar orig = v[i];
      v[i] = orig + static_cast<Scalar>(opts.eps);
      const Scalar up = f().item();
      v[i] = orig - static_cast<Scalar>(opts.eps);
      const Scalar down = f().item();
      v[i] = orig;
      const double numeric = static_cast<double>((up - down) / (2 * static_cast<Scalar>(opts.eps)));
      const double a = static_cast<double>(analytic[i]);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
      ++report.coords_checked;
    }
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

}  // namespace ctg
