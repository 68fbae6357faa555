#pragma once

// Finite-difference gradient checking, shared by the layer tests and the
// acceptance suite. Everything runs in double so the two-sided difference
// quotient with step 1e-4 has ~1e-8 truncation error.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "numvae/layers.hpp"

namespace numvae::testing {

struct GradCheckResult {
  int64_t checked = 0;
  int64_t failed = 0;
  double worst_rel = 0.0;
  std::string worst_name;

  double pass_fraction() const {
    return checked == 0
               ? 1.0
               : 1.0 - static_cast<double>(failed) / static_cast<double>(checked);
  }
};

// Compares the analytic gradients already stored in `params` against
// two-sided finite differences of `loss`. An element passes if the
// relative error is <= tol or the absolute error is <= abs_floor (for
// gradients at the numerical noise floor).
inline GradCheckResult finite_diff_check(
    const std::vector<ParamRef<double>>& params,
    const std::function<double()>& loss, double step = 1e-4,
    double tol = 1e-3, double abs_floor = 1e-8) {
  GradCheckResult r;
  for (const auto& p : params) {
    if (p.is_buffer) continue;
    for (int64_t i = 0; i < p.value->numel(); ++i) {
      double& w = (*p.value)[i];
      const double orig = w;
      w = orig + step;
      const double lp = loss();
      w = orig - step;
      const double lm = loss();
      w = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = (*p.grad)[i];
      const double abs_err = std::fabs(analytic - numeric);
      const double rel =
          abs_err / std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
      ++r.checked;
      const bool ok = rel <= tol || abs_err <= abs_floor;
      if (!ok) ++r.failed;
      if (rel > r.worst_rel && abs_err > abs_floor) {
        r.worst_rel = rel;
        r.worst_name = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// Same check for the gradient with respect to an input tensor.
inline GradCheckResult finite_diff_check_input(
    Tensor<double>& x, const Tensor<double>& analytic_gx,
    const std::function<double()>& loss, double step = 1e-4,
    double tol = 1e-3, double abs_floor = 1e-8) {
  Tensor<double> grad_copy = analytic_gx;
  ParamRef<double> ref{"input", &x, &grad_copy, false};
  return finite_diff_check({ref}, loss, step, tol, abs_floor);
}

// Fills a tensor with seeded standard-normal values.
inline void fill_normal(Tensor<double>& t, Rng& rng, double scale = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
}

// Weighted-sum readout: turns any layer output into a scalar loss with a
// nontrivial adjoint (the weights themselves).
inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace numvae::testing
