#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cdrnp/tensor.hpp"

namespace cdrnp {

// One evaluation of a scalar objective. relu_kink reports whether any relu
// saw an input of exactly 0 during the pass (a non-differentiable point).
struct EvalOut {
  double value = 0.0;
  bool relu_kink = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  std::string worst_param;
  std::int64_t worst_coord = -1;
  // max relative error per parameter, in the order given
  std::vector<std::pair<std::string, double>> per_param;

  bool passed(double tol) const { return max_rel_error <= tol; }
};

// Central-difference check of analytic gradients.
//
// value_fn evaluates the objective at the parameters' current values and
// must be deterministic (all sampling noise frozen by the caller).
// grad_fn runs the same objective once and accumulates d(objective)/d(param)
// into each parameter's grad field (grads are zeroed here first).
//
// Relative error per coordinate is |analytic - fd| / max(1, |analytic|).
// Coordinates whose evaluations touch a relu kink are skipped and counted.
// eps must lie in [1e-6, 1e-4].
GradCheckReport gradient_check(const std::vector<Parameter*>& params,
                               const std::function<EvalOut()>& value_fn,
                               const std::function<EvalOut()>& grad_fn,
                               double eps);

}  // namespace cdrnp
