#include "cdrnp/gradcheck.hpp"

#include <cmath>

#include "cdrnp/errors.hpp"

namespace cdrnp {

GradCheckReport gradient_check(const std::vector<Parameter*>& params,
                               const std::function<EvalOut()>& value_fn,
                               const std::function<EvalOut()>& grad_fn,
                               double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) {
    throw ContractError("gradient_check: eps " + std::to_string(eps) +
                        " outside [1e-6, 1e-4]");
  }
  if (params.empty()) throw ContractError("gradient_check: no parameters");

  for (Parameter* p : params) p->zero_grad();
  const EvalOut base = grad_fn();
  if (!std::isfinite(base.value)) {
    throw NumericError("gradient_check: objective is non-finite at the base point");
  }

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    double param_max = 0.0;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      double& x = p.value.data[static_cast<std::size_t>(i)];
      const double saved = x;
      x = saved + eps;
      const EvalOut hi = value_fn();
      x = saved - eps;
      const EvalOut lo = value_fn();
      x = saved;

      if (base.relu_kink || hi.relu_kink || lo.relu_kink) {
        ++report.coords_skipped;
        continue;
      }
      if (!std::isfinite(hi.value) || !std::isfinite(lo.value)) {
        throw NumericError("gradient_check: non-finite objective while perturbing '" +
                           p.name + "'");
      }
      const double fd = (hi.value - lo.value) / (2.0 * eps);
      const double a = analytic[pi].data[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
      ++report.coords_checked;
      param_max = std::max(param_max, rel);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_coord = i;
      }
    }
    report.per_param.emplace_back(p.name, param_max);
  }
  return report;
}

}  // namespace cdrnp
