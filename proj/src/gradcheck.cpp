#include "xda/gradcheck.hpp"

#include <cmath>
#include <string>

#include "xda/error.hpp"

namespace xda {

GradCheckReport grad_check_report(std::span<Tensor* const> params,
                                  const LossBuilder& build_loss, double eps) {
  if (eps <= 0.0) throw ContractError("grad_check requires eps > 0");
  for (Tensor* p : params) p->requires_grad = true;

  auto eval = [&](size_t param, size_t entry) {
    Tape tape;
    const Var loss = build_loss(tape);
    const double v = tape.scalar_value(loss);
    if (!std::isfinite(v))
      throw ContractError("grad_check: non-finite loss at param " +
                          std::to_string(param) + " entry " +
                          std::to_string(entry));
    return v;
  };

  // Analytic pass.
  {
    Tape tape;
    const Var loss = build_loss(tape);
    if (!std::isfinite(tape.scalar_value(loss)))
      throw ContractError("grad_check: non-finite loss at base point");
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    for (size_t ei = 0; ei < p->data.size(); ++ei) {
      const double saved = p->data[ei];
      p->data[ei] = saved + eps;
      const double up = eval(pi, ei);
      p->data[ei] = saved - eps;
      const double down = eval(pi, ei);
      p->data[ei] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][ei];
      const double rel =
          std::fabs(a - numeric) /
          std::max(1e-12, std::fabs(a) + std::fabs(numeric));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_entry = ei;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(std::span<Tensor* const> params,
                  const LossBuilder& build_loss, double eps) {
  return grad_check_report(params, build_loss, eps).max_rel_error;
}

}  // namespace xda
