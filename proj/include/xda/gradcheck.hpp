#pragma once

#include <functional>
#include <span>

#include "xda/tape.hpp"

namespace xda {

/// Loss builder: registers leaves for the externally owned parameters on the
/// given tape (typically via Tape::leaf) and returns the scalar loss node.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  size_t worst_param = 0;
  size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares analytic gradients of `build_loss` against central finite
/// differences over every entry of `params`. The relative error of one entry
/// is |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
/// A non-finite loss anywhere raises ContractError naming the coordinates.
GradCheckReport grad_check_report(std::span<Tensor* const> params,
                                  const LossBuilder& build_loss,
                                  double eps = 1e-5);

double grad_check(std::span<Tensor* const> params,
                  const LossBuilder& build_loss, double eps = 1e-5);

}  // namespace xda
