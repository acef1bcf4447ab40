#pragma once

#include <functional>
#include <string>

#include "agfa/tensor.hpp"

namespace agfa {

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::string summary() const;
};

// Compares the analytic gradient of a scalar-valued deterministic function
// against central finite differences, element by element:
//   rel(i) = |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)
// Undefined for non-deterministic f. Inputs sitting on non-differentiable
// kinks (relu at 0, ties feeding a max) report spurious mismatches and must
// be avoided by the caller.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                           double step = 1e-4, double tolerance = 1e-4);

}  // namespace agfa
