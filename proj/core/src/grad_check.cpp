#include "agfa/grad_check.hpp"

#include <cmath>
#include <sstream>

#include "agfa/error.hpp"

namespace agfa {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error;
  if (worst_index >= 0)
    os << " at index " << worst_index << " (analytic " << analytic_at_worst << ", numeric "
       << numeric_at_worst << ")";
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                           double step, double tolerance) {
  if (step <= 0.0 || tolerance <= 0.0)
    fail(ErrorKind::kInvalidArgument, "grad_check: step and tolerance must be positive");

  Tensor x = input.detached();
  x.set_requires_grad(true);
  Tensor loss = f(x);
  if (loss.size() != 1) fail(ErrorKind::kShapeMismatch, "grad_check: f must be scalar-valued");
  backward(loss);
  std::vector<double> analytic = x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);

  GradCheckReport report;
  report.pass = true;
  Tensor probe = input.detached();
  auto& pv = probe.values();
  for (int64_t i = 0; i < probe.size(); ++i) {
    const double saved = pv[i];
    pv[i] = saved + step;
    double up = f(probe).value();
    pv[i] = saved - step;
    double down = f(probe).value();
    pv[i] = saved;
    double numeric = (up - down) / (2.0 * step);
    double rel = std::abs(analytic[i] - numeric) /
                 std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace agfa
