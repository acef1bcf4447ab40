#include "agfa/optimizer.hpp"

#include <cmath>

#include "agfa/error.hpp"

namespace agfa {

void AdamState::initialize(const std::vector<std::pair<std::string, Tensor>>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& [name, t] : params) {
    m.emplace_back(t.size(), 0.0);
    v.emplace_back(t.size(), 0.0);
  }
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr_now) {
  if (!state.initialized()) state.initialize(params);
  if (state.m.size() != params.size())
    fail(ErrorKind::kState, "adam: state tracks a different parameter list");
  const AdamOptions& o = state.options;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));

  for (size_t p = 0; p < params.size(); ++p) {
    const auto& name = params[p].first;
    Tensor t = params[p].second;  // shared handle; mutations hit the stored node
    if (!t.requires_grad()) continue;
    if (!t.has_grad())
      fail(ErrorKind::kState, "adam: parameter '" + name + "' has no gradient; run backward first");
    const auto& g = t.grad();
    auto& values = t.values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < values.size(); ++i) {
      double grad = g[i];
      if (!o.decoupled_weight_decay && o.weight_decay != 0.0) grad += o.weight_decay * values[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad * grad;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      if (o.decoupled_weight_decay && o.weight_decay != 0.0)
        values[i] -= lr_now * o.weight_decay * values[i];
      values[i] -= lr_now * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

double lr_at(const CosineRestartSchedule& s, int64_t iteration) {
  if (iteration < 0) fail(ErrorKind::kInvalidArgument, "lr_at: iteration must be >= 0");
  if (s.t0 <= 0 || s.t_mult < 1) fail(ErrorKind::kInvalidArgument, "lr_at: invalid cycle parameters");
  int64_t t_cur = iteration;
  int64_t t_i = s.t0;
  while (t_cur >= t_i) {
    t_cur -= t_i;
    t_i *= s.t_mult;
  }
  const double frac = static_cast<double>(t_cur) / static_cast<double>(t_i);
  return s.eta_min + 0.5 * (s.base_lr - s.eta_min) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace agfa
