#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "agfa/tensor.hpp"

namespace agfa {

struct AdamOptions {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  // Decay applied directly to the parameters rather than folded into the
  // gradient; set false for the classic L2-coupled form.
  bool decoupled_weight_decay = true;
};

// First/second moment estimates, parallel to the parameter list.
struct AdamState {
  AdamOptions options;
  int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void initialize(const std::vector<std::pair<std::string, Tensor>>& params);
  bool initialized() const { return !m.empty(); }
};

// One bias-corrected update over every parameter, at the given learning
// rate. Errors with the parameter's name if a trainable parameter has no
// gradient.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr_now);

// CosineAnnealingWarmRestarts: lr(t) = eta_min + (base - eta_min)/2 *
// (1 + cos(pi * t_cur / t_i)), with cycle lengths t0, t0*t_mult, ... and
// lr == base_lr exactly at the start of every cycle.
struct CosineRestartSchedule {
  double base_lr = 0.003;
  int t0 = 50;
  int t_mult = 2;
  double eta_min = 0.0;
};

double lr_at(const CosineRestartSchedule& schedule, int64_t iteration);

}  // namespace agfa
