#pragma once

#include "agfa/tensor.hpp"
#include "agfa/volume.hpp"

namespace agfa {

// Composite segmentation objective:
//   total = lambda * L_WCE + (1 - lambda) * L_Dice
// with the Dice term Laplace-smoothed by epsilon and the cross-entropy term
// weighted by omega = (N - sum p) / sum p, computed from the current
// predictions and detached from the gradient (differentiating through omega
// would make the objective self-referential).
struct LossTerms {
  Tensor total;   // differentiable scalar
  double l_wce = 0.0;
  double l_dice = 0.0;
  double omega = 0.0;
  double lambda = 0.6;
  double epsilon = 1.0;
};

constexpr double kDefaultLossLambda = 0.6;
constexpr double kDefaultLossEpsilon = 1.0;

// 1 - (2*sum(g*p) + eps) / (sum(g) + sum(p) + eps). p holds probabilities
// in [0,1]; gradient flows to p.
Tensor dice_loss(const Tensor& probabilities, const LabelMask& truth, double epsilon);

// Returns the loss and the detached omega. Probabilities are clamped to
// [1e-7, 1 - 1e-7] before the logs.
std::pair<Tensor, double> weighted_ce_loss(const Tensor& probabilities, const LabelMask& truth);

// The same loss with a caller-supplied constant omega. This is the exact
// function the analytic gradient differentiates, so finite-difference
// checks probe this form.
Tensor weighted_ce_loss_with_omega(const Tensor& probabilities, const LabelMask& truth,
                                   double omega);

// Maps logits through sigmoid and combines both terms.
LossTerms combined_loss(const Tensor& logits, const LabelMask& truth,
                        double lambda = kDefaultLossLambda,
                        double epsilon = kDefaultLossEpsilon);

}  // namespace agfa
