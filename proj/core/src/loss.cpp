#include "agfa/loss.hpp"

#include <algorithm>
#include <string>

#include "agfa/error.hpp"

namespace agfa {

namespace {

constexpr double kProbClamp = 1e-7;

Tensor mask_as_tensor_like(const Tensor& p, const LabelMask& truth) {
  if (p.size() != static_cast<int64_t>(truth.values.size()))
    fail(ErrorKind::kShapeMismatch,
         "loss: prediction has " + std::to_string(p.size()) + " voxels, truth has " +
             std::to_string(truth.values.size()));
  std::vector<double> g(truth.values.begin(), truth.values.end());
  return Tensor::from_values(p.shape(), std::move(g));
}

}  // namespace

Tensor dice_loss(const Tensor& probabilities, const LabelMask& truth, double epsilon) {
  if (epsilon <= 0.0) fail(ErrorKind::kInvalidArgument, "dice_loss: epsilon must be > 0");
  Tensor g = mask_as_tensor_like(probabilities, truth);
  Tensor intersection = sum(mul(probabilities, g));
  Tensor denom = add_scalar(add(sum(g), sum(probabilities)), epsilon);
  Tensor ratio = divide(add_scalar(mul_scalar(intersection, 2.0), epsilon), denom);
  return add_scalar(mul_scalar(ratio, -1.0), 1.0);
}

Tensor weighted_ce_loss_with_omega(const Tensor& probabilities, const LabelMask& truth,
                                   double omega) {
  Tensor g = mask_as_tensor_like(probabilities, truth);
  const int64_t n = probabilities.size();
  Tensor p = clamp(probabilities, kProbClamp, 1.0 - kProbClamp);
  Tensor fg = mul_scalar(mul(log(p), g), omega);
  Tensor one_minus_g = add_scalar(mul_scalar(g, -1.0), 1.0);
  Tensor one_minus_p = add_scalar(mul_scalar(p, -1.0), 1.0);
  Tensor bg = mul(log(one_minus_p), one_minus_g);
  return mul_scalar(sum(add(fg, bg)), -1.0 / static_cast<double>(n));
}

std::pair<Tensor, double> weighted_ce_loss(const Tensor& probabilities, const LabelMask& truth) {
  const int64_t n = probabilities.size();
  // omega from the clamped predictions, held constant for the backward pass
  double p_sum = 0.0;
  for (double v : probabilities.values())
    p_sum += std::min(std::max(v, kProbClamp), 1.0 - kProbClamp);
  const double omega = (static_cast<double>(n) - p_sum) / p_sum;
  return {weighted_ce_loss_with_omega(probabilities, truth, omega), omega};
}

LossTerms combined_loss(const Tensor& logits, const LabelMask& truth, double lambda,
                        double epsilon) {
  if (lambda < 0.0 || lambda > 1.0)
    fail(ErrorKind::kInvalidArgument, "combined_loss: lambda must be in [0,1]");
  Tensor p = sigmoid(logits);
  LossTerms terms;
  terms.lambda = lambda;
  terms.epsilon = epsilon;
  Tensor dice = dice_loss(p, truth, epsilon);
  auto [wce, omega] = weighted_ce_loss(p, truth);
  terms.l_dice = dice.value();
  terms.l_wce = wce.value();
  terms.omega = omega;
  terms.total = add(mul_scalar(wce, lambda), mul_scalar(dice, 1.0 - lambda));
  return terms;
}

}  // namespace agfa
