#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedfocal/nn.h"

namespace fedfocal::loss {

// Probabilities are clamped to [kProbEpsilon, 1 − kProbEpsilon] before any log.
inline constexpr double kProbEpsilon = 1e-12;

enum class Family { kCrossEntropy, kFocal };

struct LossSpec {
  Family family = Family::kCrossEntropy;
  double gamma = 0.0;         // focusing parameter, ignored for cross-entropy
  std::vector<double> alpha;  // per-class weights; empty means all 1.0

  double effective_gamma() const { return family == Family::kFocal ? gamma : 0.0; }
  double alpha_for(std::size_t label) const { return alpha.empty() ? 1.0 : alpha[label]; }
  // Throws DomainError/ConfigError.
  void validate(std::size_t class_count) const;
};

// Probability the model assigns to the true class.
class PosteriorProb {
 public:
  explicit PosteriorProb(double p_t);
  double value() const { return value_; }

 private:
  double value_;
};

// p_t = p for y = +1, 1 − p for y = −1. p must lie in (0, 1).
PosteriorProb posterior(double p, int y);

// −ln(p_t)
double bce(PosteriorProb p_t);
// −(1 − p_t)^γ · ln(p_t)
double focal(PosteriorProb p_t, double gamma);
// α · focal(p_t, γ)
double weighted_focal(PosteriorProb p_t, double gamma, double alpha);

// Weighted focal loss applied to the softmax probability of the true class.
double multiclass_focal(std::span<const double> probs, std::size_t label, const LossSpec& spec);

// Gradient of multiclass_focal w.r.t. the softmax logits:
//   α·[γ(1−p)^{γ−1}·p·ln p − (1−p)^γ]·(δ_jy − p_j),  p = p_label.
std::vector<double> focal_grad_logits(std::span<const double> probs, std::size_t label,
                                      const LossSpec& spec);

// Sigmoid case, p = sigmoid(x): d focal / dx = y·(1−p_t)^γ·(γ·p_t·ln p_t + p_t − 1).
double binary_focal_grad_logit(double p, int y, double gamma);

struct BatchLoss {
  double mean_loss = 0.0;
  Matrix dloss_dlogits;  // per-sample, unscaled by batch size
};

// Loss over a probability matrix produced by nn::forward. For the sigmoid
// head, label 1 maps to y = +1 and label 0 to y = −1.
BatchLoss batch_loss(const Matrix& probs, std::span<const int> labels, const LossSpec& spec,
                     nn::Head head);

// Mean loss only; skips the gradient.
double mean_loss(const Matrix& probs, std::span<const int> labels, const LossSpec& spec,
                 nn::Head head);

}  // namespace fedfocal::loss
