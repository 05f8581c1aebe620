#include "fedfocal/losses.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedfocal/errors.h"

namespace fedfocal::loss {
namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

void check_gamma(double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw DomainError("gamma must be finite and >= 0");
}

void check_row(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw DomainError("label " + std::to_string(label) + " outside " +
                      std::to_string(probs.size()) + " classes");
  }
  double sum = 0.0;
  for (double p : probs) sum += p;
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("probability row does not sum to 1");
}

// Derivative of α·focal w.r.t. p_t, multiplied by p_t. Shared by the softmax
// and sigmoid gradients, which differ only in dp_t/dx.
double scaled_dloss_dpt(double p_t, double gamma, double alpha) {
  if (gamma == 0.0) return -alpha;
  const double q = 1.0 - p_t;
  return alpha * (gamma * std::pow(q, gamma - 1.0) * p_t * std::log(p_t) - std::pow(q, gamma));
}

}  // namespace

void LossSpec::validate(std::size_t class_count) const {
  if (family == Family::kFocal) check_gamma(gamma);
  if (!alpha.empty() && alpha.size() != class_count) {
    throw ConfigError("alpha has " + std::to_string(alpha.size()) + " entries for " +
                      std::to_string(class_count) + " classes");
  }
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("alpha entries must be positive");
  }
}

PosteriorProb::PosteriorProb(double p_t) : value_(clamp_prob(p_t)) {
  if (std::isnan(p_t)) throw DomainError("posterior probability is NaN");
}

PosteriorProb posterior(double p, int y) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0, 1)");
  if (y == 1) return PosteriorProb(p);
  if (y == -1) return PosteriorProb(1.0 - p);
  throw DomainError("binary label must be +1 or -1");
}

double bce(PosteriorProb p_t) { return -std::log(p_t.value()); }

double focal(PosteriorProb p_t, double gamma) {
  check_gamma(gamma);
  return -std::pow(1.0 - p_t.value(), gamma) * std::log(p_t.value());
}

double weighted_focal(PosteriorProb p_t, double gamma, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("alpha must be positive");
  return alpha * focal(p_t, gamma);
}

double multiclass_focal(std::span<const double> probs, std::size_t label, const LossSpec& spec) {
  check_row(probs, label);
  return weighted_focal(PosteriorProb(probs[label]), spec.effective_gamma(), spec.alpha_for(label));
}

std::vector<double> focal_grad_logits(std::span<const double> probs, std::size_t label,
                                      const LossSpec& spec) {
  check_row(probs, label);
  const double gamma = spec.effective_gamma();
  check_gamma(gamma);
  const double p = PosteriorProb(probs[label]).value();
  const double factor = scaled_dloss_dpt(p, gamma, spec.alpha_for(label));
  std::vector<double> grad(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double indicator = j == label ? 1.0 : 0.0;
    grad[j] = factor * (indicator - probs[j]);
  }
  return grad;
}

double binary_focal_grad_logit(double p, int y, double gamma) {
  check_gamma(gamma);
  const double p_t = posterior(p, y).value();
  return y * std::pow(1.0 - p_t, gamma) * (gamma * p_t * std::log(p_t) + p_t - 1.0);
}

BatchLoss batch_loss(const Matrix& probs, std::span<const int> labels, const LossSpec& spec,
                     nn::Head head) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("probability rows and labels differ in count");
  }
  BatchLoss out;
  out.dloss_dlogits.resize(probs.rows(), probs.cols());
  const double gamma = spec.effective_gamma();
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const auto label = static_cast<std::size_t>(labels[r]);
    if (head == nn::Head::kSoftmax) {
      std::span<const double> row(probs.row(r).data(), static_cast<std::size_t>(probs.cols()));
      total += multiclass_focal(row, label, spec);
      const auto g = focal_grad_logits(row, label, spec);
      for (Eigen::Index c = 0; c < probs.cols(); ++c) out.dloss_dlogits(r, c) = g[c];
    } else {
      if (label > 1) throw DomainError("sigmoid head expects labels 0 or 1");
      const int y = label == 1 ? 1 : -1;
      const double p = clamp_prob(probs(r, 0));
      const double alpha = spec.alpha_for(label);
      total += weighted_focal(posterior(p, y), gamma, alpha);
      out.dloss_dlogits(r, 0) = alpha * binary_focal_grad_logit(p, y, gamma);
    }
  }
  out.mean_loss = probs.rows() == 0 ? 0.0 : total / static_cast<double>(probs.rows());
  return out;
}

double mean_loss(const Matrix& probs, std::span<const int> labels, const LossSpec& spec,
                 nn::Head head) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("probability rows and labels differ in count");
  }
  const double gamma = spec.effective_gamma();
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const auto label = static_cast<std::size_t>(labels[r]);
    if (head == nn::Head::kSoftmax) {
      total += multiclass_focal(
          std::span<const double>(probs.row(r).data(), static_cast<std::size_t>(probs.cols())),
          label, spec);
    } else {
      if (label > 1) throw DomainError("sigmoid head expects labels 0 or 1");
      total += weighted_focal(posterior(clamp_prob(probs(r, 0)), label == 1 ? 1 : -1), gamma,
                              spec.alpha_for(label));
    }
  }
  return probs.rows() == 0 ? 0.0 : total / static_cast<double>(probs.rows());
}

}  // namespace fedfocal::loss
