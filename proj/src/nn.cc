#include "fedfocal/nn.h"

#include <cmath>
#include <string>

#include "fedfocal/errors.h"
#include "fedfocal/rng.h"

namespace fedfocal::nn {
namespace {

using WeightMap = Eigen::Map<const Matrix>;
using WeightMapMut = Eigen::Map<Matrix>;
using BiasMap = Eigen::Map<const Eigen::RowVectorXd>;
using BiasMapMut = Eigen::Map<Eigen::RowVectorXd>;

struct LayerView {
  std::size_t weight_offset;
  std::size_t bias_offset;
  Eigen::Index fan_in;
  Eigen::Index fan_out;
};

std::vector<LayerView> layer_views(const MlpConfig& config) {
  std::vector<LayerView> views;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < config.layer_count(); ++l) {
    const auto in = config.layer_sizes[l];
    const auto out = config.layer_sizes[l + 1];
    views.push_back({offset, offset + in * out, static_cast<Eigen::Index>(in),
                     static_cast<Eigen::Index>(out)});
    offset += in * out + out;
  }
  return views;
}

void check_params(const ModelParams& params, const MlpConfig& config) {
  validate(config);
  if (params.values.size() != param_count(config)) {
    throw DimensionError("parameter vector has " + std::to_string(params.values.size()) +
                         " entries, config expects " + std::to_string(param_count(config)));
  }
}

}  // namespace

void validate(const MlpConfig& config, std::size_t class_count) {
  if (config.layer_sizes.size() < 2) {
    throw ConfigError("MLP needs at least an input and an output layer");
  }
  for (auto n : config.layer_sizes) {
    if (n == 0) throw ConfigError("MLP layer sizes must be positive");
  }
  if (config.head == Head::kSigmoid && config.output_dim() != 1) {
    throw ConfigError("sigmoid head requires a single output unit");
  }
  if (class_count != 0) {
    if (config.head == Head::kSoftmax && config.output_dim() != class_count) {
      throw ConfigError("softmax head has " + std::to_string(config.output_dim()) +
                        " outputs but the data has " + std::to_string(class_count) +
                        " classes");
    }
    if (config.head == Head::kSigmoid && class_count != 2) {
      throw ConfigError("sigmoid head requires exactly 2 classes");
    }
  }
}

std::size_t param_count(const MlpConfig& config) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < config.layer_sizes.size(); ++l) {
    total += config.layer_sizes[l] * config.layer_sizes[l + 1] + config.layer_sizes[l + 1];
  }
  return total;
}

ModelParams init_params(const MlpConfig& config, std::uint64_t seed) {
  validate(config);
  ModelParams params;
  params.values.assign(param_count(config), 0.0);
  Rng rng(seed);
  for (const auto& layer : layer_views(config)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in + layer.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const auto n = static_cast<std::size_t>(layer.fan_in * layer.fan_out);
    for (std::size_t i = 0; i < n; ++i) params.values[layer.weight_offset + i] = dist(rng);
  }
  return params;
}

ForwardTrace forward_trace(const ModelParams& params, const MlpConfig& config,
                           const Matrix& features) {
  check_params(params, config);
  if (static_cast<std::size_t>(features.cols()) != config.input_dim()) {
    throw DimensionError("feature width " + std::to_string(features.cols()) +
                         " does not match input layer " + std::to_string(config.input_dim()));
  }
  if (!features.allFinite()) throw NumericError("non-finite value in input features");

  const auto views = layer_views(config);
  ForwardTrace trace;
  trace.activations.reserve(views.size());
  trace.activations.push_back(features);
  Matrix z;
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    WeightMap w(params.values.data() + v.weight_offset, v.fan_in, v.fan_out);
    BiasMap b(params.values.data() + v.bias_offset, v.fan_out);
    z.noalias() = trace.activations.back() * w;
    z.rowwise() += b;
    if (l + 1 < views.size()) {
      trace.activations.push_back(z.cwiseMax(0.0));
    }
  }

  if (config.head == Head::kSoftmax) {
    // max-subtraction keeps exp() in range
    Eigen::VectorXd row_max = z.rowwise().maxCoeff();
    z.colwise() -= row_max;
    z = z.array().exp().matrix();
    Eigen::VectorXd row_sum = z.rowwise().sum();
    for (Eigen::Index r = 0; r < z.rows(); ++r) z.row(r) /= row_sum(r);
  } else {
    z = z.unaryExpr([](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
  }
  if (!z.allFinite()) throw NumericError("non-finite network output (diverged parameters)");
  trace.probabilities = std::move(z);
  return trace;
}

Matrix forward(const ModelParams& params, const MlpConfig& config, const Matrix& features) {
  return forward_trace(params, config, features).probabilities;
}

std::vector<double> backward(const ModelParams& params, const MlpConfig& config,
                             const ForwardTrace& trace, const Matrix& dloss_dlogits) {
  check_params(params, config);
  const auto rows = trace.probabilities.rows();
  if (dloss_dlogits.rows() != rows ||
      static_cast<std::size_t>(dloss_dlogits.cols()) != config.output_dim()) {
    throw DimensionError("upstream gradient must be batch × output_dim");
  }
  const auto views = layer_views(config);
  if (trace.activations.size() != views.size()) {
    throw DimensionError("forward trace does not match the network depth");
  }

  std::vector<double> grads(params.values.size(), 0.0);
  if (rows == 0) return grads;

  Matrix delta = dloss_dlogits / static_cast<double>(rows);
  for (std::size_t l = views.size(); l-- > 0;) {
    const auto& v = views[l];
    const Matrix& input = trace.activations[l];
    WeightMapMut dw(grads.data() + v.weight_offset, v.fan_in, v.fan_out);
    BiasMapMut db(grads.data() + v.bias_offset, v.fan_out);
    dw.noalias() = input.transpose() * delta;
    db = delta.colwise().sum();
    if (l > 0) {
      WeightMap w(params.values.data() + v.weight_offset, v.fan_in, v.fan_out);
      Matrix upstream = delta * w.transpose();
      // ReLU derivative read off the stored activation
      delta = (input.array() > 0.0).select(upstream, 0.0);
    }
  }
  return grads;
}

std::vector<double> backward(const ModelParams& params, const MlpConfig& config,
                             const Batch& batch, const Matrix& dloss_dlogits) {
  return backward(params, config, forward_trace(params, config, batch.features), dloss_dlogits);
}

void sgd_step_inplace(ModelParams& params, std::span<const double> grads, double lr) {
  if (grads.size() != params.values.size()) {
    throw DimensionError("gradient and parameter lengths differ");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be finite and >= 0");
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient in SGD step");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) params.values[i] -= lr * grads[i];
}

ModelParams sgd_step(const ModelParams& params, std::span<const double> grads, double lr) {
  ModelParams next = params;
  sgd_step_inplace(next, grads, lr);
  return next;
}

}  // namespace fedfocal::nn
