#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace fedfocal {

// Row-major so that one sample is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace nn {

enum class Activation { kRelu };
enum class Head { kSoftmax, kSigmoid };

struct MlpConfig {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  Activation hidden_activation = Activation::kRelu;
  Head head = Head::kSoftmax;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  // Number of label values the head can represent.
  std::size_t class_count() const { return head == Head::kSigmoid ? 2 : output_dim(); }
};

// Throws ConfigError. When class_count is non-zero the head is checked
// against it as well.
void validate(const MlpConfig& config, std::size_t class_count = 0);

// Σ_l (n_l·n_{l+1} + n_{l+1}).
std::size_t param_count(const MlpConfig& config);

// Flat parameters. Layout per layer: row-major weight block
// (fan_in × fan_out) followed by the fan_out bias block.
struct ModelParams {
  std::vector<double> values;

  bool operator==(const ModelParams&) const = default;
};

struct Batch {
  Matrix features;          // batch × input_dim
  std::vector<int> labels;  // class indices
};

// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
ModelParams init_params(const MlpConfig& config, std::uint64_t seed);

// Activations kept by a forward pass so backprop does not recompute them.
struct ForwardTrace {
  std::vector<Matrix> activations;  // activations[0] is the input
  Matrix probabilities;             // batch × output_dim
};

ForwardTrace forward_trace(const ModelParams& params, const MlpConfig& config,
                           const Matrix& features);

// Probability matrix: softmax rows, or sigmoid of the single output.
Matrix forward(const ModelParams& params, const MlpConfig& config, const Matrix& features);
inline Matrix forward(const ModelParams& params, const MlpConfig& config, const Batch& batch) {
  return forward(params, config, batch.features);
}

// dloss_dlogits holds per-sample derivatives of each sample's loss w.r.t.
// its logits; the result is the gradient of the batch-mean loss.
std::vector<double> backward(const ModelParams& params, const MlpConfig& config,
                             const ForwardTrace& trace, const Matrix& dloss_dlogits);
std::vector<double> backward(const ModelParams& params, const MlpConfig& config,
                             const Batch& batch, const Matrix& dloss_dlogits);

// params − lr·grads. Throws NumericError on non-finite gradients.
ModelParams sgd_step(const ModelParams& params, std::span<const double> grads, double lr);
void sgd_step_inplace(ModelParams& params, std::span<const double> grads, double lr);

}  // namespace nn
}  // namespace fedfocal
