#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedfocal/data.h"
#include "fedfocal/nn.h"

namespace fedfocal::metrics {

struct EvalResult {
  double overall_accuracy = 0.0;
  // NaN for classes with no support in the evaluated set.
  std::vector<double> per_class_accuracy;
  // Mean recall over the requested minority classes that have support; NaN if none.
  double minority_recall = 0.0;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

// Derives accuracies from a confusion matrix.
EvalResult from_confusion(std::vector<std::vector<std::size_t>> confusion,
                          std::span<const int> minority_classes);

// Prediction is the argmax of each probability row (sigmoid head: p >= 0.5).
EvalResult evaluate_predictions(const Matrix& probs, std::span<const int> labels,
                                std::size_t class_count, std::span<const int> minority_classes);

EvalResult evaluate(const nn::ModelParams& params, const nn::MlpConfig& config,
                    const data::Dataset& test, std::span<const int> minority_classes = {});

struct SummaryRow {
  std::string method;
  std::string dataset;
  double mean = 0.0;
  double std = 0.0;  // sample (n − 1) standard deviation, 0 for one value
  std::size_t n_seeds = 0;
};

SummaryRow summarize(std::span<const double> values, std::string method = {},
                     std::string dataset = {});

// "0.9690±0.0010"
std::string format_mean_std(const SummaryRow& row, int digits = 4);

// Mean absolute round-to-round change. Needs at least two points.
double smoothness_score(std::span<const double> accuracies);

// Shortest round-trip decimal for a double ("nan" for NaN).
std::string format_double(double value);

}  // namespace fedfocal::metrics
