#include "fedfocal/metrics.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>

#include "fedfocal/errors.h"
#include "fedfocal/report.h"

namespace fedfocal::metrics {

EvalResult evaluate_predictions(const Matrix& probs, std::span<const int> labels,
                                std::size_t class_count, std::span<const int> minority_classes) {
  if (labels.empty()) throw ValidationError("cannot evaluate on an empty set");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("probability rows and labels differ in count");
  }
  const bool sigmoid = probs.cols() == 1;
  if (!sigmoid && static_cast<std::size_t>(probs.cols()) != class_count) {
    throw DimensionError("model emits " + std::to_string(probs.cols()) + " classes, data has " +
                         std::to_string(class_count));
  }
  if (sigmoid && class_count != 2) throw DimensionError("sigmoid output needs 2 classes");

  std::vector<std::vector<std::size_t>> confusion(class_count,
                                                  std::vector<std::size_t>(class_count, 0));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const auto truth = static_cast<std::size_t>(labels[static_cast<std::size_t>(r)]);
    if (truth >= class_count) throw DimensionError("label outside class range");
    std::size_t pred = 0;
    if (sigmoid) {
      pred = probs(r, 0) >= 0.5 ? 1 : 0;
    } else {
      Eigen::Index arg = 0;
      probs.row(r).maxCoeff(&arg);
      pred = static_cast<std::size_t>(arg);
    }
    ++confusion[truth][pred];
  }
  return from_confusion(std::move(confusion), minority_classes);
}

EvalResult from_confusion(std::vector<std::vector<std::size_t>> confusion,
                          std::span<const int> minority_classes) {
  const auto class_count = confusion.size();
  EvalResult out;
  out.confusion = std::move(confusion);
  std::size_t correct = 0;
  std::size_t total = 0;
  out.per_class_accuracy.resize(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    if (out.confusion[c].size() != class_count) throw DimensionError("confusion matrix is not square");
    std::size_t support = 0;
    for (auto n : out.confusion[c]) support += n;
    total += support;
    correct += out.confusion[c][c];
    out.per_class_accuracy[c] = support == 0 ? std::numeric_limits<double>::quiet_NaN()
                                             : static_cast<double>(out.confusion[c][c]) /
                                                   static_cast<double>(support);
  }
  if (total == 0) throw ValidationError("confusion matrix is empty");
  out.overall_accuracy = static_cast<double>(correct) / static_cast<double>(total);

  double recall_sum = 0.0;
  std::size_t recall_n = 0;
  for (int c : minority_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= class_count) {
      throw DimensionError("minority class " + std::to_string(c) + " out of range");
    }
    const double acc = out.per_class_accuracy[static_cast<std::size_t>(c)];
    if (!std::isnan(acc)) {
      recall_sum += acc;
      ++recall_n;
    }
  }
  out.minority_recall = recall_n == 0 ? std::numeric_limits<double>::quiet_NaN()
                                      : recall_sum / static_cast<double>(recall_n);
  return out;
}

EvalResult evaluate(const nn::ModelParams& params, const nn::MlpConfig& config,
                    const data::Dataset& test, std::span<const int> minority_classes) {
  if (test.size() == 0) throw ValidationError("cannot evaluate on an empty test set");
  if (config.class_count() != test.class_count) {
    throw DimensionError("model has " + std::to_string(config.class_count()) +
                         " classes, test set has " + std::to_string(test.class_count));
  }
  return evaluate_predictions(nn::forward(params, config, test.features), test.labels,
                              test.class_count, minority_classes);
}

SummaryRow summarize(std::span<const double> values, std::string method, std::string dataset) {
  if (values.empty()) throw ValidationError("cannot summarize zero results");
  SummaryRow row;
  row.method = std::move(method);
  row.dataset = std::move(dataset);
  row.n_seeds = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  row.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return row;
}

std::string format_mean_std(const SummaryRow& row, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", digits, row.mean, digits, row.std);
  return buf;
}

double smoothness_score(std::span<const double> accuracies) {
  if (accuracies.size() < 2) throw ValidationError("smoothness needs at least two rounds");
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < accuracies.size(); ++t) {
    total += std::abs(accuracies[t + 1] - accuracies[t]);
  }
  return total / static_cast<double>(accuracies.size() - 1);
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

namespace {

std::string join_ids(const std::vector<ClientId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

}  // namespace

std::string emit_trace(std::span<const RoundReport> reports) {
  std::string out =
      "round,accuracy,mean_train_loss,minority_recall,selected_ids,improved_ids,carried_ids,"
      "filler_ids,val_losses,per_class_accuracy\n";
  for (const auto& r : reports) {
    out += std::to_string(r.round_index);
    out += ',' + format_double(r.global_test_accuracy);
    out += ',' + format_double(r.mean_train_loss);
    out += ',' + format_double(r.minority_recall);
    out += ',' + join_ids(r.selected);
    out += ',' + join_ids(r.improved);
    out += ',' + join_ids(r.carried);
    out += ',' + join_ids(r.filler);
    out += ',';
    bool first = true;
    for (const auto& [id, loss] : r.per_client_val_loss) {
      if (!first) out += ';';
      first = false;
      out += std::to_string(id) + ':' + format_double(loss);
    }
    out += ',';
    for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
      if (c) out += ';';
      out += format_double(r.per_class_accuracy[c]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace fedfocal::metrics
