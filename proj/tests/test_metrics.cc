#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fedfocal/errors.h"
#include "fedfocal/metrics.h"
#include "fedfocal/report.h"
#include "oracles.h"

using namespace fedfocal;

namespace {

Matrix one_hot_rows(const std::vector<int>& predicted, std::size_t classes) {
  Matrix m = Matrix::Constant(static_cast<Eigen::Index>(predicted.size()),
                              static_cast<Eigen::Index>(classes), 0.01);
  for (std::size_t i = 0; i < predicted.size(); ++i) m(static_cast<Eigen::Index>(i), predicted[i]) = 0.9;
  return m;
}

}  // namespace

TEST(Evaluate, PerfectPredictor) {
  const std::vector<int> labels{0, 1, 2, 2, 1};
  const auto r = metrics::evaluate_predictions(one_hot_rows(labels, 3), labels, 3, {});
  EXPECT_EQ(r.overall_accuracy, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) EXPECT_EQ(r.confusion[i][j], 0u);
    }
  }
  EXPECT_EQ(r.confusion[2][2], 2u);
}

TEST(Evaluate, ConstantPredictorOnBalancedClasses) {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 7, c);
  const std::vector<int> zero(labels.size(), 4);
  const std::vector<int> minority{4, 5};
  const auto r = metrics::evaluate_predictions(one_hot_rows(zero, 10), labels, 10, minority);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.1);
  EXPECT_EQ(r.per_class_accuracy[4], 1.0);
  EXPECT_EQ(r.per_class_accuracy[0], 0.0);
  EXPECT_DOUBLE_EQ(r.minority_recall, 0.5);
}

TEST(Evaluate, MatchesBruteForceRecount) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t classes = 2 + rng() % 6, n = 1 + rng() % 200;
    std::vector<int> labels(n), predicted(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % classes);
      predicted[i] = static_cast<int>(rng() % classes);
    }
    const auto r = metrics::evaluate_predictions(one_hot_rows(predicted, classes), labels, classes, {});
    std::size_t correct = 0, total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      std::size_t support = 0, hit = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != static_cast<int>(c)) continue;
        ++support;
        hit += predicted[i] == labels[i];
        ASSERT_GT(r.confusion[c][static_cast<std::size_t>(predicted[i])], 0u);
      }
      std::size_t row_sum = 0;
      for (auto v : r.confusion[c]) row_sum += v;
      ASSERT_EQ(row_sum, support);
      ASSERT_EQ(r.confusion[c][c], hit);
      if (support == 0) {
        ASSERT_TRUE(std::isnan(r.per_class_accuracy[c]));
      } else {
        ASSERT_DOUBLE_EQ(r.per_class_accuracy[c], static_cast<double>(hit) / static_cast<double>(support));
      }
      correct += hit;
      total += support;
    }
    ASSERT_EQ(total, n);
    ASSERT_DOUBLE_EQ(r.overall_accuracy, static_cast<double>(correct) / static_cast<double>(n));
  }
}

TEST(Evaluate, SigmoidThreshold) {
  Matrix p(4, 1);
  p << 0.2, 0.5, 0.7, 0.49;
  const std::vector<int> labels{0, 1, 0, 1};
  const auto r = metrics::evaluate_predictions(p, labels, 2, {});
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.5);
  EXPECT_EQ(r.confusion[0][1], 1u);
  EXPECT_EQ(r.confusion[1][0], 1u);
}

TEST(Evaluate, Errors) {
  const std::vector<int> labels{0, 1};
  EXPECT_THROW(metrics::evaluate_predictions(one_hot_rows(labels, 3), labels, 4, {}), DimensionError);
  EXPECT_THROW(metrics::evaluate_predictions(Matrix(0, 3), {}, 3, {}), ValidationError);
  const std::vector<int> bad_minority{7};
  EXPECT_THROW(metrics::evaluate_predictions(one_hot_rows(labels, 3), labels, 3, bad_minority),
               DimensionError);
  nn::MlpConfig cfg{{2, 3}};
  data::Dataset two_class{"t", Matrix::Zero(2, 2), {0, 1}, 2};
  EXPECT_THROW(metrics::evaluate(nn::init_params(cfg, 1), cfg, two_class), DimensionError);
}

TEST(Evaluate, MinorityRecallSkipsUnsupportedClasses) {
  const std::vector<int> labels{0, 0, 1};
  const std::vector<int> pred{0, 1, 1};
  const std::vector<int> minority{0, 2};
  const auto r = metrics::evaluate_predictions(one_hot_rows(pred, 3), labels, 3, minority);
  EXPECT_DOUBLE_EQ(r.minority_recall, 0.5);
  const std::vector<int> absent{2};
  EXPECT_TRUE(std::isnan(metrics::evaluate_predictions(one_hot_rows(pred, 3), labels, 3, absent).minority_recall));
}

TEST(Summarize, Examples) {
  const std::vector<double> one{0.5};
  auto row = metrics::summarize(one, "m", "d");
  EXPECT_EQ(row.mean, 0.5);
  EXPECT_EQ(row.std, 0.0);
  EXPECT_EQ(row.n_seeds, 1u);

  const std::vector<double> two{0.4, 0.6};
  row = metrics::summarize(two);
  EXPECT_DOUBLE_EQ(row.mean, 0.5);
  EXPECT_NEAR(row.std, std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(row.std, 0.1414213562373095, 1e-12);

  EXPECT_THROW(metrics::summarize(std::vector<double>{}), ValidationError);
}

TEST(Summarize, TwoPassOracleAndReorder) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng() % 10);
    for (auto& x : v) x = u(rng);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const auto row = metrics::summarize(v);
    ASSERT_NEAR(row.mean, mean, 1e-12);
    ASSERT_NEAR(row.std, std::sqrt(ss / static_cast<double>(v.size() - 1)), 1e-12);
    std::reverse(v.begin(), v.end());
    ASSERT_NEAR(metrics::summarize(v).std, row.std, 1e-15);
  }
}

TEST(Summarize, Format) {
  metrics::SummaryRow row{"m", "d", 0.969, 0.001, 5};
  EXPECT_EQ(metrics::format_mean_std(row), "0.9690±0.0010");
}

TEST(Smoothness, Examples) {
  const std::vector<double> flat{0.3, 0.3, 0.3};
  EXPECT_EQ(metrics::smoothness_score(flat), 0.0);
  const std::vector<double> zig{0.0, 1.0, 0.0};
  EXPECT_EQ(metrics::smoothness_score(zig), 1.0);
  EXPECT_THROW(metrics::smoothness_score(std::vector<double>{0.5}), ValidationError);
}

TEST(Smoothness, TranslationInvariantAndNonNegative) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(2 + rng() % 30);
    for (auto& x : a) x = u(rng);
    auto b = a;
    for (auto& x : b) x += 0.25;
    const double s = metrics::smoothness_score(a);
    ASSERT_GE(s, 0.0);
    ASSERT_NEAR(metrics::smoothness_score(b), s, 1e-12);
  }
}

TEST(Trace, LineCounts) {
  std::vector<RoundReport> reports;
  EXPECT_EQ(metrics::emit_trace(reports),
            "round,accuracy,mean_train_loss,minority_recall,selected_ids,improved_ids,carried_ids,"
            "filler_ids,val_losses,per_class_accuracy\n");
  reports.resize(3);
  const auto text = metrics::emit_trace(reports);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Trace, ParsesBack) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RoundReport> reports(5);
  for (std::size_t r = 0; r < reports.size(); ++r) {
    auto& rep = reports[r];
    rep.round_index = r;
    rep.global_test_accuracy = u(rng);
    rep.mean_train_loss = u(rng) * 3.0;
    rep.minority_recall = r == 2 ? std::nan("") : u(rng);
    rep.selected = {1, 4, 7};
    rep.improved = r ? std::vector<ClientId>{4, 7} : std::vector<ClientId>{};
    rep.carried = r ? std::vector<ClientId>{4} : std::vector<ClientId>{};
    rep.filler = r ? std::vector<ClientId>{1, 7} : rep.selected;
    for (auto id : rep.selected) rep.per_client_val_loss[id] = u(rng);
    rep.per_class_accuracy = {u(rng), u(rng), u(rng)};
  }
  std::istringstream in(metrics::emit_trace(reports));
  std::string line;
  std::getline(in, line);
  for (const auto& rep : reports) {
    ASSERT_TRUE(std::getline(in, line));
    const auto f = oracle::split(line, ',');
    ASSERT_EQ(f.size(), 10u);
    EXPECT_EQ(std::stoul(f[0]), rep.round_index);
    EXPECT_NEAR(std::stod(f[1]), rep.global_test_accuracy, 1e-12);
    EXPECT_NEAR(std::stod(f[2]), rep.mean_train_loss, 1e-12);
    if (std::isnan(rep.minority_recall)) {
      EXPECT_EQ(f[3], "nan");
    } else {
      EXPECT_NEAR(std::stod(f[3]), rep.minority_recall, 1e-12);
    }
    EXPECT_EQ(f[4], "1;4;7");
    EXPECT_EQ(f[6], rep.carried.empty() ? "" : "4");
    for (const auto& kv : oracle::split(f[8], ';')) {
      const auto parts = oracle::split(kv, ':');
      EXPECT_NEAR(std::stod(parts[1]), rep.per_client_val_loss.at(std::stoul(parts[0])), 1e-12);
    }
    const auto pc = oracle::split(f[9], ';');
    ASSERT_EQ(pc.size(), 3u);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(std::stod(pc[c]), rep.per_class_accuracy[c], 1e-12);
  }
}

TEST(FormatDouble, RoundTrips) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    ASSERT_EQ(std::stod(metrics::format_double(x)), x);
  }
  EXPECT_EQ(metrics::format_double(std::nan("")), "nan");
}
