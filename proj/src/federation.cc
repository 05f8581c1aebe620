#include "fedfocal/federation.h"

#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedfocal/errors.h"
#include "fedfocal/rng.h"

namespace fedfocal::federation {
namespace {

// Runs task(i) for i in [0, n) on up to `workers` threads. Each task writes
// only its own slot, so results do not depend on scheduling. Exceptions are
// rethrown in index order.
template <typename Task>
void for_each_slot(std::size_t n, std::size_t workers, Task&& task) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      task(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto threads = std::min(workers, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw NumericError(std::string(what) + " is not finite (divergence)");
}

// Re-raises numeric failures with round/client context.
template <typename Fn>
auto with_context(std::size_t round, ClientId client, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError("round " + std::to_string(round) + ", client " + std::to_string(client) +
                       ": " + e.what());
  }
}

double weighted_train_loss(const std::vector<LocalResult>& results,
                           const std::vector<std::size_t>& counts) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    total += results[i].train_loss * static_cast<double>(counts[i]);
    n += counts[i];
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

void fill_eval(RoundReport& report, const metrics::EvalResult& eval) {
  report.global_test_accuracy = eval.overall_accuracy;
  report.per_class_accuracy = eval.per_class_accuracy;
  report.minority_recall = eval.minority_recall;
}

// Accumulates confusion matrices of several models on the same test set.
metrics::EvalResult pooled_eval(const std::vector<nn::ModelParams>& models,
                                const ExperimentConfig& config, const data::Dataset& test) {
  const auto n_classes = test.class_count;
  std::vector<std::vector<std::size_t>> confusion(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (const auto& m : models) {
    const auto e = metrics::evaluate(m, config.model, test);
    for (std::size_t i = 0; i < n_classes; ++i)
      for (std::size_t j = 0; j < n_classes; ++j) confusion[i][j] += e.confusion[i][j];
  }
  return metrics::from_confusion(std::move(confusion), config.minority_classes);
}

}  // namespace

std::uint64_t local_train_seed(std::uint64_t seed, std::size_t round, ClientId client) {
  return derive_seed(seed, SeedStream::kLocalTrain, round, client);
}

LocalResult local_train(const nn::ModelParams& params, const data::Dataset& train,
                        const data::Dataset& validation, const nn::MlpConfig& model,
                        const loss::LossSpec& loss, const TrainingConfig& training,
                        std::uint64_t seed) {
  if (train.size() == 0 || validation.size() == 0) {
    throw ValidationError("local training needs non-empty train and validation shards");
  }
  if (training.batch_size == 0) throw ConfigError("batch size must be positive");

  LocalResult out{params, 0.0, 0.0};
  Rng rng(seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix xb;
  std::vector<int> yb;
  for (std::size_t epoch = 0; epoch < training.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += training.batch_size) {
      const auto rows = std::min(training.batch_size, order.size() - start);
      xb.resize(static_cast<Eigen::Index>(rows), train.features.cols());
      yb.resize(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) =
            train.features.row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = train.labels[order[start + i]];
      }
      const auto trace = nn::forward_trace(out.params, model, xb);
      const auto bl = loss::batch_loss(trace.probabilities, yb, loss, model.head);
      check_finite(bl.mean_loss, "training loss");
      const auto grads = nn::backward(out.params, model, trace, bl.dloss_dlogits);
      nn::sgd_step_inplace(out.params, grads, training.lr);
      epoch_loss += bl.mean_loss * static_cast<double>(rows);
    }
    out.train_loss = epoch_loss / static_cast<double>(order.size());
  }
  if (training.local_epochs == 0) {
    out.train_loss = loss::mean_loss(nn::forward(out.params, model, train.features), train.labels,
                                     loss, model.head);
  }
  out.val_loss = loss::mean_loss(nn::forward(out.params, model, validation.features),
                                 validation.labels, loss, model.head);
  check_finite(out.train_loss, "training loss");
  check_finite(out.val_loss, "validation loss");
  return out;
}

nn::ModelParams fedavg_aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw AggregationError("no client updates to aggregate");
  const auto n = updates.front().params.values.size();
  std::size_t total = 0;
  for (const auto& u : updates) {
    if (u.params.values.size() != n) throw AggregationError("client updates differ in layout");
    total += u.sample_count;
  }
  if (total == 0) throw AggregationError("client updates carry zero samples");
  if (updates.size() == 1) return updates.front().params;

  nn::ModelParams out;
  out.values.assign(n, 0.0);
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.sample_count) / static_cast<double>(total);
    for (std::size_t i = 0; i < n; ++i) out.values[i] += w * u.params.values[i];
  }
  return out;
}

std::size_t clients_per_round(const ExperimentConfig& config) {
  const auto k = static_cast<std::size_t>(
      std::lround(config.client_ratio * static_cast<double>(config.n_clients)));
  return std::max<std::size_t>(1, k);
}

std::vector<std::string> validate(const ExperimentConfig& config, std::size_t class_count) {
  std::vector<std::string> warnings;
  nn::validate(config.model, class_count);
  config.loss.validate(class_count);
  if (config.n_clients == 0) throw ConfigError("need at least one client");
  if (!(config.client_ratio > 0.0 && config.client_ratio <= 1.0)) {
    throw ConfigError("client_ratio must lie in (0, 1]");
  }
  if (config.rounds == 0) throw ConfigError("rounds must be >= 1");
  if (config.seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(config.psi >= 0.0 && config.psi <= 1.0)) throw ConfigError("psi must lie in [0, 1]");
  if (config.psi == 0.0 || config.psi == 1.0) {
    warnings.push_back("psi=" + metrics::format_double(config.psi) +
                       " is on the boundary of the open interval (0, 1)");
  }
  if (!(config.training.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (config.training.batch_size == 0) throw ConfigError("batch size must be positive");
  for (int c : config.minority_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= class_count) {
      throw ConfigError("minority class " + std::to_string(c) + " out of range");
    }
  }
  if (config.algorithm == Algorithm::kFedAvg && carry_cap(config.psi, clients_per_round(config)) == 0 &&
      config.psi > 0.0) {
    warnings.push_back("floor(psi*K) is 0 for K=" + std::to_string(clients_per_round(config)) +
                       "; the improved-client carry-over is inactive");
  }
  return warnings;
}

RoundOutcome run_round(const nn::ModelParams& global, const data::FederatedPartition& partition,
                       const SamplerState& state, const ExperimentConfig& config,
                       const RoundContext& context) {
  if (context.test == nullptr) throw ConfigError("run_round needs a test set");
  if (state.n_clients != partition.client_count()) {
    throw DimensionError("sampler and partition disagree on the client count");
  }
  const auto round = state.round_index;
  Selection sel = round == 0 ? initial_selection(state) : select_clients(state, context.latest_val);
  const auto& ids = sel.next;

  std::vector<LocalResult> results(ids.size());
  for_each_slot(ids.size(), context.workers, [&](std::size_t slot) {
    const auto id = ids[slot];
    const auto& client = partition.clients[id];
    results[slot] = with_context(round, id, [&] {
      return local_train(global, client.train, client.validation, config.model, config.loss,
                         config.training, local_train_seed(context.seed, round, id));
    });
  });

  std::vector<ClientUpdate> updates;
  std::vector<std::size_t> counts;
  RoundOutcome out;
  for (std::size_t slot = 0; slot < ids.size(); ++slot) {
    const auto id = ids[slot];
    const auto n = partition.clients[id].train.size();
    updates.push_back({results[slot].params, n});
    counts.push_back(n);
    ValidationDelta delta;
    delta.new_loss = results[slot].val_loss;
    if (auto it = sel.state.val_history.find(id);
        it != sel.state.val_history.end() && !it->second.empty()) {
      delta.prev_loss = it->second.back();
    }
    out.latest_val[id] = delta;
    out.report.per_client_val_loss[id] = delta.new_loss;
  }

  out.params = fedavg_aggregate(updates);
  out.eval = metrics::evaluate(out.params, config.model, *context.test, config.minority_classes);

  out.report.round_index = round;
  out.report.selected = ids;
  out.report.improved = sel.audit.improved;
  out.report.carried = sel.audit.carried;
  out.report.filler = sel.audit.filler;
  out.report.mean_train_loss = weighted_train_loss(results, counts);
  fill_eval(out.report, out.eval);
  out.state = std::move(sel.state);
  return out;
}

namespace {

SeedRun run_fedavg(const ExperimentConfig& config, const data::FederatedPartition& partition,
                   const data::Dataset& test, std::uint64_t seed, const RunOptions& options) {
  SeedRun run;
  run.seed = seed;
  auto params = nn::init_params(config.model, derive_seed(seed, SeedStream::kInit));
  auto state = make_sampler(config.psi, clients_per_round(config), config.n_clients, seed);
  RoundContext ctx;
  ctx.seed = seed;
  ctx.test = &test;
  ctx.workers = options.workers;
  for (std::size_t r = 0; r < config.rounds; ++r) {
    auto outcome = run_round(params, partition, state, config, ctx);
    params = std::move(outcome.params);
    state = std::move(outcome.state);
    ctx.latest_val = std::move(outcome.latest_val);
    run.trace.push_back(std::move(outcome.report));
    run.final_eval = std::move(outcome.eval);
  }
  for (const auto& client : partition.clients) {
    if (client.test.size() > 0) {
      run.per_client_accuracy.push_back(metrics::evaluate(params, config.model, client.test).overall_accuracy);
    }
  }
  return run;
}

SeedRun run_local_only(const ExperimentConfig& config, const data::FederatedPartition& partition,
                       const data::Dataset& test, std::uint64_t seed, const RunOptions& options) {
  SeedRun run;
  run.seed = seed;
  const auto n = partition.client_count();
  std::vector<nn::ModelParams> models(n, nn::init_params(config.model, derive_seed(seed, SeedStream::kInit)));
  std::vector<ClientId> all(n);
  std::iota(all.begin(), all.end(), ClientId{0});
  for (std::size_t r = 0; r < config.rounds; ++r) {
    std::vector<LocalResult> results(n);
    for_each_slot(n, options.workers, [&](std::size_t c) {
      const auto& client = partition.clients[c];
      results[c] = with_context(r, c, [&] {
        return local_train(models[c], client.train, client.validation, config.model, config.loss,
                           config.training, local_train_seed(seed, r, c));
      });
    });
    RoundReport report;
    report.round_index = r;
    report.selected = all;
    std::vector<std::size_t> counts;
    for (std::size_t c = 0; c < n; ++c) {
      models[c] = results[c].params;
      report.per_client_val_loss[c] = results[c].val_loss;
      counts.push_back(partition.clients[c].train.size());
    }
    report.mean_train_loss = weighted_train_loss(results, counts);
    run.final_eval = pooled_eval(models, config, test);
    fill_eval(report, run.final_eval);
    run.trace.push_back(std::move(report));
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (partition.clients[c].test.size() > 0) {
      run.per_client_accuracy.push_back(
          metrics::evaluate(models[c], config.model, partition.clients[c].test).overall_accuracy);
    }
  }
  return run;
}

SeedRun run_global_only(const ExperimentConfig& config, const data::FederatedPartition& partition,
                        const data::Dataset& test, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  std::vector<const data::Dataset*> trains, vals;
  for (const auto& c : partition.clients) {
    trains.push_back(&c.train);
    vals.push_back(&c.validation);
  }
  const auto pooled_train = data::concatenate(trains, "pooled/train");
  const auto pooled_val = data::concatenate(vals, "pooled/val");
  auto params = nn::init_params(config.model, derive_seed(seed, SeedStream::kInit));
  for (std::size_t r = 0; r < config.rounds; ++r) {
    const auto result = with_context(r, 0, [&] {
      return local_train(params, pooled_train, pooled_val, config.model, config.loss,
                         config.training, local_train_seed(seed, r, partition.client_count()));
    });
    params = result.params;
    RoundReport report;
    report.round_index = r;
    report.mean_train_loss = result.train_loss;
    run.final_eval = metrics::evaluate(params, config.model, test, config.minority_classes);
    fill_eval(report, run.final_eval);
    run.trace.push_back(std::move(report));
  }
  for (const auto& client : partition.clients) {
    if (client.test.size() > 0) {
      run.per_client_accuracy.push_back(metrics::evaluate(params, config.model, client.test).overall_accuracy);
    }
  }
  return run;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                                const RunOptions& options) {
  data.train.validate();
  validate(config, data.train.class_count);
  if (data.test) {
    data.test->validate();
    if (data.test->class_count != data.train.class_count || data.test->dim() != data.train.dim()) {
      throw DimensionError("test set shape differs from the training set");
    }
  }

  ExperimentResult result;
  std::vector<double> finals;
  for (const auto seed : config.seeds) {
    const auto partition = data::partition(data.train, config.n_clients, config.scheme,
                                           config.val_fraction, config.test_fraction,
                                           derive_seed(seed, SeedStream::kPartition));
    data::Dataset pooled_test;
    const data::Dataset* test = nullptr;
    if (data.test) {
      test = &*data.test;
    } else {
      std::vector<const data::Dataset*> parts;
      for (const auto& c : partition.clients) parts.push_back(&c.test);
      pooled_test = data::concatenate(parts, data.train.name + "/pooled-test");
      if (pooled_test.size() == 0) {
        throw ConfigError("no test set: provide one or set a positive test fraction");
      }
      test = &pooled_test;
    }

    SeedRun run;
    switch (config.algorithm) {
      case Algorithm::kFedAvg:
        run = run_fedavg(config, partition, *test, seed, options);
        break;
      case Algorithm::kLocalOnly:
        run = run_local_only(config, partition, *test, seed, options);
        break;
      case Algorithm::kGlobalOnly:
        run = run_global_only(config, partition, *test, seed);
        break;
    }
    std::vector<double> accs;
    for (const auto& r : run.trace) accs.push_back(r.global_test_accuracy);
    run.smoothness = accs.size() >= 2 ? metrics::smoothness_score(accs) : 0.0;
    finals.push_back(run.final_eval.overall_accuracy);
    result.runs.push_back(std::move(run));
  }
  result.summary = metrics::summarize(finals, config.name, data.train.name);
  return result;
}

}  // namespace fedfocal::federation
