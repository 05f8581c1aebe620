#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedfocal/data.h"
#include "fedfocal/losses.h"
#include "fedfocal/metrics.h"
#include "fedfocal/nn.h"
#include "fedfocal/report.h"

namespace fedfocal::federation {

// ---- client selection ----

struct SamplerState {
  double psi = 0.0;
  std::size_t k = 1;          // clients per round
  std::size_t n_clients = 1;  // pool size
  std::vector<ClientId> prev_selected;  // C_i, ascending
  // Validation losses recorded for each client, one per round it trained.
  std::map<ClientId, std::vector<double>> val_history;
  std::uint64_t rng_seed = 0;
  std::size_t round_index = 0;  // number of selections made so far
};

struct ValidationDelta {
  std::optional<double> prev_loss;  // empty if the client never trained before
  double new_loss = 0.0;
};

struct SelectionAudit {
  std::vector<ClientId> improved;  // V: validation loss strictly decreased
  std::vector<ClientId> carried;   // V^c ⊆ V, at most ⌊ψK⌋
  std::vector<ClientId> filler;    // R: K − |V^c| random clients outside V^c
};

struct Selection {
  std::vector<ClientId> next;  // ascending
  SamplerState state;
  SelectionAudit audit;
};

// ⌊ψK⌋
std::size_t carry_cap(double psi, std::size_t k);

// Throws ConfigError for K = 0, K > N or ψ outside [0, 1].
SamplerState make_sampler(double psi, std::size_t k, std::size_t n_clients, std::uint64_t seed);

// Uniform K-of-N draw without replacement, ascending ids.
std::vector<ClientId> random_selection(std::size_t n_clients, std::size_t k, std::uint64_t seed);

// Round 0: C_0 is a plain random selection.
Selection initial_selection(const SamplerState& state);

// Rounds >= 1. latest_val must cover exactly state.prev_selected.
Selection select_clients(const SamplerState& state,
                         const std::map<ClientId, ValidationDelta>& latest_val);

// ---- local training and aggregation ----

struct TrainingConfig {
  std::size_t local_epochs = 1;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

struct LocalResult {
  nn::ModelParams params;
  double train_loss = 0.0;  // mean loss over the last epoch's batches
  double val_loss = 0.0;    // on the validation shard, after training
};

LocalResult local_train(const nn::ModelParams& params, const data::Dataset& train,
                        const data::Dataset& validation, const nn::MlpConfig& model,
                        const loss::LossSpec& loss, const TrainingConfig& training,
                        std::uint64_t seed);

struct ClientUpdate {
  nn::ModelParams params;
  std::size_t sample_count = 0;
};

// Sample-count weighted mean, reduced in list order.
nn::ModelParams fedavg_aggregate(const std::vector<ClientUpdate>& updates);

// ---- experiments ----

enum class Algorithm { kFedAvg, kLocalOnly, kGlobalOnly };

struct ExperimentConfig {
  std::string name = "experiment";
  nn::MlpConfig model;
  loss::LossSpec loss;
  std::size_t n_clients = 10;
  data::PartitionScheme scheme = data::PartitionScheme::kIidShards;
  double val_fraction = 0.1;
  double test_fraction = 0.0;
  double psi = 0.0;
  double client_ratio = 0.1;
  std::size_t rounds = 1;
  TrainingConfig training;
  std::vector<std::uint64_t> seeds{0};
  Algorithm algorithm = Algorithm::kFedAvg;
  std::vector<int> minority_classes;
};

// K = max(1, round(client_ratio · N)).
std::size_t clients_per_round(const ExperimentConfig& config);

// Throws ConfigError; returns non-fatal warnings (e.g. ψ on the boundary).
std::vector<std::string> validate(const ExperimentConfig& config, std::size_t class_count);

struct ExperimentData {
  data::Dataset train;
  // Evaluation set. When absent, the pooled client test shards are used.
  std::optional<data::Dataset> test;
};

struct RunOptions {
  std::size_t workers = 1;  // wall time only, never results
};

struct RoundContext {
  std::uint64_t seed = 0;
  const data::Dataset* test = nullptr;
  std::size_t workers = 1;
  // Validation results of the previous round, consumed by select_clients.
  std::map<ClientId, ValidationDelta> latest_val;
};

struct RoundOutcome {
  nn::ModelParams params;
  RoundReport report;
  SamplerState state;
  std::map<ClientId, ValidationDelta> latest_val;
  metrics::EvalResult eval;
};

// select → broadcast → local_train → fedavg_aggregate → evaluate.
RoundOutcome run_round(const nn::ModelParams& global, const data::FederatedPartition& partition,
                       const SamplerState& state, const ExperimentConfig& config,
                       const RoundContext& context);

struct SeedRun {
  std::uint64_t seed = 0;
  metrics::EvalResult final_eval;
  std::vector<RoundReport> trace;
  // Accuracy of the final model on each client's own test shard (empty shards skipped).
  std::vector<double> per_client_accuracy;
  double smoothness = 0.0;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  metrics::SummaryRow summary;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                                const RunOptions& options = {});

// Seed used to shuffle client `client`'s data in round `round`.
std::uint64_t local_train_seed(std::uint64_t seed, std::size_t round, ClientId client);

}  // namespace fedfocal::federation
