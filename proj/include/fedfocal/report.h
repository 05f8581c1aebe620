#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fedfocal {

using ClientId = std::size_t;

// One row of the per-round trace. For FedAvg rounds `selected` is the
// disjoint union of `carried` and `filler`; `improved` is the improved set
// the carried clients were drawn from.
struct RoundReport {
  std::size_t round_index = 0;
  std::vector<ClientId> selected;
  std::vector<ClientId> improved;
  std::vector<ClientId> carried;
  std::vector<ClientId> filler;
  std::map<ClientId, double> per_client_val_loss;
  double global_test_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  double minority_recall = 0.0;
  double mean_train_loss = 0.0;
};

namespace metrics {

// CSV with header
//   round,accuracy,mean_train_loss,minority_recall,selected_ids,improved_ids,
//   carried_ids,filler_ids,val_losses,per_class_accuracy
// Id lists are ';'-separated, val_losses is "id:loss;...". Reals use the
// shortest round-trip representation.
std::string emit_trace(std::span<const RoundReport> reports);

}  // namespace metrics
}  // namespace fedfocal
