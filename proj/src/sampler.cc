#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "fedfocal/errors.h"
#include "fedfocal/federation.h"
#include "fedfocal/rng.h"

namespace fedfocal::federation {
namespace {

std::vector<ClientId> draw(std::vector<ClientId> pool, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

void check_sizes(std::size_t n_clients, std::size_t k) {
  if (k == 0) throw ConfigError("at least one client must be selected per round");
  if (k > n_clients) {
    throw ConfigError("cannot select " + std::to_string(k) + " of " + std::to_string(n_clients) +
                      " clients");
  }
}

}  // namespace

std::size_t carry_cap(double psi, std::size_t k) {
  // tolerance absorbs products like 0.29·100 = 28.999999999999996
  return static_cast<std::size_t>(std::floor(psi * static_cast<double>(k) + 1e-9));
}

SamplerState make_sampler(double psi, std::size_t k, std::size_t n_clients, std::uint64_t seed) {
  check_sizes(n_clients, k);
  if (!(psi >= 0.0 && psi <= 1.0)) throw ConfigError("psi must lie in [0, 1]");
  SamplerState state;
  state.psi = psi;
  state.k = k;
  state.n_clients = n_clients;
  state.rng_seed = seed;
  return state;
}

std::vector<ClientId> random_selection(std::size_t n_clients, std::size_t k, std::uint64_t seed) {
  check_sizes(n_clients, k);
  std::vector<ClientId> pool(n_clients);
  std::iota(pool.begin(), pool.end(), ClientId{0});
  return draw(std::move(pool), k, seed);
}

Selection initial_selection(const SamplerState& state) {
  if (state.round_index != 0) throw IntegrityError("initial selection requested after round 0");
  Selection out;
  out.next = random_selection(state.n_clients, state.k,
                              derive_seed(state.rng_seed, SeedStream::kSelectFill, 0));
  out.audit.filler = out.next;
  out.state = state;
  out.state.prev_selected = out.next;
  out.state.round_index = 1;
  return out;
}

Selection select_clients(const SamplerState& state,
                         const std::map<ClientId, ValidationDelta>& latest_val) {
  check_sizes(state.n_clients, state.k);
  if (state.round_index == 0) throw IntegrityError("round 0 must use initial_selection");
  const std::set<ClientId> prev(state.prev_selected.begin(), state.prev_selected.end());
  if (prev.size() != state.prev_selected.size()) {
    throw IntegrityError("duplicate client id in previous selection");
  }
  if (latest_val.size() != prev.size() ||
      !std::equal(prev.begin(), prev.end(), latest_val.begin(),
                  [](ClientId id, const auto& kv) { return id == kv.first; })) {
    throw IntegrityError("validation losses must cover exactly the previous selection");
  }

  Selection out;
  for (const auto& [id, delta] : latest_val) {
    if (id >= state.n_clients) throw IntegrityError("client id " + std::to_string(id) + " out of range");
    if (delta.prev_loss && delta.new_loss < *delta.prev_loss) out.audit.improved.push_back(id);
  }

  const auto round = state.round_index;
  const auto cap = carry_cap(state.psi, state.k);
  const auto carry_n = std::min(out.audit.improved.size(), cap);
  out.audit.carried =
      carry_n == 0 ? std::vector<ClientId>{}
                   : draw(out.audit.improved, carry_n,
                          derive_seed(state.rng_seed, SeedStream::kSelectCarry, round));

  std::vector<ClientId> pool;
  pool.reserve(state.n_clients);
  for (ClientId id = 0; id < state.n_clients; ++id) {
    if (!std::binary_search(out.audit.carried.begin(), out.audit.carried.end(), id)) {
      pool.push_back(id);
    }
  }
  out.audit.filler = draw(std::move(pool), state.k - carry_n,
                          derive_seed(state.rng_seed, SeedStream::kSelectFill, round));

  std::merge(out.audit.carried.begin(), out.audit.carried.end(), out.audit.filler.begin(),
             out.audit.filler.end(), std::back_inserter(out.next));

  out.state = state;
  for (const auto& [id, delta] : latest_val) out.state.val_history[id].push_back(delta.new_loss);
  out.state.prev_selected = out.next;
  out.state.round_index = round + 1;
  return out;
}

}  // namespace fedfocal::federation
