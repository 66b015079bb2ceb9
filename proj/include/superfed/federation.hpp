#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "superfed/data.hpp"
#include "superfed/mixing.hpp"
#include "superfed/network.hpp"

namespace superfed {

enum class LocalInit { fresh_random, copy_global };

struct FedConfig {
  int rounds = 20;                 // R (0 allowed: empty run)
  int personalization_start = 8;   // L, round at which lambda sampling begins
  int batch_size = 10;             // B
  int local_epochs = 5;            // E
  int client_count = 10;           // K
  double fraction = 0.5;           // C, fraction of clients sampled per round
  double eta0 = 0.01;              // base learning rate, decays 1% per round
  double mu = 0.0;                 // proximal strength
  double nu = 0.0;                 // orthogonality strength
  MixScheme scheme = MixScheme::model;
  std::uint64_t seed = 0;
  LocalInit local_init = LocalInit::fresh_random;
  bool cos_per_layer = false;

  void validate() const;
};

// A client's datasets and its persistent local model. The local model is
// created on first participation and never leaves this struct. Random
// streams are derived on demand from (seed, purpose, id, round), so client
// state carries no generator.
struct ClientState {
  int id = -1;
  ClientSplit split;
  std::optional<WeightVector> local_model;
};

struct LocalUpdateResult {
  WeightVector federated;
  std::size_t n_examples = 0;  // training-split size, the aggregation weight
  double mean_loss = 0.0;      // mean per-batch objective over the round
};

// Uniform sample without replacement of size max(floor(fraction*K), 1),
// returned in ascending order. Deterministic per stream.
std::vector<int> select_clients(RngStream& rng, int client_count, double fraction);

// One client round: copy the broadcast model, ensure the local model
// exists, then for every epoch and batch sample lambda, mix, take one
// forward/backward pass at the mixed point, and step both endpoints.
// Only the federated model and the example count are returned.
LocalUpdateResult local_update(ClientState& client, const WeightVector& global,
                               const FedConfig& cfg, int round);

// Weighted mean with weights n_i / sum(n); callers pass results in
// ascending client-id order, which fixes the summation order.
WeightVector aggregate(const std::vector<LocalUpdateResult>& updates);

struct EvalPoint {
  double top1 = 0.0;
  double mean_loss = 0.0;
};

struct RoundRecord {
  int round = -1;
  std::vector<int> selected;
  double mean_train_loss = 0.0;
  double wall_ms = 0.0;  // in-memory only; persisted outputs stay byte-stable
  std::optional<EvalPoint> eval;
};

struct ServerState {
  WeightVector global;
  int round = 0;  // rounds completed
  std::vector<RoundRecord> history;
  // communication probe: payload bytes of every broadcast / upload
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
};

struct RunHooks {
  int eval_every = 0;  // 0 = final evaluation only
  std::function<EvalPoint(const WeightVector&, const std::vector<ClientState>&)> evaluate;
  std::function<void(const WeightVector&, std::vector<ClientState>&)> final_eval;
};

// The server loop: per round select clients, broadcast the global model,
// run the selected local updates (serially or on `threads` workers — the
// result is identical either way), aggregate, record. History already
// written to `state` survives an aborting client update.
void run(const FedConfig& cfg, std::vector<ClientState>& clients, const WeightVector& initial,
         ServerState& state, const RunHooks& hooks = {}, int threads = 0);

}  // namespace superfed
