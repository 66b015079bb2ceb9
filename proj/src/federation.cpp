#include "superfed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

namespace superfed {

void FedConfig::validate() const {
  if (rounds < 0) throw std::invalid_argument("FedConfig: rounds must be >= 0");
  if (personalization_start < 0 || personalization_start > rounds) {
    throw std::invalid_argument("FedConfig: personalization_start must satisfy 0 <= L <= rounds");
  }
  if (batch_size < 1) throw std::invalid_argument("FedConfig: batch_size must be >= 1");
  if (local_epochs < 1) throw std::invalid_argument("FedConfig: local_epochs must be >= 1");
  if (client_count < 1) throw std::invalid_argument("FedConfig: client_count must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("FedConfig: fraction must be in (0, 1]");
  }
  if (!(eta0 > 0.0)) throw std::invalid_argument("FedConfig: eta0 must be positive");
  if (mu < 0.0 || nu < 0.0) throw std::invalid_argument("FedConfig: mu and nu must be >= 0");
}

std::vector<int> select_clients(RngStream& rng, int client_count, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("select_clients: fraction must be in (0, 1]");
  }
  // tiny slack so values like 0.3 * 10 floor to the intended integer
  const int want = static_cast<int>(std::floor(fraction * client_count + 1e-9));
  const int count = std::max(want, 1);
  std::vector<int> ids(static_cast<std::size_t>(client_count));
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(client_count - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

LocalUpdateResult local_update(ClientState& client, const WeightVector& global,
                               const FedConfig& cfg, int round) {
  const NetworkSpec& spec = global.spec();
  if (client.split.train.size() == 0) {
    throw std::invalid_argument("local_update: client " + std::to_string(client.id) +
                                " has an empty training split");
  }
  if (client.split.train.dims() != static_cast<std::size_t>(spec.input_dim())) {
    throw std::invalid_argument("local_update: feature dims do not match the network input");
  }

  WeightVector federated = global;
  if (!client.local_model) {
    if (cfg.local_init == LocalInit::fresh_random) {
      RngStream init_rng(cfg.seed, streams::local_init, static_cast<std::uint64_t>(client.id));
      client.local_model = WeightVector::random_init(spec, init_rng);
    } else {
      client.local_model = global;
    }
  }
  WeightVector& local = *client.local_model;
  if (!local.same_shape(global)) {
    throw std::invalid_argument("local_update: persisted local model shape mismatch");
  }

  OptimizerState opt_federated = make_optimizer(spec);
  OptimizerState opt_local = make_optimizer(spec);
  RngStream shuffle_rng(cfg.seed, streams::shuffle, static_cast<std::uint64_t>(client.id),
                        static_cast<std::uint64_t>(round));
  RngStream lambda_rng(cfg.seed, streams::lambda, static_cast<std::uint64_t>(client.id),
                       static_cast<std::uint64_t>(round));
  const double lr = lr_at_round(cfg.eta0, round);
  const RegularizerConfig reg{cfg.mu, cfg.nu, 1e-12, cfg.cos_per_layer};

  const LabeledDataset& train = client.split.train;
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double loss_sum = 0.0;
  std::size_t batches = 0;
  try {
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
        const std::size_t rows = stop - start;
        Matrix batch(rows, train.dims());
        std::vector<int> labels(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* src = train.features.row(order[start + i]);
          std::copy(src, src + train.dims(), batch.row(i));
          labels[i] = train.labels[order[start + i]];
        }

        const LambdaAssignment lam = sample_lambda(lambda_rng, cfg.scheme, round,
                                                   cfg.personalization_start, spec.block_count());
        const WeightVector mixed = mix(federated, local, lam);
        auto [logits, trace] = forward(mixed, batch);
        (void)logits;
        auto [task_loss, task_grad] = loss_and_grad(mixed, trace, labels);
        const EndpointGradients grads =
            assemble_gradients(task_grad, lam, federated, local, global, reg);

        const double objective = task_loss + reg.mu * grads.prox_value + reg.nu * grads.cos_value;
        if (!std::isfinite(objective)) {
          throw std::runtime_error("non-finite training loss");
        }
        sgd_step(federated, grads.grad_federated, opt_federated, lr);
        sgd_step(local, grads.grad_local, opt_local, lr);
        loss_sum += objective;
        ++batches;
      }
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("local update aborted at round " + std::to_string(round) +
                             ", client " + std::to_string(client.id) + ", batch " +
                             std::to_string(batches) + ": " + e.what());
  }

  LocalUpdateResult result;
  result.federated = std::move(federated);
  result.n_examples = n;
  result.mean_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
  return result;
}

WeightVector aggregate(const std::vector<LocalUpdateResult>& updates) {
  if (updates.empty()) throw std::runtime_error("aggregate: no client updates");
  if (updates.size() == 1) {
    if (updates.front().n_examples < 1) throw std::invalid_argument("aggregate: n_examples must be >= 1");
    return updates.front().federated;  // degenerate average, exact
  }
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.n_examples < 1) throw std::invalid_argument("aggregate: n_examples must be >= 1");
    if (!u.federated.same_shape(updates.front().federated)) {
      throw std::invalid_argument("aggregate: shape mismatch across updates");
    }
    total += static_cast<double>(u.n_examples);
  }
  WeightVector mean(updates.front().federated.spec());
  for (const auto& u : updates) {
    mean.add_scaled(u.federated, static_cast<double>(u.n_examples));
  }
  mean.scale(1.0 / total);
  return mean;
}

void run(const FedConfig& cfg, std::vector<ClientState>& clients, const WeightVector& initial,
         ServerState& state, const RunHooks& hooks, int threads) {
  cfg.validate();
  if (clients.size() != static_cast<std::size_t>(cfg.client_count)) {
    throw std::invalid_argument("run: client vector size does not match cfg.client_count");
  }
  state.global = initial;
  state.round = 0;
  const std::uint64_t payload_bytes = initial.size() * sizeof(double);

  for (int round = 0; round < cfg.rounds; ++round) {
    const auto started = std::chrono::steady_clock::now();
    RngStream select_rng(cfg.seed, streams::select, static_cast<std::uint64_t>(round));
    const std::vector<int> selected = select_clients(select_rng, cfg.client_count, cfg.fraction);

    std::vector<LocalUpdateResult> results(selected.size());
    state.bytes_down += payload_bytes * selected.size();
    if (threads <= 1 || selected.size() <= 1) {
      for (std::size_t i = 0; i < selected.size(); ++i) {
        results[i] =
            local_update(clients[static_cast<std::size_t>(selected[i])], state.global, cfg, round);
      }
    } else {
      std::atomic<std::size_t> next{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      auto worker = [&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= selected.size()) return;
          try {
            results[i] = local_update(clients[static_cast<std::size_t>(selected[i])], state.global,
                                      cfg, round);
          } catch (...) {
            std::lock_guard<std::mutex> guard(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      };
      {
        std::vector<std::jthread> pool;
        const std::size_t pool_size =
            std::min<std::size_t>(static_cast<std::size_t>(threads), selected.size());
        pool.reserve(pool_size);
        for (std::size_t t = 0; t < pool_size; ++t) pool.emplace_back(worker);
      }
      if (failure) std::rethrow_exception(failure);
    }
    state.bytes_up += payload_bytes * selected.size();

    state.global = aggregate(results);
    if (!state.global.all_finite()) {
      throw std::runtime_error("run: aggregated global model has non-finite entries at round " +
                               std::to_string(round));
    }

    RoundRecord record;
    record.round = round;
    record.selected = selected;
    double loss_sum = 0.0;
    for (const auto& r : results) loss_sum += r.mean_loss;
    record.mean_train_loss = loss_sum / static_cast<double>(results.size());
    const bool scheduled =
        hooks.eval_every > 0 && (round + 1) % hooks.eval_every == 0;
    if (hooks.evaluate && (scheduled || round == cfg.rounds - 1)) {
      record.eval = hooks.evaluate(state.global, clients);
    }
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               started)
                         .count();
    state.history.push_back(std::move(record));
    state.round = round + 1;
  }

  if (hooks.final_eval) hooks.final_eval(state.global, clients);
}

}  // namespace superfed
