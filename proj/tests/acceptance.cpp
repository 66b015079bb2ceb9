// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line each. Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "superfed/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using superfed::ClientState;
using superfed::FedConfig;
using superfed::LabeledDataset;
using superfed::Matrix;
using superfed::NetworkSpec;
using superfed::RngStream;
using superfed::RunConfig;
using superfed::ServerState;
using superfed::WeightVector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// 1. gradients of both penalties and the full local objective vs central
//    finite differences on a 2-8-4 network

Outcome criterion_gradients() {
  const NetworkSpec spec({2, 8, 4});
  double worst_cos = 0.0, worst_prox = 0.0, worst_obj = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const WeightVector f = oracle::random_point(spec, 1000 + static_cast<std::uint64_t>(rep));
    const WeightVector l = oracle::random_point(spec, 3000 + static_cast<std::uint64_t>(rep));
    const WeightVector g = oracle::random_point(spec, 5000 + static_cast<std::uint64_t>(rep));
    RngStream brng(2000 + static_cast<std::uint64_t>(rep), "accept-b");
    const std::size_t rows = 1 + brng.uniform_below(8);
    Matrix batch(rows, 2);
    for (std::size_t i = 0; i < batch.size(); ++i) batch.data()[i] = brng.normal();
    std::vector<int> labels(rows);
    for (auto& y : labels) y = static_cast<int>(brng.uniform_below(4));

    const superfed::RegularizerConfig cfg{0.01, 2.0, 1e-12, false};
    const auto cos_pen = superfed::cos_sq_penalty(f, l, cfg);
    const auto fd_cos = oracle::finite_diff(
        f, [&](const WeightVector& p) { return oracle::naive_cos_sq(p.values(), l.values()); },
        1e-6);
    worst_cos = std::max(worst_cos, oracle::rel_error(cos_pen.grad_federated.values(), fd_cos));

    const auto prox = superfed::prox_penalty(f, g);
    const auto fd_prox = oracle::finite_diff(
        f, [&](const WeightVector& p) { return oracle::naive_sq_dist(p.values(), g.values()); },
        1e-6);
    worst_prox = std::max(worst_prox, oracle::rel_error(prox.grad_federated.values(), fd_prox));

    const double lam_value = brng.uniform01();
    const std::vector<double> lam_blocks(static_cast<std::size_t>(spec.block_count()), lam_value);
    const auto lam = superfed::LambdaAssignment::constant(lam_value);
    const WeightVector mixed = superfed::mix(f, l, lam);
    auto [logits, trace] = superfed::forward(mixed, batch);
    (void)logits;
    auto [task_loss, task_grad] = superfed::loss_and_grad(mixed, trace, labels);
    (void)task_loss;
    const auto out = superfed::assemble_gradients(task_grad, lam, f, l, g, cfg);
    const auto fd_f = oracle::finite_diff(
        f,
        [&](const WeightVector& p) {
          return oracle::naive_objective(p, l, g, lam_blocks, cfg.mu, cfg.nu, batch, labels);
        },
        1e-6);
    const auto fd_l = oracle::finite_diff(
        l,
        [&](const WeightVector& p) {
          return oracle::naive_objective(f, p, g, lam_blocks, cfg.mu, cfg.nu, batch, labels);
        },
        1e-6);
    worst_obj = std::max(worst_obj, oracle::rel_error(out.grad_federated.values(), fd_f));
    worst_obj = std::max(worst_obj, oracle::rel_error(out.grad_local.values(), fd_l));
  }
  Outcome o;
  o.pass = worst_cos <= 1e-5 && worst_prox <= 1e-5 && worst_obj <= 1e-5;
  o.detail = "max rel err: cos " + fmt(worst_cos) + ", prox " + fmt(worst_prox) + ", objective " +
             fmt(worst_obj) + " (tol 1e-5)";
  return o;
}

// ---------------------------------------------------------------------------
// 2. the run loop reduces exactly to independently coded FedAvg / FedProx

RunConfig reduction_config(std::uint64_t seed, double mu) {
  json doc = {{"rounds", 20},
              {"personalization_start", 20},
              {"clients", 10},
              {"fraction", 0.5},
              {"local_epochs", 2},
              {"batch_size", 8},
              {"lr", 0.05},
              {"mu", mu},
              {"nu", 0.0},
              {"seed", static_cast<std::int64_t>(seed)},
              {"dataset",
               {{"type", "synthetic"}, {"classes", 5}, {"dims", 8}, {"per_class", 200}, {"spread", 0.7}}},
              {"hidden", {16}}};
  return superfed::parse_config(doc);
}

Outcome criterion_reduction() {
  double worst = 0.0;
  for (double mu : {0.0, 0.01}) {
    const RunConfig cfg = reduction_config(77, mu);
    auto setup = superfed::build_setup(cfg);
    auto reference_clients = setup.clients;  // train splits only, state untouched
    RngStream grng(cfg.fed.seed, superfed::streams::global_init);
    const WeightVector initial = WeightVector::random_init(setup.spec, grng);

    std::vector<WeightVector> trajectory;
    superfed::RunHooks hooks;
    hooks.eval_every = 1;
    hooks.evaluate = [&](const WeightVector& g, const std::vector<ClientState>&) {
      trajectory.push_back(g);
      return superfed::EvalPoint{};
    };
    ServerState state;
    superfed::run(cfg.fed, setup.clients, initial, state, hooks);

    const auto reference = oracle::reference_fedavg(cfg.fed, reference_clients, initial, mu);
    if (trajectory.size() != reference.size()) {
      return {false, "trajectory length mismatch"};
    }
    for (std::size_t r = 0; r < reference.size(); ++r) {
      for (std::size_t i = 0; i < initial.size(); ++i) {
        worst = std::max(worst,
                         std::fabs(trajectory[r].values()[i] - reference[r].values()[i]));
      }
    }
  }
  Outcome o;
  o.pass = worst <= 1e-9;
  o.detail = "max elementwise gap vs reference loops (fedavg, fedprox mu=0.01): " + fmt(worst) +
             " (tol 1e-9)";
  return o;
}

// ---------------------------------------------------------------------------
// 3. weighted aggregation vs an independent mean

Outcome criterion_aggregation() {
  const NetworkSpec spec({3, 6, 2});
  RngStream rng(3, "accept-agg");
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t k = 1 + rng.uniform_below(10);
    std::vector<superfed::LocalUpdateResult> updates(k);
    for (auto& u : updates) {
      u.federated = WeightVector::random_init(spec, rng);
      u.n_examples = 1 + rng.uniform_below(5000);
    }
    const WeightVector mean = superfed::aggregate(updates);
    double total = 0.0;
    for (const auto& u : updates) total += static_cast<double>(u.n_examples);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      double expected = 0.0;
      for (const auto& u : updates) {
        expected += (static_cast<double>(u.n_examples) / total) * u.federated.values()[i];
      }
      worst = std::max(worst, std::fabs(mean.values()[i] - expected));
    }
  }
  Outcome o;
  o.pass = worst <= 1e-12;
  o.detail = "max gap vs independent weighted mean over 100 draws: " + fmt(worst) +
             " (tol 1e-12)";
  return o;
}

// ---------------------------------------------------------------------------
// 4. partitioners: exact pathological shard accounting, near-uniform
//    dirichlet at huge alpha

Outcome criterion_partitioners() {
  LabeledDataset big;
  big.class_count = 10;
  big.features = Matrix(48000, 1);
  big.labels.resize(48000);
  for (std::size_t i = 0; i < big.labels.size(); ++i) {
    big.labels[i] = static_cast<int>(i % 10);
  }
  superfed::PartitionSpec pspec;
  pspec.scheme = superfed::PartitionScheme::pathological;
  pspec.client_count = 50;
  RngStream prng(4, superfed::streams::partition);
  const auto parts = superfed::partition_pathological(big, pspec, prng);
  bool sizes_ok = parts.client_indices.size() == 50 && parts.dropped.empty();
  std::size_t max_labels = 0;
  for (const auto& bucket : parts.client_indices) {
    sizes_ok = sizes_ok && bucket.size() == 960;
    std::set<int> labels;
    for (std::size_t idx : bucket) labels.insert(big.labels[idx]);
    max_labels = std::max(max_labels, labels.size());
  }

  LabeledDataset mid;
  mid.class_count = 10;
  mid.features = Matrix(10000, 1);
  mid.labels.resize(10000);
  for (std::size_t i = 0; i < mid.labels.size(); ++i) {
    mid.labels[i] = static_cast<int>(i % 10);
  }
  superfed::PartitionSpec dspec;
  dspec.scheme = superfed::PartitionScheme::dirichlet;
  dspec.client_count = 10;
  dspec.alpha = 1e6;
  RngStream drng(5, superfed::streams::partition);
  const auto dparts = superfed::partition_dirichlet(mid, dspec, drng);
  double worst_dev = 0.0;
  for (const auto& bucket : dparts.client_indices) {
    std::vector<int> counts(10, 0);
    for (std::size_t idx : bucket) counts[static_cast<std::size_t>(mid.labels[idx])]++;
    for (int c : counts) {
      worst_dev = std::max(worst_dev,
                           std::fabs(static_cast<double>(c) / static_cast<double>(bucket.size()) -
                                     0.1));
    }
  }

  Outcome o;
  o.pass = sizes_ok && max_labels <= 2 && worst_dev < 0.05;
  o.detail = "pathological: 960/client " + std::string(sizes_ok ? "exact" : "BROKEN") +
             ", max distinct labels " + std::to_string(max_labels) +
             "; dirichlet(1e6) max proportion deviation " + fmt(worst_dev) + " (tol 0.05)";
  return o;
}

// ---------------------------------------------------------------------------
// 5. label noise: row sums, empirical flip rate, exact matrix shapes

Outcome criterion_noise() {
  double worst_row = 0.0;
  for (double eps : {0.0, 0.1, 0.4, 0.6, 0.9}) {
    for (int n : {2, 3, 10, 62}) {
      for (superfed::NoiseKind kind : {superfed::NoiseKind::pair, superfed::NoiseKind::symmetric}) {
        const auto t = superfed::build_transition(kind, eps, n);
        for (int i = 0; i < n; ++i) {
          double row = 0.0;
          for (int j = 0; j < n; ++j) row += t.at(i, j);
          worst_row = std::max(worst_row, std::fabs(row - 1.0));
        }
      }
    }
  }

  const auto sym = superfed::build_transition(superfed::NoiseKind::symmetric, 0.6, 10);
  std::vector<int> labels(100000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  const auto before = labels;
  RngStream nrng(6, superfed::streams::noise);
  superfed::apply_noise(labels, sym, nrng);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != before[i]) ++flips;
  }
  const double rate = static_cast<double>(flips) / 100000.0;

  const auto pair = superfed::build_transition(superfed::NoiseKind::pair, 0.1, 3);
  const std::vector<double> pair_expected = {0.9, 0.1, 0.0, 0.0, 0.9, 0.1, 0.1, 0.0, 0.9};
  bool shapes_ok = true;
  for (std::size_t i = 0; i < pair_expected.size(); ++i) {
    shapes_ok = shapes_ok && std::fabs(pair.entries[i] - pair_expected[i]) <= 1e-15;
  }
  for (int i = 0; i < 10 && shapes_ok; ++i) {
    for (int j = 0; j < 10; ++j) {
      const double expected = i == j ? 0.4 : 0.6 / 9.0;
      shapes_ok = shapes_ok && std::fabs(sym.at(i, j) - expected) <= 1e-15;
    }
  }

  Outcome o;
  o.pass = worst_row <= 1e-12 && std::fabs(rate - 0.6) <= 0.01 && shapes_ok;
  o.detail = "max |row sum - 1| " + fmt(worst_row) + " (tol 1e-12); flip rate " + fmt(rate) +
             " (0.6 +/- 0.01); printed matrices " + (shapes_ok ? "exact" : "BROKEN");
  return o;
}

// ---------------------------------------------------------------------------
// 6. calibration metrics: hand cases plus the ECE <= MCE property

Outcome criterion_calibration() {
  const auto two = superfed::calibration_errors({0.8, 0.8}, {true, false}, 10);
  const auto one = superfed::calibration_errors({0.95}, {false}, 10);
  const auto perfect = superfed::calibration_errors({1.0, 1.0}, {true, true}, 10);
  const bool hand_ok = std::fabs(two.ece - 0.3) < 1e-12 && std::fabs(two.mce - 0.3) < 1e-12 &&
                       std::fabs(one.ece - 0.95) < 1e-12 && std::fabs(one.mce - 0.95) < 1e-12 &&
                       perfect.ece == 0.0 && perfect.mce == 0.0;

  RngStream rng(7, "accept-cal");
  bool property_ok = true;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + rng.uniform_below(300);
    std::vector<double> conf(n);
    std::vector<bool> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = 1.0 - 0.999999 * rng.uniform01();
      correct[i] = rng.uniform01() < 0.5;
    }
    const auto r = superfed::calibration_errors(conf, correct, 10);
    property_ok = property_ok && r.ece <= r.mce + 1e-15 && r.ece >= 0.0 && r.mce <= 1.0;
  }

  Outcome o;
  o.pass = hand_ok && property_ok;
  o.detail = std::string("hand-computed cases ") + (hand_ok ? "exact" : "BROKEN") +
             "; ECE<=MCE on 1000 random sets " + (property_ok ? "holds" : "BROKEN");
  return o;
}

// ---------------------------------------------------------------------------
// desk-scale runs shared by criteria 7, 8, 9

// The shared desk-scale setting: 10-class blobs over 50 pathological
// clients, 50 rounds of 5 epochs at batch 10, personalization from round 20,
// nu 2 and mu 0.01, model mixing, TwoNN-small (64-64). Full participation
// keeps the per-client round count comparable to the full-scale protocol.
json desk_config(std::uint64_t seed, double nu, bool reduction, const std::string& noise) {
  json doc = {{"rounds", 50},
              {"personalization_start", reduction ? 50 : 20},
              {"clients", 50},
              {"fraction", 1.0},
              {"local_epochs", 5},
              {"batch_size", 10},
              {"lr", 0.15},
              {"mu", reduction ? 0.0 : 0.01},
              {"nu", reduction ? 0.0 : nu},
              {"scheme", "mm"},
              {"seed", static_cast<std::int64_t>(seed)},
              {"noise", noise},
              {"partition", "pathological"},
              {"dataset",
               {{"type", "synthetic"},
                {"classes", 10},
                {"dims", 16},
                {"per_class", 120},
                {"spread", 0.9}}},
              {"hidden", {64, 64}}};
  return doc;
}

struct DeskResult {
  superfed::FinalReport report;
  ServerState state;
};

DeskResult desk_run(const RunConfig& cfg) {
  auto setup = superfed::build_setup(cfg);
  RngStream grng(cfg.fed.seed, superfed::streams::global_init);
  const WeightVector initial = WeightVector::random_init(setup.spec, grng);
  DeskResult out;
  superfed::run(cfg.fed, setup.clients, initial, out.state, {}, 2);
  out.report = superfed::final_evaluation(setup.clients, out.state.global, cfg.lambda_grid_step,
                                          cfg.calibration_bins);
  return out;
}

double grid_std(const std::vector<double>& means) {
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(means.size());
  double acc = 0.0;
  for (double v : means) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(means.size()));
}

// 7. personalization beats the FedAvg reduction on the same partition/seeds

Outcome criterion_personalization() {
  std::vector<double> ours, baseline;
  for (std::uint64_t seed : {11, 12, 13}) {
    const DeskResult mix = desk_run(superfed::parse_config(desk_config(seed, 2.0, false, "none")));
    const DeskResult avg = desk_run(superfed::parse_config(desk_config(seed, 0.0, true, "none")));
    ours.push_back(mix.report.best.mean_top1);
    baseline.push_back(avg.report.top1_lambda0);
  }
  const double med_ours = median(ours);
  const double med_base = median(baseline);
  Outcome o;
  o.pass = med_ours >= med_base;
  o.detail = "median best-average top-1 " + fmt(med_ours) + " vs fedavg-reduction top-1 " +
             fmt(med_base) + " over 3 seeds";
  return o;
}

// 8. the orthogonality penalty flattens the lambda profile; endpoints are exact

Outcome criterion_connectivity() {
  std::vector<double> with_nu, without_nu;
  bool endpoints_exact = true;
  for (std::uint64_t seed : {11, 12, 13, 14, 15}) {
    const RunConfig cfg_nu = superfed::parse_config(desk_config(seed, 2.0, false, "none"));
    const RunConfig cfg_0 = superfed::parse_config(desk_config(seed, 0.0, false, "none"));

    auto setup = superfed::build_setup(cfg_nu);
    RngStream grng(cfg_nu.fed.seed, superfed::streams::global_init);
    const WeightVector initial = WeightVector::random_init(setup.spec, grng);
    ServerState state;
    superfed::run(cfg_nu.fed, setup.clients, initial, state, {}, 2);
    const auto sweep = superfed::lambda_sweep(setup.clients, state.global,
                                              superfed::lambda_grid(cfg_nu.lambda_grid_step));
    with_nu.push_back(grid_std(sweep.mean_top1));

    // endpoint exactness straight off this sweep
    for (const auto& row : sweep.rows) {
      if (!row.has_local) continue;
      const auto& client = setup.clients[static_cast<std::size_t>(row.client_id)];
      const auto at0 = superfed::evaluate_model(state.global, client.split.test);
      const auto at1 = superfed::evaluate_model(*client.local_model, client.split.test);
      endpoints_exact = endpoints_exact && row.top1.front() == at0.top1 &&
                        row.top1.back() == at1.top1 && row.loss.front() == at0.mean_loss &&
                        row.loss.back() == at1.mean_loss;
    }

    const DeskResult control = desk_run(cfg_0);
    without_nu.push_back(grid_std(control.report.sweep.mean_top1));
  }
  const double med_with = median(with_nu);
  const double med_without = median(without_nu);
  Outcome o;
  o.pass = med_with < med_without && endpoints_exact;
  o.detail = "median cross-grid std: nu=2 " + fmt(med_with) + " vs nu=0 " + fmt(med_without) +
             "; endpoints " + (endpoints_exact ? "exact" : "BROKEN");
  return o;
}

// 9. under symmetric 0.6 label noise the mixture stays better calibrated

Outcome criterion_noise_robustness() {
  std::vector<double> ours, baseline;
  for (std::uint64_t seed : {11, 12, 13}) {
    const DeskResult mix =
        desk_run(superfed::parse_config(desk_config(seed, 2.0, false, "symmetric:0.6")));
    const DeskResult avg =
        desk_run(superfed::parse_config(desk_config(seed, 0.0, true, "symmetric:0.6")));
    ours.push_back(mix.report.ece);
    baseline.push_back(avg.report.ece);
  }
  const double med_ours = median(ours);
  const double med_base = median(baseline);
  Outcome o;
  o.pass = med_ours <= med_base;
  o.detail = "median final ECE " + fmt(med_ours) + " vs fedavg-reduction " + fmt(med_base) +
             " under symmetric 0.6 noise, 3 seeds";
  return o;
}

// ---------------------------------------------------------------------------
// 10. repeated and parallel executions produce byte-identical artifacts

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion_determinism() {
  const fs::path dir = fs::temp_directory_path() / "superfed_acceptance_det";
  fs::remove_all(dir);
  json doc = desk_config(11, 2.0, false, "none");
  doc["rounds"] = 15;
  doc["personalization_start"] = 6;

  RunConfig a = superfed::parse_config(doc);
  a.out_dir = (dir / "a").string();
  RunConfig c = superfed::parse_config(doc);
  c.out_dir = (dir / "c").string();
  c.threads = 3;

  if (superfed::execute(a) != 0) return {false, "first run failed"};
  std::vector<std::string> first;
  const std::vector<const char*> files = {"rounds.csv", "lambda_sweep.csv", "checkpoint.bin",
                                          "summary.json"};
  for (const char* file : files) first.push_back(slurp(dir / "a" / file));
  if (superfed::execute(a) != 0) return {false, "repeat run failed"};
  if (superfed::execute(c) != 0) return {false, "parallel run failed"};

  bool ok = true;
  std::string mismatch;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (first[i].empty()) {
      ok = false;
      mismatch = std::string(files[i]) + " missing";
      break;
    }
    if (first[i] != slurp(dir / "a" / files[i])) {
      ok = false;
      mismatch = std::string(files[i]) + " differs between repeated executions";
      break;
    }
    // the parallel run writes elsewhere, so compare everything but the
    // config echo (which names its own out path and thread count)
    if (files[i] != std::string("summary.json") && first[i] != slurp(dir / "c" / files[i])) {
      ok = false;
      mismatch = std::string(files[i]) + " differs between serial and parallel schedules";
      break;
    }
  }
  Outcome o;
  o.pass = ok;
  o.detail = ok ? "csv, checkpoint and summary byte-identical across repeated runs; csv and "
                  "checkpoint identical under the parallel schedule"
              : mismatch;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int number;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> entries = {
      {1, "gradient correctness", criterion_gradients},
      {2, "fedavg/fedprox reduction", criterion_reduction},
      {3, "weighted aggregation", criterion_aggregation},
      {4, "partitioners", criterion_partitioners},
      {5, "label noise", criterion_noise},
      {6, "calibration metrics", criterion_calibration},
      {7, "desk-scale personalization", criterion_personalization},
      {8, "connectivity", criterion_connectivity},
      {9, "noise robustness", criterion_noise_robustness},
      {10, "determinism", criterion_determinism},
  };

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0;
  for (const auto& entry : entries) {
    if (only != 0 && entry.number != only) continue;
    const auto started = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = entry.fn();
    } catch (const std::exception& e) {
      outcome.pass = false;
      outcome.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::printf("criterion %2d %-26s %s  %s  [%.1fs]\n", entry.number, entry.name,
                outcome.pass ? "PASS" : "FAIL", outcome.detail.c_str(), secs);
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  return failures;
}
