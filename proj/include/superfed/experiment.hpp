#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "superfed/evaluation.hpp"
#include "superfed/federation.hpp"

namespace superfed {

struct DatasetConfig {
  enum class Source { synthetic, idx };
  Source source = Source::synthetic;
  // synthetic blobs
  int classes = 10;
  int dims = 16;
  int per_class = 100;
  double spread = 0.75;
  // idx pair
  std::string images_path;
  std::string labels_path;
};

struct PlaneConfig {
  bool enabled = false;
  int resolution = 21;
  double margin = 0.25;
  double l2 = 0.0;
};

// Everything a run needs, validated up front and echoed verbatim into the
// output directory.
struct RunConfig {
  FedConfig fed;
  DatasetConfig dataset;
  PartitionScheme partition_scheme = PartitionScheme::pathological;
  double dirichlet_alpha = 1.0;
  NoiseKind noise_kind = NoiseKind::none;
  double noise_epsilon = 0.0;
  std::vector<int> hidden_dims{64, 64};
  double test_fraction = 0.2;
  int eval_every = 0;  // 0 = final evaluation only
  double lambda_grid_step = 0.1;
  int calibration_bins = 10;
  PlaneConfig plane;
  int threads = 0;
  std::string out_dir;  // empty: $SUPERFED_OUT (or ./runs) + /<config hash>
};

// Resolved defaults; an empty config document yields a synthetic-blob run.
nlohmann::json config_defaults();

// Named presets, applied on top of the defaults before file/flag overrides:
// "mnist-noise", "noise-symmetric-0.6", "fedavg-reduction", "fedprox-reduction".
nlohmann::json preset_overrides(const std::string& name);

// Recursive key-wise merge of overlay onto base (objects merge, scalars and
// arrays replace).
void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

// Validates and converts a merged document. Unknown keys are rejected with
// their path; constraint violations name the offending field. When
// personalization_start is absent it defaults to floor(0.4 * rounds).
RunConfig parse_config(const nlohmann::json& doc);

RunConfig load_config_file(const std::string& path);

nlohmann::json to_json(const RunConfig& cfg);

// Stable 64-bit hash of the semantic config (output path and thread count
// excluded so they cannot perturb artifacts).
std::uint64_t config_hash(const RunConfig& cfg);
std::string config_hash_hex(const RunConfig& cfg);

struct ExperimentSetup {
  NetworkSpec spec;
  std::vector<ClientState> clients;
  std::size_t dropped_examples = 0;
};

// Dataset -> partition -> per-client train/test split -> label noise on the
// training side only. Fully determined by cfg.fed.seed.
ExperimentSetup build_setup(const RunConfig& cfg);

struct FinalReport {
  LambdaSweep sweep;
  BestAverage best;
  double top1_lambda0 = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  std::vector<int> clients_without_local;
};

// The post-run evaluation: lambda sweep over every client's test split,
// best-average selection, and pooled calibration at the chosen lambda.
FinalReport final_evaluation(const std::vector<ClientState>& clients, const WeightVector& global,
                             double grid_step, int calibration_bins);

// File outputs. Every file carries the config hash.
void write_rounds_csv(const std::string& path, const std::vector<RoundRecord>& history,
                      const std::string& hash_hex);
void write_sweep_csv(const std::string& path, const LambdaSweep& sweep,
                     const std::string& hash_hex);
void write_plane_csv(const std::string& path, const PlaneGrid& grid, const std::string& hash_hex);

// Versioned little-endian checkpoint of the global model and every client
// local model: magic, format version, config hash, layer dims, then raw
// doubles per model in flattened order.
void save_checkpoint(const std::string& path, const WeightVector& global,
                     const std::vector<ClientState>& clients, std::uint64_t hash);

struct Checkpoint {
  std::uint64_t config_hash = 0;
  NetworkSpec spec;
  WeightVector global;
  std::vector<std::pair<std::int64_t, WeightVector>> locals;  // (client id, weights)
};

Checkpoint load_checkpoint(const std::string& path);

// Full pipeline: setup, federated run, final evaluation, persistence.
// Returns 0 on success; on failure prints the reason, flushes the partial
// round history, and returns 1.
int execute(const RunConfig& cfg);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace superfed
