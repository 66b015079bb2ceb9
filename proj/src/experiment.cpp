#include "superfed/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace superfed {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// config documents

json config_defaults() {
  json dataset;
  dataset["type"] = "synthetic";
  dataset["classes"] = 10;
  dataset["dims"] = 16;
  dataset["per_class"] = 100;
  dataset["spread"] = 0.75;
  dataset["images"] = "";
  dataset["labels"] = "";

  json plane;
  plane["enabled"] = false;
  plane["resolution"] = 21;
  plane["margin"] = 0.25;
  plane["l2"] = 0.0;

  json doc;
  doc["rounds"] = 20;
  // personalization_start intentionally absent: floor(0.4 * rounds) by default
  doc["batch_size"] = 10;
  doc["local_epochs"] = 5;
  doc["clients"] = 10;
  doc["fraction"] = 0.5;
  doc["lr"] = 0.05;
  doc["mu"] = 0.01;
  doc["nu"] = 2.0;
  doc["scheme"] = "mm";
  doc["seed"] = 42;
  doc["local_init"] = "fresh";
  doc["cos_per_layer"] = false;
  doc["partition"] = "pathological";
  doc["noise"] = "none";
  doc["dataset"] = dataset;
  doc["hidden"] = json::array({64, 64});
  doc["test_fraction"] = 0.2;
  doc["eval_every"] = 0;
  doc["lambda_grid_step"] = 0.1;
  doc["calibration_bins"] = 10;
  doc["plane"] = plane;
  doc["threads"] = 0;
  doc["out"] = "";
  return doc;
}

json preset_overrides(const std::string& name) {
  json o;
  if (name == "mnist-noise") {
    // full-scale label-noise training configuration on the MNIST idx pair
    o["rounds"] = 500;
    o["personalization_start"] = 200;
    o["local_epochs"] = 10;
    o["batch_size"] = 10;
    o["clients"] = 100;
    o["fraction"] = 0.05;  // 5 clients per round
    o["lr"] = 0.01;
    o["mu"] = 0.01;
    o["nu"] = 2.0;
    o["partition"] = "dirichlet:10";
    o["hidden"] = json::array({200, 200});
    o["dataset"] = {{"type", "idx"},
                    {"images", "data/train-images-idx3-ubyte"},
                    {"labels", "data/train-labels-idx1-ubyte"}};
    return o;
  }
  if (name == "noise-symmetric-0.6") {
    o = preset_overrides("mnist-noise");
    o["noise"] = "symmetric:0.6";
    return o;
  }
  if (name == "fedavg-reduction") {
    // desk-scale exact reduction: lambda pinned to 0, no regularizers
    o["rounds"] = 20;
    o["personalization_start"] = 20;
    o["mu"] = 0.0;
    o["nu"] = 0.0;
    return o;
  }
  if (name == "fedprox-reduction") {
    o = preset_overrides("fedavg-reduction");
    o["mu"] = 0.01;
    return o;
  }
  throw std::invalid_argument("unknown preset '" + name +
                              "' (known: mnist-noise, noise-symmetric-0.6, fedavg-reduction, "
                              "fedprox-reduction)");
}

void merge_config(json& base, const json& overlay) {
  if (!overlay.is_object()) {
    base = overlay;
    return;
  }
  if (!base.is_object()) base = json::object();
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key())) {
      merge_config(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config." + path + ": " + what);
}

void require_keys(const json& obj, const std::string& prefix,
                  const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("config: unknown key '" + prefix + it.key() + "'");
    }
  }
}

long long get_int(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_number_integer()) config_error(key, "expected an integer");
  return v.get<long long>();
}

double get_num(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_number()) config_error(key, "expected a number");
  return v.get<double>();
}

std::string get_str(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_string()) config_error(key, "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_boolean()) config_error(key, "expected a boolean");
  return v.get<bool>();
}

double parse_tagged_value(const std::string& text, const std::string& key) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    config_error(key, "expected '<name>:<value>' in '" + text + "'");
  }
  try {
    return std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    config_error(key, "cannot parse number in '" + text + "'");
  }
}

}  // namespace

RunConfig parse_config(const json& doc) {
  json merged = config_defaults();
  merge_config(merged, doc);

  require_keys(merged, "",
               {"rounds", "personalization_start", "batch_size", "local_epochs", "clients",
                "fraction", "lr", "mu", "nu", "scheme", "seed", "local_init", "cos_per_layer",
                "partition", "noise", "dataset", "hidden", "test_fraction", "eval_every",
                "lambda_grid_step", "calibration_bins", "plane", "threads", "out"});
  require_keys(merged.at("dataset"), "dataset.",
               {"type", "classes", "dims", "per_class", "spread", "images", "labels"});
  require_keys(merged.at("plane"), "plane.", {"enabled", "resolution", "margin", "l2"});

  RunConfig cfg;
  cfg.fed.rounds = static_cast<int>(get_int(merged, "rounds"));
  if (cfg.fed.rounds < 0) config_error("rounds", "must be >= 0");
  if (merged.contains("personalization_start")) {
    cfg.fed.personalization_start = static_cast<int>(get_int(merged, "personalization_start"));
  } else {
    cfg.fed.personalization_start = static_cast<int>(std::floor(0.4 * cfg.fed.rounds));
  }
  if (cfg.fed.personalization_start < 0 || cfg.fed.personalization_start > cfg.fed.rounds) {
    config_error("personalization_start",
                 "must satisfy 0 <= personalization_start <= rounds (rounds = " +
                     std::to_string(cfg.fed.rounds) + ", got " +
                     std::to_string(cfg.fed.personalization_start) + ")");
  }
  cfg.fed.batch_size = static_cast<int>(get_int(merged, "batch_size"));
  if (cfg.fed.batch_size < 1) config_error("batch_size", "must be >= 1");
  cfg.fed.local_epochs = static_cast<int>(get_int(merged, "local_epochs"));
  if (cfg.fed.local_epochs < 1) config_error("local_epochs", "must be >= 1");
  cfg.fed.client_count = static_cast<int>(get_int(merged, "clients"));
  if (cfg.fed.client_count < 1) config_error("clients", "must be >= 1");
  cfg.fed.fraction = get_num(merged, "fraction");
  if (!(cfg.fed.fraction > 0.0 && cfg.fed.fraction <= 1.0)) {
    config_error("fraction", "must be in (0, 1]");
  }
  cfg.fed.eta0 = get_num(merged, "lr");
  if (!(cfg.fed.eta0 > 0.0)) config_error("lr", "must be positive");
  cfg.fed.mu = get_num(merged, "mu");
  if (cfg.fed.mu < 0.0) config_error("mu", "must be >= 0");
  cfg.fed.nu = get_num(merged, "nu");
  if (cfg.fed.nu < 0.0) config_error("nu", "must be >= 0");

  const std::string scheme = get_str(merged, "scheme");
  if (scheme == "mm") {
    cfg.fed.scheme = MixScheme::model;
  } else if (scheme == "lm") {
    cfg.fed.scheme = MixScheme::layer;
  } else {
    config_error("scheme", "expected 'mm' or 'lm', got '" + scheme + "'");
  }

  const long long seed = get_int(merged, "seed");
  cfg.fed.seed = static_cast<std::uint64_t>(seed);

  const std::string init = get_str(merged, "local_init");
  if (init == "fresh") {
    cfg.fed.local_init = LocalInit::fresh_random;
  } else if (init == "copy") {
    cfg.fed.local_init = LocalInit::copy_global;
  } else {
    config_error("local_init", "expected 'fresh' or 'copy', got '" + init + "'");
  }
  cfg.fed.cos_per_layer = get_bool(merged, "cos_per_layer");

  const std::string partition = get_str(merged, "partition");
  if (partition == "pathological") {
    cfg.partition_scheme = PartitionScheme::pathological;
  } else if (partition.rfind("dirichlet:", 0) == 0) {
    cfg.partition_scheme = PartitionScheme::dirichlet;
    cfg.dirichlet_alpha = parse_tagged_value(partition, "partition");
    if (!(cfg.dirichlet_alpha > 0.0)) config_error("partition", "dirichlet alpha must be > 0");
  } else {
    config_error("partition",
                 "expected 'pathological' or 'dirichlet:<alpha>', got '" + partition + "'");
  }

  const std::string noise = get_str(merged, "noise");
  if (noise == "none") {
    cfg.noise_kind = NoiseKind::none;
    cfg.noise_epsilon = 0.0;
  } else if (noise.rfind("pair:", 0) == 0) {
    cfg.noise_kind = NoiseKind::pair;
    cfg.noise_epsilon = parse_tagged_value(noise, "noise");
  } else if (noise.rfind("symmetric:", 0) == 0) {
    cfg.noise_kind = NoiseKind::symmetric;
    cfg.noise_epsilon = parse_tagged_value(noise, "noise");
  } else {
    config_error("noise",
                 "expected 'none', 'pair:<eps>' or 'symmetric:<eps>', got '" + noise + "'");
  }
  if (!(cfg.noise_epsilon >= 0.0 && cfg.noise_epsilon < 1.0)) {
    config_error("noise", "epsilon must be in [0, 1)");
  }

  const json& ds = merged.at("dataset");
  const std::string source = get_str(ds, "type");
  if (source == "synthetic") {
    cfg.dataset.source = DatasetConfig::Source::synthetic;
  } else if (source == "idx") {
    cfg.dataset.source = DatasetConfig::Source::idx;
  } else {
    config_error("dataset.type", "expected 'synthetic' or 'idx', got '" + source + "'");
  }
  cfg.dataset.classes = static_cast<int>(get_int(ds, "classes"));
  cfg.dataset.dims = static_cast<int>(get_int(ds, "dims"));
  cfg.dataset.per_class = static_cast<int>(get_int(ds, "per_class"));
  cfg.dataset.spread = get_num(ds, "spread");
  cfg.dataset.images_path = get_str(ds, "images");
  cfg.dataset.labels_path = get_str(ds, "labels");
  if (cfg.dataset.source == DatasetConfig::Source::synthetic) {
    if (cfg.dataset.classes < 2) config_error("dataset.classes", "must be >= 2");
    if (cfg.dataset.dims < 1) config_error("dataset.dims", "must be >= 1");
    if (cfg.dataset.per_class < 1) config_error("dataset.per_class", "must be >= 1");
    if (cfg.dataset.spread < 0.0) config_error("dataset.spread", "must be >= 0");
  } else if (cfg.dataset.images_path.empty() || cfg.dataset.labels_path.empty()) {
    config_error("dataset", "idx source needs images and labels paths");
  }

  const json& hidden = merged.at("hidden");
  if (!hidden.is_array() || hidden.empty()) {
    config_error("hidden", "expected a non-empty array of layer widths");
  }
  cfg.hidden_dims.clear();
  for (const auto& h : hidden) {
    if (!h.is_number_integer() || h.get<int>() < 1) {
      config_error("hidden", "layer widths must be integers >= 1");
    }
    cfg.hidden_dims.push_back(h.get<int>());
  }

  cfg.test_fraction = get_num(merged, "test_fraction");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
    config_error("test_fraction", "must be in (0, 1)");
  }
  cfg.eval_every = static_cast<int>(get_int(merged, "eval_every"));
  if (cfg.eval_every < 0) config_error("eval_every", "must be >= 0");
  cfg.lambda_grid_step = get_num(merged, "lambda_grid_step");
  if (!(cfg.lambda_grid_step > 0.0 && cfg.lambda_grid_step <= 1.0)) {
    config_error("lambda_grid_step", "must be in (0, 1]");
  }
  cfg.calibration_bins = static_cast<int>(get_int(merged, "calibration_bins"));
  if (cfg.calibration_bins < 1) config_error("calibration_bins", "must be >= 1");

  const json& plane = merged.at("plane");
  cfg.plane.enabled = get_bool(plane, "enabled");
  cfg.plane.resolution = static_cast<int>(get_int(plane, "resolution"));
  if (cfg.plane.resolution < 2) config_error("plane.resolution", "must be >= 2");
  cfg.plane.margin = get_num(plane, "margin");
  if (cfg.plane.margin < 0.0) config_error("plane.margin", "must be >= 0");
  cfg.plane.l2 = get_num(plane, "l2");
  if (cfg.plane.l2 < 0.0) config_error("plane.l2", "must be >= 0");

  cfg.threads = static_cast<int>(get_int(merged, "threads"));
  if (cfg.threads < 0) config_error("threads", "must be >= 0");
  cfg.out_dir = get_str(merged, "out");
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot parse " + path + ": " + e.what());
  }
  return parse_config(doc);
}

json to_json(const RunConfig& cfg) {
  json doc = config_defaults();
  doc["rounds"] = cfg.fed.rounds;
  doc["personalization_start"] = cfg.fed.personalization_start;
  doc["batch_size"] = cfg.fed.batch_size;
  doc["local_epochs"] = cfg.fed.local_epochs;
  doc["clients"] = cfg.fed.client_count;
  doc["fraction"] = cfg.fed.fraction;
  doc["lr"] = cfg.fed.eta0;
  doc["mu"] = cfg.fed.mu;
  doc["nu"] = cfg.fed.nu;
  doc["scheme"] = cfg.fed.scheme == MixScheme::model ? "mm" : "lm";
  doc["seed"] = static_cast<std::int64_t>(cfg.fed.seed);
  doc["local_init"] = cfg.fed.local_init == LocalInit::fresh_random ? "fresh" : "copy";
  doc["cos_per_layer"] = cfg.fed.cos_per_layer;
  doc["partition"] = cfg.partition_scheme == PartitionScheme::pathological
                         ? "pathological"
                         : "dirichlet:" + format_double(cfg.dirichlet_alpha);
  switch (cfg.noise_kind) {
    case NoiseKind::none:
      doc["noise"] = "none";
      break;
    case NoiseKind::pair:
      doc["noise"] = "pair:" + format_double(cfg.noise_epsilon);
      break;
    case NoiseKind::symmetric:
      doc["noise"] = "symmetric:" + format_double(cfg.noise_epsilon);
      break;
  }
  doc["dataset"]["type"] =
      cfg.dataset.source == DatasetConfig::Source::synthetic ? "synthetic" : "idx";
  doc["dataset"]["classes"] = cfg.dataset.classes;
  doc["dataset"]["dims"] = cfg.dataset.dims;
  doc["dataset"]["per_class"] = cfg.dataset.per_class;
  doc["dataset"]["spread"] = cfg.dataset.spread;
  doc["dataset"]["images"] = cfg.dataset.images_path;
  doc["dataset"]["labels"] = cfg.dataset.labels_path;
  doc["hidden"] = cfg.hidden_dims;
  doc["test_fraction"] = cfg.test_fraction;
  doc["eval_every"] = cfg.eval_every;
  doc["lambda_grid_step"] = cfg.lambda_grid_step;
  doc["calibration_bins"] = cfg.calibration_bins;
  doc["plane"]["enabled"] = cfg.plane.enabled;
  doc["plane"]["resolution"] = cfg.plane.resolution;
  doc["plane"]["margin"] = cfg.plane.margin;
  doc["plane"]["l2"] = cfg.plane.l2;
  doc["threads"] = cfg.threads;
  doc["out"] = cfg.out_dir;
  return doc;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  json doc = to_json(cfg);
  doc.erase("out");      // artifacts must not depend on where they land
  doc.erase("threads");  // or on the execution schedule
  return detail::fnv1a64(doc.dump());
}

std::string config_hash_hex(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// setup and evaluation

ExperimentSetup build_setup(const RunConfig& cfg) {
  LabeledDataset full;
  if (cfg.dataset.source == DatasetConfig::Source::synthetic) {
    RngStream rng(cfg.fed.seed, streams::blobs);
    full = gen_blobs(cfg.dataset.classes, cfg.dataset.dims, cfg.dataset.per_class,
                     cfg.dataset.spread, rng);
  } else {
    full = load_idx(cfg.dataset.images_path, cfg.dataset.labels_path);
  }

  PartitionSpec pspec;
  pspec.scheme = cfg.partition_scheme;
  pspec.client_count = cfg.fed.client_count;
  pspec.alpha = cfg.dirichlet_alpha;
  RngStream partition_rng(cfg.fed.seed, streams::partition);
  const PartitionResult parts = pspec.scheme == PartitionScheme::pathological
                                    ? partition_pathological(full, pspec, partition_rng)
                                    : partition_dirichlet(full, pspec, partition_rng);

  TransitionMatrix transition;
  if (cfg.noise_kind != NoiseKind::none) {
    transition = build_transition(cfg.noise_kind, cfg.noise_epsilon, full.class_count);
  }

  ExperimentSetup setup;
  std::vector<int> dims;
  dims.push_back(static_cast<int>(full.dims()));
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(full.class_count);
  setup.spec = NetworkSpec(dims);
  setup.dropped_examples = parts.dropped.size();

  setup.clients.reserve(static_cast<std::size_t>(cfg.fed.client_count));
  for (int id = 0; id < cfg.fed.client_count; ++id) {
    RngStream split_rng(cfg.fed.seed, streams::split, static_cast<std::uint64_t>(id));
    const IndexSplit split = split_train_test(parts.client_indices[static_cast<std::size_t>(id)],
                                              cfg.test_fraction, split_rng);
    ClientState client;
    client.id = id;
    client.split = materialize_split(full, id, split);
    if (cfg.noise_kind != NoiseKind::none) {
      RngStream noise_rng(cfg.fed.seed, streams::noise, static_cast<std::uint64_t>(id));
      apply_noise(client.split.train.labels, transition, noise_rng);
    }
    setup.clients.push_back(std::move(client));
  }
  return setup;
}

FinalReport final_evaluation(const std::vector<ClientState>& clients, const WeightVector& global,
                             double grid_step, int calibration_bins) {
  FinalReport report;
  report.sweep = lambda_sweep(clients, global, lambda_grid(grid_step));
  report.best = best_average(report.sweep);
  report.top1_lambda0 = report.sweep.mean_top1.empty() ? 0.0 : report.sweep.mean_top1.front();
  for (const auto& row : report.sweep.rows) {
    if (!row.has_local) report.clients_without_local.push_back(row.client_id);
  }

  std::vector<double> confidences;
  std::vector<bool> correct;
  for (const ClientState& client : clients) {
    if (client.local_model) {
      const WeightVector mixed =
          mix(global, *client.local_model, LambdaAssignment::constant(report.best.lambda_star));
      collect_predictions(mixed, client.split.test, confidences, correct);
    } else {
      collect_predictions(global, client.split.test, confidences, correct);
    }
  }
  const CalibrationResult cal = calibration_errors(confidences, correct, calibration_bins);
  report.ece = cal.ece;
  report.mce = cal.mce;
  return report;
}

// ---------------------------------------------------------------------------
// persistence

void write_rounds_csv(const std::string& path, const std::vector<RoundRecord>& history,
                      const std::string& hash_hex) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# config " << hash_hex << "\n";
  out << "round,mean_train_loss,selected_ids,eval_top1,eval_loss\n";
  for (const RoundRecord& rec : history) {
    out << rec.round << ',' << format_double(rec.mean_train_loss) << ',';
    for (std::size_t i = 0; i < rec.selected.size(); ++i) {
      if (i) out << ';';
      out << rec.selected[i];
    }
    out << ',';
    if (rec.eval) out << format_double(rec.eval->top1);
    out << ',';
    if (rec.eval) out << format_double(rec.eval->mean_loss);
    out << '\n';
  }
}

void write_sweep_csv(const std::string& path, const LambdaSweep& sweep,
                     const std::string& hash_hex) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# config " << hash_hex << "\n";
  out << "client_id,lambda,top1,loss\n";
  for (const auto& row : sweep.rows) {
    for (std::size_t g = 0; g < row.top1.size(); ++g) {
      out << row.client_id << ',' << format_double(sweep.grid[g]) << ','
          << format_double(row.top1[g]) << ',' << format_double(row.loss[g]) << '\n';
    }
  }
}

void write_plane_csv(const std::string& path, const PlaneGrid& grid,
                     const std::string& hash_hex) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# config " << hash_hex << "\n";
  out << "x,y,loss\n";
  for (std::size_t iy = 0; iy < grid.ys.size(); ++iy) {
    for (std::size_t ix = 0; ix < grid.xs.size(); ++ix) {
      out << format_double(grid.xs[ix]) << ',' << format_double(grid.ys[iy]) << ','
          << format_double(grid.loss(iy, ix)) << '\n';
    }
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'F', 'E', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ofstream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(path + ": truncated checkpoint while reading " + what);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error(path + ": truncated checkpoint while reading " + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::ifstream& in, const std::string& path, const char* what) {
  const std::uint64_t bits = get_u64(in, path, what);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

void put_model(std::ofstream& out, std::int64_t owner, const WeightVector& w) {
  put_u64(out, static_cast<std::uint64_t>(owner));
  for (double v : w.values()) put_f64(out, v);
}

}  // namespace

void save_checkpoint(const std::string& path, const WeightVector& global,
                     const std::vector<ClientState>& clients, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, hash);
  const auto& dims = global.spec().layer_dims();
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) put_u32(out, static_cast<std::uint32_t>(d));
  std::uint32_t count = 1;
  for (const auto& c : clients) {
    if (c.local_model) ++count;
  }
  put_u32(out, count);
  put_model(out, -1, global);
  for (const auto& c : clients) {
    if (c.local_model) put_model(out, c.id, *c.local_model);
  }
  if (!out) throw std::runtime_error("failed while writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic))) {
    throw std::runtime_error(path + ": truncated checkpoint while reading magic");
  }
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + ": checkpoint magic mismatch, expected 'SFEDCKPT', got '" +
                             std::string(magic, magic + 8) + "'");
  }
  const std::uint32_t version = get_u32(in, path, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config_hash = get_u64(in, path, "config hash");
  const std::uint32_t dim_count = get_u32(in, path, "dim count");
  std::vector<int> dims(dim_count);
  for (auto& d : dims) d = static_cast<int>(get_u32(in, path, "layer dim"));
  ck.spec = NetworkSpec(dims);
  const std::uint32_t model_count = get_u32(in, path, "model count");
  for (std::uint32_t m = 0; m < model_count; ++m) {
    const auto owner = static_cast<std::int64_t>(get_u64(in, path, "owner id"));
    WeightVector w(ck.spec);
    for (std::size_t i = 0; i < w.size(); ++i) w.values()[i] = get_f64(in, path, "parameter");
    if (owner == -1) {
      ck.global = std::move(w);
    } else {
      ck.locals.emplace_back(owner, std::move(w));
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// execution

namespace {

json summary_json(const RunConfig& cfg, const ServerState& state, const FinalReport& report,
                  std::size_t dropped, bool plane_written) {
  json s;
  s["config"] = to_json(cfg);
  s["config_hash"] = config_hash_hex(cfg);
  s["rounds_completed"] = state.round;
  s["dropped_examples"] = dropped;
  s["communication"] = {{"bytes_down", state.bytes_down}, {"bytes_up", state.bytes_up}};
  s["noise"] = {{"kind", cfg.noise_kind == NoiseKind::none
                             ? "none"
                             : (cfg.noise_kind == NoiseKind::pair ? "pair" : "symmetric")},
                {"epsilon", cfg.noise_epsilon}};
  const bool lambda_zero = cfg.fed.personalization_start >= cfg.fed.rounds;
  s["lambda_always_zero"] = lambda_zero;
  if (lambda_zero && cfg.fed.nu == 0.0 && cfg.fed.mu == 0.0) {
    s["reduction"] = "fedavg";
  } else if (lambda_zero && cfg.fed.nu == 0.0 && cfg.fed.mu > 0.0) {
    s["reduction"] = "fedprox";
  } else {
    s["reduction"] = nullptr;
  }
  json final;
  final["top1_lambda0"] = report.top1_lambda0;
  final["lambda_star"] = report.best.lambda_star;
  final["best_mean_top1"] = report.best.mean_top1;
  final["best_std_top1"] = report.best.std_top1;
  final["per_client_best_mean"] = report.best.per_client_mean;
  final["per_client_best_std"] = report.best.per_client_std;
  final["ece"] = report.ece;
  final["mce"] = report.mce;
  if (!state.history.empty()) {
    final["mean_train_loss_last_round"] = state.history.back().mean_train_loss;
  }
  s["final"] = final;
  s["clients_without_local_model"] = report.clients_without_local;
  s["plane_written"] = plane_written;
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int execute(const RunConfig& cfg) {
  std::string out_dir = cfg.out_dir;
  if (out_dir.empty()) {
    const char* root = std::getenv("SUPERFED_OUT");
    out_dir = std::string(root ? root : "runs") + "/" + config_hash_hex(cfg);
  }
  ServerState state;
  const std::string hash_hex = config_hash_hex(cfg);
  try {
    cfg.fed.validate();
    fs::create_directories(out_dir);
    write_text(out_dir + "/config.json", to_json(cfg).dump(2) + "\n");

    ExperimentSetup setup = build_setup(cfg);
    RngStream init_rng(cfg.fed.seed, streams::global_init);
    const WeightVector initial = WeightVector::random_init(setup.spec, init_rng);

    RunHooks hooks;
    hooks.eval_every = cfg.eval_every;
    hooks.evaluate = [](const WeightVector& global, const std::vector<ClientState>& clients) {
      EvalPoint point;
      for (const ClientState& c : clients) {
        const ModelEval ev = evaluate_model(global, c.split.test);
        point.top1 += ev.top1;
        point.mean_loss += ev.mean_loss;
      }
      point.top1 /= static_cast<double>(clients.size());
      point.mean_loss /= static_cast<double>(clients.size());
      return point;
    };
    FinalReport report;
    hooks.final_eval = [&](const WeightVector& global, std::vector<ClientState>& clients) {
      report = final_evaluation(clients, global, cfg.lambda_grid_step, cfg.calibration_bins);
    };

    run(cfg.fed, setup.clients, initial, state, hooks, cfg.threads);

    bool plane_written = false;
    if (cfg.plane.enabled) {
      const WeightVector* anchor2 = nullptr;
      const WeightVector* anchor3 = nullptr;
      for (const auto& c : setup.clients) {
        if (!c.local_model) continue;
        if (!anchor2) {
          anchor2 = &*c.local_model;
        } else if (!anchor3) {
          anchor3 = &*c.local_model;
          break;
        }
      }
      if (anchor2 && anchor3) {
        // pooled test set, ascending client id
        std::size_t total = 0;
        for (const auto& c : setup.clients) total += c.split.test.size();
        LabeledDataset pooled;
        pooled.class_count = setup.spec.class_count();
        pooled.features = Matrix(total, static_cast<std::size_t>(setup.spec.input_dim()));
        pooled.labels.reserve(total);
        std::size_t row = 0;
        for (const auto& c : setup.clients) {
          for (std::size_t i = 0; i < c.split.test.size(); ++i, ++row) {
            const double* src = c.split.test.features.row(i);
            std::copy(src, src + pooled.features.cols(), pooled.features.row(row));
            pooled.labels.push_back(c.split.test.labels[i]);
          }
        }
        const PlaneGrid grid = plane_probe(state.global, *anchor2, *anchor3, pooled,
                                           cfg.plane.resolution, cfg.plane.margin, cfg.plane.l2);
        write_plane_csv(out_dir + "/plane.csv", grid, hash_hex);
        plane_written = true;
      }
    }

    write_rounds_csv(out_dir + "/rounds.csv", state.history, hash_hex);
    write_sweep_csv(out_dir + "/lambda_sweep.csv", report.sweep, hash_hex);
    save_checkpoint(out_dir + "/checkpoint.bin", state.global, setup.clients, config_hash(cfg));
    write_text(out_dir + "/summary.json",
               summary_json(cfg, state, report, setup.dropped_examples, plane_written).dump(2) +
                   "\n");
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    // flush whatever history exists so the failure can be inspected
    try {
      if (fs::exists(out_dir)) {
        write_rounds_csv(out_dir + "/rounds.csv", state.history, hash_hex);
      }
    } catch (...) {
    }
    return 1;
  }
}

}  // namespace superfed
