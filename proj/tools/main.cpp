#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "superfed/experiment.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
  CLI::App app{
      "superfed - a deterministic simulator of subspace-connected personalized federated "
      "learning, with exact FedAvg/FedProx reductions"};

  std::string config_path;
  std::string preset;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--preset", preset,
                 "named preset: mnist-noise, noise-symmetric-0.6, fedavg-reduction, "
                 "fedprox-reduction");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  int rounds = 0, local_epochs = 0, batch_size = 0, clients = 0, personalization_start = 0;
  int eval_every = 0, calibration_bins = 0, threads = 0, plane_resolution = 0;
  int classes = 0, dims = 0, per_class = 0;
  double fraction = 0, lr = 0, mu = 0, nu = 0, test_fraction = 0, lambda_grid_step = 0;
  double spread = 0, plane_margin = 0, plane_l2 = 0;
  std::int64_t seed = 0;
  std::string scheme, partition, noise, out, local_init, dataset_type, idx_images, idx_labels;
  std::vector<int> hidden;
  bool cos_per_layer = false, plane_enabled = false;

  auto* o_rounds = app.add_option("--rounds", rounds, "communication rounds R");
  auto* o_epochs = app.add_option("--local-epochs", local_epochs, "local epochs E");
  auto* o_batch = app.add_option("--batch-size", batch_size, "mini-batch size B");
  auto* o_clients = app.add_option("--clients", clients, "client count K");
  auto* o_fraction = app.add_option("--fraction", fraction, "sampled fraction C per round");
  auto* o_lr = app.add_option("--lr", lr, "base learning rate (decays 1%/round)");
  auto* o_mu = app.add_option("--mu", mu, "proximal penalty strength");
  auto* o_nu = app.add_option("--nu", nu, "orthogonality penalty strength");
  auto* o_scheme = app.add_option("--scheme", scheme, "mixing scheme: mm or lm");
  auto* o_pstart = app.add_option("--personalization-start", personalization_start,
                                  "round L at which lambda sampling begins");
  auto* o_partition =
      app.add_option("--partition", partition, "pathological or dirichlet:<alpha>");
  auto* o_noise = app.add_option("--noise", noise, "none, pair:<eps> or symmetric:<eps>");
  auto* o_seed = app.add_option("--seed", seed, "master seed");
  auto* o_out = app.add_option("--out", out, "output directory (default $SUPERFED_OUT/<hash>)");
  auto* o_init = app.add_option("--local-init", local_init, "local model init: fresh or copy");
  auto* o_cpl = app.add_flag("--cos-per-layer", cos_per_layer,
                             "average the cosine penalty per layer instead of globally");
  auto* o_tf = app.add_option("--test-fraction", test_fraction, "per-client test fraction");
  auto* o_ee = app.add_option("--eval-every", eval_every, "evaluate every N rounds (0 = final only)");
  auto* o_step = app.add_option("--lambda-grid-step", lambda_grid_step, "sweep grid step");
  auto* o_bins = app.add_option("--calibration-bins", calibration_bins, "calibration bin count");
  auto* o_threads = app.add_option("--threads", threads, "worker threads for client updates");
  auto* o_hidden = app.add_option("--hidden", hidden, "hidden layer widths");
  auto* o_dstype = app.add_option("--dataset", dataset_type, "synthetic or idx");
  auto* o_images = app.add_option("--idx-images", idx_images, "idx image file");
  auto* o_labels = app.add_option("--idx-labels", idx_labels, "idx label file");
  auto* o_classes = app.add_option("--classes", classes, "synthetic class count");
  auto* o_dims = app.add_option("--dims", dims, "synthetic feature dims");
  auto* o_perclass = app.add_option("--per-class", per_class, "synthetic examples per class");
  auto* o_spread = app.add_option("--spread", spread, "synthetic blob spread");
  auto* o_plane = app.add_flag("--plane", plane_enabled, "emit the two-dimensional loss plane");
  auto* o_pres = app.add_option("--plane-resolution", plane_resolution, "plane grid resolution");
  auto* o_pmargin = app.add_option("--plane-margin", plane_margin, "plane margin fraction");
  auto* o_pl2 = app.add_option("--plane-l2", plane_l2, "l2 coefficient for the plane loss");

  CLI11_PARSE(app, argc, argv);

  try {
    json doc = json::object();
    if (!preset.empty()) superfed::merge_config(doc, superfed::preset_overrides(preset));
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        std::cerr << "cannot open config file " << config_path << "\n";
        return 1;
      }
      json file_doc;
      in >> file_doc;
      superfed::merge_config(doc, file_doc);
    }

    json flags = json::object();
    if (o_rounds->count()) flags["rounds"] = rounds;
    if (o_epochs->count()) flags["local_epochs"] = local_epochs;
    if (o_batch->count()) flags["batch_size"] = batch_size;
    if (o_clients->count()) flags["clients"] = clients;
    if (o_fraction->count()) flags["fraction"] = fraction;
    if (o_lr->count()) flags["lr"] = lr;
    if (o_mu->count()) flags["mu"] = mu;
    if (o_nu->count()) flags["nu"] = nu;
    if (o_scheme->count()) flags["scheme"] = scheme;
    if (o_pstart->count()) flags["personalization_start"] = personalization_start;
    if (o_partition->count()) flags["partition"] = partition;
    if (o_noise->count()) flags["noise"] = noise;
    if (o_seed->count()) flags["seed"] = seed;
    if (o_out->count()) flags["out"] = out;
    if (o_init->count()) flags["local_init"] = local_init;
    if (o_cpl->count()) flags["cos_per_layer"] = cos_per_layer;
    if (o_tf->count()) flags["test_fraction"] = test_fraction;
    if (o_ee->count()) flags["eval_every"] = eval_every;
    if (o_step->count()) flags["lambda_grid_step"] = lambda_grid_step;
    if (o_bins->count()) flags["calibration_bins"] = calibration_bins;
    if (o_threads->count()) flags["threads"] = threads;
    if (o_hidden->count()) flags["hidden"] = hidden;
    json dataset = json::object();
    if (o_dstype->count()) dataset["type"] = dataset_type;
    if (o_images->count()) dataset["images"] = idx_images;
    if (o_labels->count()) dataset["labels"] = idx_labels;
    if (o_classes->count()) dataset["classes"] = classes;
    if (o_dims->count()) dataset["dims"] = dims;
    if (o_perclass->count()) dataset["per_class"] = per_class;
    if (o_spread->count()) dataset["spread"] = spread;
    if (!dataset.empty()) flags["dataset"] = dataset;
    json plane = json::object();
    if (o_plane->count()) plane["enabled"] = plane_enabled;
    if (o_pres->count()) plane["resolution"] = plane_resolution;
    if (o_pmargin->count()) plane["margin"] = plane_margin;
    if (o_pl2->count()) plane["l2"] = plane_l2;
    if (!plane.empty()) flags["plane"] = plane;
    superfed::merge_config(doc, flags);

    const superfed::RunConfig cfg = superfed::parse_config(doc);
    if (print_config) {
      std::cout << superfed::to_json(cfg).dump(2) << "\n";
      return 0;
    }
    return superfed::execute(cfg);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
