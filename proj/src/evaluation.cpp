#include "superfed/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace superfed {

namespace {

// count of classes ranked strictly ahead of the true label (ties favor the
// lower class id)
int rank_of_label(const double* logits, std::size_t classes, int label) {
  const double own = logits[static_cast<std::size_t>(label)];
  int ahead = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (static_cast<int>(c) == label) continue;
    if (logits[c] > own || (logits[c] == own && static_cast<int>(c) < label)) ++ahead;
  }
  return ahead;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double mean_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.row(i);
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    loss += zmax + std::log(sum) - z[static_cast<std::size_t>(labels[i])];
  }
  return n == 0 ? 0.0 : loss / static_cast<double>(n);
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

double top_k_accuracy(const Matrix& logits, const std::vector<int>& labels, int k) {
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != n) throw std::invalid_argument("top_k_accuracy: label count mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > classes) {
    throw std::invalid_argument("top_k_accuracy: k must be in [1, class count]");
  }
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rank_of_label(logits.row(i), classes, labels[i]) < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

CalibrationResult calibration_errors(const std::vector<double>& confidences,
                                     const std::vector<bool>& correct, int bin_count) {
  if (confidences.size() != correct.size()) {
    throw std::invalid_argument("calibration_errors: confidence/correctness size mismatch");
  }
  if (confidences.empty()) throw std::invalid_argument("calibration_errors: no samples");
  if (bin_count < 1) throw std::invalid_argument("calibration_errors: bin_count must be >= 1");

  CalibrationResult out;
  out.bins.bin_count = bin_count;
  out.bins.counts.assign(static_cast<std::size_t>(bin_count), 0);
  out.bins.confidence_sum.assign(static_cast<std::size_t>(bin_count), 0.0);
  out.bins.correct.assign(static_cast<std::size_t>(bin_count), 0);

  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c > 0.0 && c <= 1.0)) {
      throw std::invalid_argument("calibration_errors: confidence must lie in (0, 1]");
    }
    // bins are ((b)/M, (b+1)/M]
    int b = static_cast<int>(std::ceil(c * bin_count)) - 1;
    b = std::clamp(b, 0, bin_count - 1);
    out.bins.counts[static_cast<std::size_t>(b)] += 1;
    out.bins.confidence_sum[static_cast<std::size_t>(b)] += c;
    if (correct[i]) out.bins.correct[static_cast<std::size_t>(b)] += 1;
  }

  const double total = static_cast<double>(confidences.size());
  for (int b = 0; b < bin_count; ++b) {
    if (out.bins.counts[static_cast<std::size_t>(b)] == 0) continue;
    const double gap = std::fabs(out.bins.accuracy(b) - out.bins.mean_confidence(b));
    out.ece += static_cast<double>(out.bins.counts[static_cast<std::size_t>(b)]) / total * gap;
    out.mce = std::max(out.mce, gap);
  }
  return out;
}

ModelEval evaluate_model(const WeightVector& w, const LabeledDataset& ds) {
  auto [logits, trace] = forward(w, ds.features);
  (void)trace;
  ModelEval out;
  out.top1 = top_k_accuracy(logits, ds.labels, 1);
  out.mean_loss = mean_cross_entropy(logits, ds.labels);
  return out;
}

void collect_predictions(const WeightVector& w, const LabeledDataset& ds,
                         std::vector<double>& confidences, std::vector<bool>& correct) {
  auto [logits, trace] = forward(w, ds.features);
  (void)trace;
  const std::size_t classes = logits.cols();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double* z = logits.row(i);
    double zmax = z[0];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (z[c] > zmax) {  // strict: ties keep the lower class id
        zmax = z[c];
        arg = c;
      }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    confidences.push_back(1.0 / sum);  // softmax of the argmax entry
    correct.push_back(static_cast<int>(arg) == ds.labels[i]);
  }
}

std::vector<double> lambda_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("lambda_grid: bad step");
  std::vector<double> grid;
  const int n = static_cast<int>(std::lround(1.0 / step));
  grid.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) grid.push_back(static_cast<double>(i) * step);
  grid.front() = 0.0;
  grid.back() = 1.0;
  return grid;
}

LambdaSweep lambda_sweep(const std::vector<ClientState>& clients, const WeightVector& global,
                         const std::vector<double>& grid) {
  LambdaSweep sweep;
  sweep.grid = grid;
  sweep.rows.reserve(clients.size());

  for (const ClientState& client : clients) {
    LambdaSweep::ClientRow row;
    row.client_id = client.id;
    row.has_local = client.local_model.has_value();
    if (!row.has_local) {
      const ModelEval ev = evaluate_model(global, client.split.test);
      row.top1.push_back(ev.top1);
      row.loss.push_back(ev.mean_loss);
      sweep.rows.push_back(std::move(row));
      continue;
    }
    row.top1.reserve(grid.size());
    row.loss.reserve(grid.size());
    for (double lam : grid) {
      const WeightVector mixed = mix(global, *client.local_model, LambdaAssignment::constant(lam));
      const ModelEval ev = evaluate_model(mixed, client.split.test);
      row.top1.push_back(ev.top1);
      row.loss.push_back(ev.mean_loss);
    }
    sweep.rows.push_back(std::move(row));
  }

  sweep.mean_top1.resize(grid.size(), 0.0);
  sweep.std_top1.resize(grid.size(), 0.0);
  sweep.mean_loss.resize(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> accs;
    std::vector<double> losses;
    for (const auto& row : sweep.rows) {
      if (!row.has_local) continue;
      accs.push_back(row.top1[g]);
      losses.push_back(row.loss[g]);
    }
    sweep.mean_top1[g] = mean_of(accs);
    sweep.std_top1[g] = std_of(accs);
    sweep.mean_loss[g] = mean_of(losses);
  }
  return sweep;
}

BestAverage best_average(const LambdaSweep& sweep) {
  if (sweep.grid.empty() || sweep.rows.empty()) {
    throw std::invalid_argument("best_average: empty sweep");
  }
  BestAverage out;
  std::size_t best = 0;
  for (std::size_t g = 1; g < sweep.grid.size(); ++g) {
    if (sweep.mean_top1[g] > sweep.mean_top1[best]) best = g;  // ties keep the lower lambda
  }
  out.lambda_star = sweep.grid[best];
  out.mean_top1 = sweep.mean_top1[best];
  out.std_top1 = sweep.std_top1[best];

  std::vector<double> per_client;
  for (const auto& row : sweep.rows) {
    if (!row.has_local) continue;
    per_client.push_back(*std::max_element(row.top1.begin(), row.top1.end()));
  }
  out.per_client_mean = mean_of(per_client);
  out.per_client_std = std_of(per_client);
  return out;
}

PlaneGrid plane_probe(const WeightVector& a1, const WeightVector& a2, const WeightVector& a3,
                      const LabeledDataset& eval_set, int resolution, double margin, double l2) {
  if (!a1.same_shape(a2) || !a1.same_shape(a3)) {
    throw std::invalid_argument("plane_probe: anchors must share one spec");
  }
  if (resolution < 2) throw std::invalid_argument("plane_probe: resolution must be >= 2");

  WeightVector d2 = a2;
  d2.add_scaled(a1, -1.0);
  const double n2 = std::sqrt(d2.squared_norm());
  if (n2 < 1e-10) throw std::invalid_argument("plane_probe: a2 coincides with a1");
  WeightVector u = d2;
  u.scale(1.0 / n2);

  WeightVector d3 = a3;
  d3.add_scaled(a1, -1.0);
  const double x3 = d3.dot(u);
  WeightVector v = d3;
  v.add_scaled(u, -x3);
  const double y3 = std::sqrt(v.squared_norm());
  if (y3 < 1e-10) {
    throw std::invalid_argument("plane_probe: anchors are collinear, plane is degenerate");
  }
  v.scale(1.0 / y3);

  PlaneGrid grid;
  grid.origin = a1;
  grid.u = std::move(u);
  grid.v = std::move(v);
  grid.ax2 = n2;
  grid.ax3 = x3;
  grid.ay3 = y3;

  const double xmin = std::min({0.0, n2, x3});
  const double xmax = std::max({0.0, n2, x3});
  const double ymin = std::min(0.0, y3);
  const double ymax = std::max(0.0, y3);
  const double xpad = margin * (xmax - xmin);
  const double ypad = margin * (ymax - ymin);

  grid.xs.resize(static_cast<std::size_t>(resolution));
  grid.ys.resize(static_cast<std::size_t>(resolution));
  for (int i = 0; i < resolution; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(resolution - 1);
    grid.xs[static_cast<std::size_t>(i)] = (xmin - xpad) + t * ((xmax + xpad) - (xmin - xpad));
    grid.ys[static_cast<std::size_t>(i)] = (ymin - ypad) + t * ((ymax + ypad) - (ymin - ypad));
  }

  grid.loss = Matrix(grid.ys.size(), grid.xs.size());
  for (std::size_t iy = 0; iy < grid.ys.size(); ++iy) {
    for (std::size_t ix = 0; ix < grid.xs.size(); ++ix) {
      WeightVector w = grid.origin;
      w.add_scaled(grid.u, grid.xs[ix]);
      w.add_scaled(grid.v, grid.ys[iy]);
      auto [logits, trace] = forward(w, eval_set.features);
      (void)trace;
      grid.loss(iy, ix) = mean_cross_entropy(logits, eval_set.labels) + l2 * w.squared_norm();
    }
  }
  return grid;
}

}  // namespace superfed
