#pragma once

#include <vector>

#include "superfed/data.hpp"
#include "superfed/federation.hpp"
#include "superfed/matrix.hpp"
#include "superfed/network.hpp"

namespace superfed {

// Fraction of examples whose true label is among the k largest logits.
// Ties rank the lower class id first.
double top_k_accuracy(const Matrix& logits, const std::vector<int>& labels, int k);

struct CalibrationBins {
  int bin_count = 0;
  std::vector<std::size_t> counts;
  std::vector<double> confidence_sum;
  std::vector<std::size_t> correct;

  double mean_confidence(int b) const {
    return counts[static_cast<std::size_t>(b)] == 0
               ? 0.0
               : confidence_sum[static_cast<std::size_t>(b)] /
                     static_cast<double>(counts[static_cast<std::size_t>(b)]);
  }
  double accuracy(int b) const {
    return counts[static_cast<std::size_t>(b)] == 0
               ? 0.0
               : static_cast<double>(correct[static_cast<std::size_t>(b)]) /
                     static_cast<double>(counts[static_cast<std::size_t>(b)]);
  }
};

struct CalibrationResult {
  double ece = 0.0;
  double mce = 0.0;
  CalibrationBins bins;
};

// Equal-width bins over (0, 1] on max-softmax confidence.
// ECE = sum_b (n_b / N) |acc_b - conf_b|; MCE = max over non-empty bins.
CalibrationResult calibration_errors(const std::vector<double>& confidences,
                                     const std::vector<bool>& correct, int bin_count);

struct ModelEval {
  double top1 = 0.0;
  double mean_loss = 0.0;
};

ModelEval evaluate_model(const WeightVector& w, const LabeledDataset& ds);

// Appends one (max-softmax confidence, top-1 correctness) pair per example.
void collect_predictions(const WeightVector& w, const LabeledDataset& ds,
                         std::vector<double>& confidences, std::vector<bool>& correct);

// Inclusive grid 0, step, 2*step, ..., 1.
std::vector<double> lambda_grid(double step);

struct LambdaSweep {
  std::vector<double> grid;
  struct ClientRow {
    int client_id = -1;
    bool has_local = false;  // without a local model only lambda = 0 is evaluated
    std::vector<double> top1;
    std::vector<double> loss;
  };
  std::vector<ClientRow> rows;
  // aggregates across clients that own a local model
  std::vector<double> mean_top1;
  std::vector<double> std_top1;
  std::vector<double> mean_loss;
};

// For every client and grid value evaluate (1-lambda) * global + lambda * local
// on the client's test split. Clients that never participated are flagged and
// enter no aggregate.
LambdaSweep lambda_sweep(const std::vector<ClientState>& clients, const WeightVector& global,
                         const std::vector<double>& grid);

struct BestAverage {
  double lambda_star = 0.0;  // argmax of the cross-client mean, lowest lambda on ties
  double mean_top1 = 0.0;
  double std_top1 = 0.0;
  // each client picks its own best lambda
  double per_client_mean = 0.0;
  double per_client_std = 0.0;
};

BestAverage best_average(const LambdaSweep& sweep);

// Two-dimensional slice of the loss through three anchor weight vectors:
// u along a2 - a1, v the normalized orthogonal rest of a3 - a1. Grid nodes
// carry W = a1 + x u + y v and the (optionally l2-regularized) mean
// cross-entropy on the eval set.
struct PlaneGrid {
  WeightVector origin;  // a1
  WeightVector u;
  WeightVector v;
  double ax2 = 0.0;           // a2 = origin + ax2 * u
  double ax3 = 0.0, ay3 = 0.0;  // a3 = origin + ax3 * u + ay3 * v
  std::vector<double> xs;
  std::vector<double> ys;
  Matrix loss;  // ys.size() rows, xs.size() cols
};

PlaneGrid plane_probe(const WeightVector& a1, const WeightVector& a2, const WeightVector& a3,
                      const LabeledDataset& eval_set, int resolution, double margin,
                      double l2 = 0.0);

}  // namespace superfed
