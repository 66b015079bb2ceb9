#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "superfed/matrix.hpp"
#include "superfed/rng.hpp"

namespace superfed {

// Shape of a fully connected rectifier network: input dim, one or more
// hidden dims, class count. Hidden layers apply relu; the output layer
// emits raw logits, softmax lives inside the loss.
class NetworkSpec {
 public:
  NetworkSpec() = default;  // empty placeholder, not usable for math
  explicit NetworkSpec(std::vector<int> layer_dims);

  const std::vector<int>& layer_dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int class_count() const { return dims_.back(); }
  // number of (weight, bias) blocks = number of layers
  int block_count() const { return static_cast<int>(dims_.size()) - 1; }
  std::size_t param_count() const;
  bool valid() const { return dims_.size() >= 3; }

  bool operator==(const NetworkSpec& other) const { return dims_ == other.dims_; }
  bool operator!=(const NetworkSpec& other) const { return !(*this == other); }

 private:
  std::vector<int> dims_;
};

// Parameters of one network. Per layer a weight matrix (out x in) and a
// bias vector, held in one flat buffer. Flattened order is a contract
// (checkpoints and finite-difference probes rely on it): for each layer in
// order, the weight entries row by row, then the bias entries.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(const NetworkSpec& spec);

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
  // Draw order equals flattened order of the weight entries.
  static WeightVector random_init(const NetworkSpec& spec, RngStream& rng);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  std::size_t block_offset(int block) const { return offsets_[static_cast<std::size_t>(block)]; }
  std::size_t block_size(int block) const {
    return offsets_[static_cast<std::size_t>(block) + 1] - offsets_[static_cast<std::size_t>(block)];
  }
  double weight_at(int block, int out, int in) const;
  double& weight_at(int block, int out, int in);
  double bias_at(int block, int out) const;
  double& bias_at(int block, int out);

  bool same_shape(const WeightVector& other) const { return spec_ == other.spec_; }
  bool all_finite() const;

  void fill(double value);
  void scale(double c);
  void add_scaled(const WeightVector& other, double c);  // *this += c * other
  double dot(const WeightVector& other) const;
  double squared_norm() const { return dot(*this); }

 private:
  NetworkSpec spec_;
  std::vector<std::size_t> offsets_;  // block_count + 1 entries into values_
  std::vector<double> values_;
};

// Cached activations for one mini-batch; consumed by exactly one backward pass.
struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_activations;  // one per layer
  std::vector<Matrix> activations;      // post-relu, hidden layers only
  bool consumed = false;
};

// Logits for a batch (rows = examples) plus the trace backward needs.
std::pair<Matrix, ForwardTrace> forward(const WeightVector& w, const Matrix& batch);

// Mean softmax cross-entropy over the batch and its exact gradient in
// parameter shape. Consumes the trace.
std::pair<double, WeightVector> loss_and_grad(const WeightVector& w, ForwardTrace& trace,
                                              const std::vector<int>& labels);

struct OptimizerState {
  WeightVector velocity;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

OptimizerState make_optimizer(const NetworkSpec& spec, double momentum = 0.9,
                              double weight_decay = 1e-4);

// velocity <- momentum * velocity + (grad + weight_decay * w)
// w        <- w - lr * velocity
void sgd_step(WeightVector& w, const WeightVector& grad, OptimizerState& state, double lr);

// 1% multiplicative decay per round.
double lr_at_round(double eta0, int round);

}  // namespace superfed
