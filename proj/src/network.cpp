#include "superfed/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace superfed {

NetworkSpec::NetworkSpec(std::vector<int> layer_dims) : dims_(std::move(layer_dims)) {
  if (dims_.size() < 3) {
    throw std::invalid_argument("NetworkSpec: need input dim, at least one hidden dim, and class count");
  }
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("NetworkSpec: all layer dims must be >= 1");
  }
}

std::size_t NetworkSpec::param_count() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    total += static_cast<std::size_t>(dims_[i + 1]) * static_cast<std::size_t>(dims_[i]) +
             static_cast<std::size_t>(dims_[i + 1]);
  }
  return total;
}

WeightVector::WeightVector(const NetworkSpec& spec) : spec_(spec) {
  if (!spec.valid()) throw std::invalid_argument("WeightVector: invalid network spec");
  const auto& dims = spec_.layer_dims();
  offsets_.reserve(dims.size());
  offsets_.push_back(0);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t out = static_cast<std::size_t>(dims[i + 1]);
    const std::size_t in = static_cast<std::size_t>(dims[i]);
    offsets_.push_back(offsets_.back() + out * in + out);
  }
  values_.assign(offsets_.back(), 0.0);
}

WeightVector WeightVector::random_init(const NetworkSpec& spec, RngStream& rng) {
  WeightVector w(spec);
  const auto& dims = spec.layer_dims();
  for (int b = 0; b < spec.block_count(); ++b) {
    const int out = dims[b + 1];
    const int in = dims[b];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    double* block = w.values_.data() + w.offsets_[static_cast<std::size_t>(b)];
    for (int i = 0; i < out * in; ++i) block[i] = rng.uniform(-bound, bound);
    // biases stay zero
  }
  return w;
}

double WeightVector::weight_at(int block, int out, int in) const {
  const int in_dim = spec_.layer_dims()[static_cast<std::size_t>(block)];
  return values_[offsets_[static_cast<std::size_t>(block)] +
                 static_cast<std::size_t>(out) * static_cast<std::size_t>(in_dim) +
                 static_cast<std::size_t>(in)];
}

double& WeightVector::weight_at(int block, int out, int in) {
  const int in_dim = spec_.layer_dims()[static_cast<std::size_t>(block)];
  return values_[offsets_[static_cast<std::size_t>(block)] +
                 static_cast<std::size_t>(out) * static_cast<std::size_t>(in_dim) +
                 static_cast<std::size_t>(in)];
}

double WeightVector::bias_at(int block, int out) const {
  const int in_dim = spec_.layer_dims()[static_cast<std::size_t>(block)];
  const int out_dim = spec_.layer_dims()[static_cast<std::size_t>(block) + 1];
  return values_[offsets_[static_cast<std::size_t>(block)] +
                 static_cast<std::size_t>(out_dim) * static_cast<std::size_t>(in_dim) +
                 static_cast<std::size_t>(out)];
}

double& WeightVector::bias_at(int block, int out) {
  const int in_dim = spec_.layer_dims()[static_cast<std::size_t>(block)];
  const int out_dim = spec_.layer_dims()[static_cast<std::size_t>(block) + 1];
  return values_[offsets_[static_cast<std::size_t>(block)] +
                 static_cast<std::size_t>(out_dim) * static_cast<std::size_t>(in_dim) +
                 static_cast<std::size_t>(out)];
}

bool WeightVector::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void WeightVector::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

void WeightVector::scale(double c) {
  for (double& v : values_) v *= c;
}

void WeightVector::add_scaled(const WeightVector& other, double c) {
  if (!same_shape(other)) throw std::invalid_argument("add_scaled: shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += c * other.values_[i];
}

double WeightVector::dot(const WeightVector& other) const {
  if (!same_shape(other)) throw std::invalid_argument("dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

std::pair<Matrix, ForwardTrace> forward(const WeightVector& w, const Matrix& batch) {
  const NetworkSpec& spec = w.spec();
  if (!spec.valid()) throw std::invalid_argument("forward: weight vector has no spec");
  if (batch.cols() != static_cast<std::size_t>(spec.input_dim())) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) +
                                " columns, expected " + std::to_string(spec.input_dim()));
  }
  const auto& dims = spec.layer_dims();
  const std::size_t n = batch.rows();

  ForwardTrace trace;
  trace.input = batch;
  trace.pre_activations.reserve(static_cast<std::size_t>(spec.block_count()));
  trace.activations.reserve(static_cast<std::size_t>(spec.block_count()) - 1);

  const Matrix* prev = &trace.input;
  for (int b = 0; b < spec.block_count(); ++b) {
    const std::size_t out = static_cast<std::size_t>(dims[static_cast<std::size_t>(b) + 1]);
    const std::size_t in = static_cast<std::size_t>(dims[static_cast<std::size_t>(b)]);
    const double* wb = w.data() + w.block_offset(b);
    const double* bias = wb + out * in;

    Matrix z(n, out);
    for (std::size_t i = 0; i < n; ++i) {
      const double* a = prev->row(i);
      double* zi = z.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        const double* wrow = wb + o * in;
        double acc = bias[o];
        for (std::size_t k = 0; k < in; ++k) acc += wrow[k] * a[k];
        zi[o] = acc;
      }
    }
    trace.pre_activations.push_back(z);
    if (b + 1 < spec.block_count()) {
      Matrix a = trace.pre_activations.back();
      for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = std::max(a.data()[i], 0.0);
      trace.activations.push_back(std::move(a));
      prev = &trace.activations.back();
    }
  }
  return {trace.pre_activations.back(), std::move(trace)};
}

std::pair<double, WeightVector> loss_and_grad(const WeightVector& w, ForwardTrace& trace,
                                              const std::vector<int>& labels) {
  const NetworkSpec& spec = w.spec();
  if (trace.consumed) throw std::logic_error("loss_and_grad: trace already consumed");
  const Matrix& logits = trace.pre_activations.back();
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != n) throw std::invalid_argument("loss_and_grad: label count does not match batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("loss_and_grad: label " + std::to_string(y) + " out of range [0, " +
                                  std::to_string(classes) + ")");
    }
  }
  trace.consumed = true;

  // softmax cross-entropy via log-sum-exp; dZ = (softmax - onehot)/n
  Matrix dz(n, classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = logits.row(i);
    double zmax = zi[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, zi[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(zi[c] - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - zi[static_cast<std::size_t>(labels[i])];
    double* di = dz.row(i);
    for (std::size_t c = 0; c < classes; ++c) {
      di[c] = std::exp(zi[c] - lse) / static_cast<double>(n);
    }
    di[static_cast<std::size_t>(labels[i])] -= 1.0 / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);

  // reverse pass
  const auto& dims = spec.layer_dims();
  WeightVector grad(spec);
  Matrix delta = std::move(dz);
  for (int b = spec.block_count() - 1; b >= 0; --b) {
    const std::size_t out = static_cast<std::size_t>(dims[static_cast<std::size_t>(b) + 1]);
    const std::size_t in = static_cast<std::size_t>(dims[static_cast<std::size_t>(b)]);
    const Matrix& prev_act =
        (b == 0) ? trace.input : trace.activations[static_cast<std::size_t>(b) - 1];
    double* gw = grad.data() + grad.block_offset(b);
    double* gb = gw + out * in;

    for (std::size_t i = 0; i < n; ++i) {
      const double* di = delta.row(i);
      const double* a = prev_act.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        double* grow = gw + o * in;
        for (std::size_t k = 0; k < in; ++k) grow[k] += d * a[k];
        gb[o] += d;
      }
    }

    if (b > 0) {
      const double* wb = w.data() + w.block_offset(b);
      const Matrix& pre = trace.pre_activations[static_cast<std::size_t>(b) - 1];
      Matrix next(n, in);
      for (std::size_t i = 0; i < n; ++i) {
        const double* di = delta.row(i);
        double* ni = next.row(i);
        for (std::size_t o = 0; o < out; ++o) {
          const double d = di[o];
          if (d == 0.0) continue;
          const double* wrow = wb + o * in;
          for (std::size_t k = 0; k < in; ++k) ni[k] += d * wrow[k];
        }
        const double* zi = pre.row(i);
        for (std::size_t k = 0; k < in; ++k) {
          if (zi[k] <= 0.0) ni[k] = 0.0;  // relu gate, derivative 0 at the kink
        }
      }
      delta = std::move(next);
    }
  }
  return {loss, std::move(grad)};
}

OptimizerState make_optimizer(const NetworkSpec& spec, double momentum, double weight_decay) {
  OptimizerState state;
  state.velocity = WeightVector(spec);
  state.momentum = momentum;
  state.weight_decay = weight_decay;
  return state;
}

void sgd_step(WeightVector& w, const WeightVector& grad, OptimizerState& state, double lr) {
  if (!w.same_shape(grad) || !w.same_shape(state.velocity)) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (!grad.all_finite()) throw std::runtime_error("sgd_step: non-finite gradient entries");
  const double m = state.momentum;
  const double wd = state.weight_decay;
  double* wv = w.data();
  const double* gv = grad.data();
  double* vv = state.velocity.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    vv[i] = m * vv[i] + (gv[i] + wd * wv[i]);
    wv[i] -= lr * vv[i];
  }
}

double lr_at_round(double eta0, int round) {
  if (round < 0) throw std::invalid_argument("lr_at_round: round must be >= 0");
  return eta0 * std::pow(0.99, round);
}

}  // namespace superfed
