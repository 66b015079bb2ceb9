#include "superfed/mixing.hpp"

#include <cmath>
#include <stdexcept>

namespace superfed {

LambdaAssignment LambdaAssignment::zero(MixScheme scheme, int block_count) {
  LambdaAssignment lam;
  lam.scheme = scheme;
  lam.values.assign(scheme == MixScheme::model ? 1 : static_cast<std::size_t>(block_count), 0.0);
  return lam;
}

LambdaAssignment LambdaAssignment::constant(double lambda) {
  LambdaAssignment lam;
  lam.scheme = MixScheme::model;
  lam.values.assign(1, lambda);
  return lam;
}

LambdaAssignment sample_lambda(RngStream& rng, MixScheme scheme, int round,
                               int personalization_start, int block_count) {
  if (block_count < 1) throw std::invalid_argument("sample_lambda: block_count must be >= 1");
  if (round < personalization_start) {
    return LambdaAssignment::zero(scheme, block_count);
  }
  LambdaAssignment lam;
  lam.scheme = scheme;
  const std::size_t count = scheme == MixScheme::model ? 1 : static_cast<std::size_t>(block_count);
  lam.values.resize(count);
  for (auto& v : lam.values) v = rng.uniform01();
  return lam;
}

WeightVector mix(const WeightVector& federated, const WeightVector& local,
                 const LambdaAssignment& lambda) {
  if (!federated.same_shape(local)) throw std::invalid_argument("mix: shape mismatch");
  const int blocks = federated.spec().block_count();
  if (lambda.scheme == MixScheme::layer &&
      lambda.values.size() != static_cast<std::size_t>(blocks)) {
    throw std::invalid_argument("mix: lambda count does not match layer count");
  }
  if (lambda.scheme == MixScheme::model && lambda.values.size() != 1) {
    throw std::invalid_argument("mix: model mixing expects a single lambda");
  }
  WeightVector out(federated.spec());
  for (int b = 0; b < blocks; ++b) {
    const double lam = lambda.for_block(b);
    const std::size_t begin = out.block_offset(b);
    const std::size_t end = begin + out.block_size(b);
    const double* f = federated.data();
    const double* l = local.data();
    double* o = out.data();
    for (std::size_t i = begin; i < end; ++i) o[i] = (1.0 - lam) * f[i] + lam * l[i];
  }
  return out;
}

namespace {

// cos^2 and gradients over one contiguous index range of the two vectors.
void cos_sq_range(const WeightVector& f, const WeightVector& l, std::size_t begin, std::size_t end,
                  double eps, double scale, double& value, WeightVector& grad_f,
                  WeightVector& grad_l) {
  double ff = 0.0, ll = 0.0, fl = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    ff += f.data()[i] * f.data()[i];
    ll += l.data()[i] * l.data()[i];
    fl += f.data()[i] * l.data()[i];
  }
  const double nf = std::sqrt(ff);
  const double nl = std::sqrt(ll);
  if (nf < eps || nl < eps) return;  // undefined at the origin; contribute zero

  const double c = fl / (nf * nl);
  value += scale * c * c;
  const double inv = 1.0 / (nf * nl);
  for (std::size_t i = begin; i < end; ++i) {
    grad_f.data()[i] += scale * 2.0 * c * (l.data()[i] * inv - c * f.data()[i] / ff);
    grad_l.data()[i] += scale * 2.0 * c * (f.data()[i] * inv - c * l.data()[i] / ll);
  }
}

}  // namespace

CosPenalty cos_sq_penalty(const WeightVector& federated, const WeightVector& local,
                          const RegularizerConfig& cfg) {
  if (!federated.same_shape(local)) throw std::invalid_argument("cos_sq_penalty: shape mismatch");
  CosPenalty out;
  out.grad_federated = WeightVector(federated.spec());
  out.grad_local = WeightVector(local.spec());
  if (cfg.cos_per_layer) {
    const int blocks = federated.spec().block_count();
    const double scale = 1.0 / static_cast<double>(blocks);
    for (int b = 0; b < blocks; ++b) {
      const std::size_t begin = federated.block_offset(b);
      cos_sq_range(federated, local, begin, begin + federated.block_size(b), cfg.epsilon_norm,
                   scale, out.value, out.grad_federated, out.grad_local);
    }
  } else {
    cos_sq_range(federated, local, 0, federated.size(), cfg.epsilon_norm, 1.0, out.value,
                 out.grad_federated, out.grad_local);
  }
  return out;
}

ProxPenalty prox_penalty(const WeightVector& federated, const WeightVector& global) {
  if (!federated.same_shape(global)) throw std::invalid_argument("prox_penalty: shape mismatch");
  ProxPenalty out;
  out.grad_federated = WeightVector(federated.spec());
  for (std::size_t i = 0; i < federated.size(); ++i) {
    const double d = federated.data()[i] - global.data()[i];
    out.value += d * d;
    out.grad_federated.data()[i] = 2.0 * d;
  }
  return out;
}

EndpointGradients assemble_gradients(const WeightVector& task_grad, const LambdaAssignment& lambda,
                                     const WeightVector& federated, const WeightVector& local,
                                     const WeightVector& global, const RegularizerConfig& cfg) {
  if (!task_grad.same_shape(federated) || !federated.same_shape(local) ||
      !federated.same_shape(global)) {
    throw std::invalid_argument("assemble_gradients: shape mismatch");
  }
  EndpointGradients out;
  out.grad_federated = WeightVector(federated.spec());
  out.grad_local = WeightVector(federated.spec());

  const int blocks = federated.spec().block_count();
  for (int b = 0; b < blocks; ++b) {
    const double lam = lambda.for_block(b);
    const std::size_t begin = federated.block_offset(b);
    const std::size_t end = begin + federated.block_size(b);
    for (std::size_t i = begin; i < end; ++i) {
      out.grad_federated.data()[i] = (1.0 - lam) * task_grad.data()[i];
      out.grad_local.data()[i] = lam * task_grad.data()[i];
    }
  }

  if (cfg.mu != 0.0) {
    ProxPenalty prox = prox_penalty(federated, global);
    out.prox_value = prox.value;
    out.grad_federated.add_scaled(prox.grad_federated, cfg.mu);
  } else {
    // value still reported for the training-loss record
    double acc = 0.0;
    for (std::size_t i = 0; i < federated.size(); ++i) {
      const double d = federated.data()[i] - global.data()[i];
      acc += d * d;
    }
    out.prox_value = acc;
  }

  CosPenalty cos = cos_sq_penalty(federated, local, cfg);
  out.cos_value = cos.value;
  if (cfg.nu != 0.0) {
    out.grad_federated.add_scaled(cos.grad_federated, cfg.nu);
    out.grad_local.add_scaled(cos.grad_local, cfg.nu);
  }
  return out;
}

}  // namespace superfed
