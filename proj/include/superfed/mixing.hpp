#pragma once

#include <vector>

#include "superfed/network.hpp"
#include "superfed/rng.hpp"

namespace superfed {

// Model mixing uses one lambda for the whole network; layer mixing samples
// an independent lambda per layer block.
enum class MixScheme { model, layer };

struct LambdaAssignment {
  MixScheme scheme = MixScheme::model;
  std::vector<double> values;  // size 1 for model mixing, block_count for layer mixing

  double for_block(int block) const {
    return scheme == MixScheme::model ? values[0] : values[static_cast<std::size_t>(block)];
  }
  static LambdaAssignment zero(MixScheme scheme, int block_count);
  static LambdaAssignment constant(double lambda);  // scalar, applied to every block
};

struct RegularizerConfig {
  double mu = 0.0;             // proximal strength
  double nu = 0.0;             // orthogonality strength
  double epsilon_norm = 1e-12; // zero-norm guard for the cosine penalty
  bool cos_per_layer = false;  // average per-layer cos^2 instead of global
};

// Before the personalization start round every value is exactly 0 and no
// draws are consumed; afterwards each value is Unif[0,1) — one draw for
// model mixing, one per layer block for layer mixing. Called once per
// mini-batch.
LambdaAssignment sample_lambda(RngStream& rng, MixScheme scheme, int round,
                               int personalization_start, int block_count);

// Per block b: (1 - lambda_b) * federated_b + lambda_b * local_b.
// Exact at both endpoints: lambda 0 returns `federated` bitwise, lambda 1
// returns `local` bitwise.
WeightVector mix(const WeightVector& federated, const WeightVector& local,
                 const LambdaAssignment& lambda);

struct CosPenalty {
  double value = 0.0;
  WeightVector grad_federated;
  WeightVector grad_local;
};

// cos^2 between the two parameter vectors (flattened, biases included) with
// exact analytic gradients:
//   grad_f = 2 cos (l / (|f||l|) - cos f / |f|^2),   symmetrically for grad_l.
// If either norm falls below epsilon_norm the value and gradients are zero.
// With cos_per_layer set, the per-layer cos^2 values are averaged instead.
CosPenalty cos_sq_penalty(const WeightVector& federated, const WeightVector& local,
                          const RegularizerConfig& cfg);

struct ProxPenalty {
  double value = 0.0;
  WeightVector grad_federated;
};

// Squared L2 distance |federated - global|^2 with gradient 2(federated - global).
// The caller scales by mu; `global` is treated as a constant.
ProxPenalty prox_penalty(const WeightVector& federated, const WeightVector& global);

struct EndpointGradients {
  WeightVector grad_federated;
  WeightVector grad_local;
  double cos_value = 0.0;   // unscaled penalty values, for loss reporting
  double prox_value = 0.0;
};

// Joint endpoint gradients from one backward pass at the mixed point:
//   grad_f,b = (1 - lambda_b) task_b + mu * prox_b + nu * cos_f,b
//   grad_l,b =      lambda_b  task_b              + nu * cos_l,b
EndpointGradients assemble_gradients(const WeightVector& task_grad, const LambdaAssignment& lambda,
                                     const WeightVector& federated, const WeightVector& local,
                                     const WeightVector& global, const RegularizerConfig& cfg);

}  // namespace superfed
