#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "superfed/matrix.hpp"
#include "superfed/rng.hpp"

namespace superfed {

struct LabeledDataset {
  Matrix features;          // n_examples x dims
  std::vector<int> labels;  // each in [0, class_count)
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return features.cols(); }
};

// IDX pair: big-endian magic 0x00000803 (images) / 0x00000801 (labels),
// dimension sizes, then raw bytes. Pixels are scaled to [0, 1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Isotropic Gaussian blob per class around a seeded random center in
// [-1, 1]^dims. Deterministic given the stream.
LabeledDataset gen_blobs(int class_count, int dims, int per_class, double spread, RngStream& rng);

enum class PartitionScheme { pathological, dirichlet };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::pathological;
  int client_count = 1;
  int shards_per_client = 2;  // pathological
  double alpha = 1.0;         // dirichlet concentration
};

struct PartitionResult {
  std::vector<std::vector<std::size_t>> client_indices;
  std::vector<std::size_t> dropped;  // remainder indices never assigned
};

// Sort by label, cut into client_count * shards_per_client equal contiguous
// shards, deal shards_per_client of them to each client by seeded shuffle.
// Remainder indices that do not fill a full shard are dropped and reported.
PartitionResult partition_pathological(const LabeledDataset& ds, const PartitionSpec& spec,
                                       RngStream& rng);

// Each client draws class proportions from Dirichlet(alpha * 1) and fills a
// quota of floor(n / client_count) examples by sampling classes and popping
// from per-class pools; exhausted classes are renormalized away.
PartitionResult partition_dirichlet(const LabeledDataset& ds, const PartitionSpec& spec,
                                    RngStream& rng);

struct IndexSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle; the last ceil(fraction * n) indices become the test side.
IndexSplit split_train_test(const std::vector<std::size_t>& indices, double fraction,
                            RngStream& rng);

struct ClientSplit {
  int client_id = -1;
  LabeledDataset train;
  LabeledDataset test;
};

ClientSplit materialize_split(const LabeledDataset& ds, int client_id, const IndexSplit& split);

enum class NoiseKind { none, pair, symmetric };

// Row-stochastic label corruption matrix. Pair: diagonal 1-eps and eps on
// the next class (mod n). Symmetric: diagonal 1-eps, eps/(n-1) elsewhere.
struct TransitionMatrix {
  NoiseKind kind = NoiseKind::none;
  double epsilon = 0.0;
  int class_count = 0;
  std::vector<double> entries;  // class_count x class_count, row-major

  double at(int from, int to) const {
    return entries[static_cast<std::size_t>(from) * static_cast<std::size_t>(class_count) +
                   static_cast<std::size_t>(to)];
  }
};

TransitionMatrix build_transition(NoiseKind kind, double epsilon, int class_count);

// Resample each label independently from its row of T. Meant for training
// splits only; test labels stay clean.
void apply_noise(std::vector<int>& labels, const TransitionMatrix& t, RngStream& rng);

}  // namespace superfed
