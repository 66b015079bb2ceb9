#include "superfed/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace superfed {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(path + ": truncated while reading " + what);
  }
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

std::vector<unsigned char> read_payload(std::ifstream& in, const std::string& path,
                                        std::size_t expected) {
  std::vector<unsigned char> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != expected) {
    throw std::runtime_error(path + ": truncated payload, expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(got));
  }
  return bytes;
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + images_path);
  const std::uint32_t img_magic = read_be_u32(img, images_path, "magic");
  if (img_magic != kImagesMagic) {
    throw std::runtime_error(images_path + ": bad magic " + std::to_string(img_magic) +
                             ", expected " + std::to_string(kImagesMagic));
  }
  const std::uint32_t img_count = read_be_u32(img, images_path, "image count");
  const std::uint32_t rows = read_be_u32(img, images_path, "row count");
  const std::uint32_t cols = read_be_u32(img, images_path, "column count");
  const std::size_t dims = static_cast<std::size_t>(rows) * cols;
  const auto pixels = read_payload(img, images_path, static_cast<std::size_t>(img_count) * dims);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be_u32(lab, labels_path, "magic");
  if (lab_magic != kLabelsMagic) {
    throw std::runtime_error(labels_path + ": bad magic " + std::to_string(lab_magic) +
                             ", expected " + std::to_string(kLabelsMagic));
  }
  const std::uint32_t lab_count = read_be_u32(lab, labels_path, "label count");
  if (lab_count != img_count) {
    throw std::runtime_error("image/label count mismatch: " + std::to_string(img_count) +
                             " images vs " + std::to_string(lab_count) + " labels");
  }
  const auto label_bytes = read_payload(lab, labels_path, lab_count);

  LabeledDataset ds;
  ds.features = Matrix(img_count, dims);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    ds.features.data()[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  ds.labels.resize(lab_count);
  int max_label = 0;
  for (std::size_t i = 0; i < label_bytes.size(); ++i) {
    ds.labels[i] = static_cast<int>(label_bytes[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

LabeledDataset gen_blobs(int class_count, int dims, int per_class, double spread, RngStream& rng) {
  if (class_count < 1 || dims < 1 || per_class < 1) {
    throw std::invalid_argument("gen_blobs: counts must be >= 1");
  }
  Matrix centers(static_cast<std::size_t>(class_count), static_cast<std::size_t>(dims));
  for (std::size_t i = 0; i < centers.size(); ++i) centers.data()[i] = rng.uniform(-1.0, 1.0);

  LabeledDataset ds;
  const std::size_t n = static_cast<std::size_t>(class_count) * static_cast<std::size_t>(per_class);
  ds.features = Matrix(n, static_cast<std::size_t>(dims));
  ds.labels.resize(n);
  ds.class_count = class_count;
  std::size_t row = 0;
  for (int c = 0; c < class_count; ++c) {
    for (int j = 0; j < per_class; ++j, ++row) {
      double* x = ds.features.row(row);
      const double* mu = centers.row(static_cast<std::size_t>(c));
      for (int d = 0; d < dims; ++d) x[d] = mu[d] + spread * rng.normal();
      ds.labels[row] = c;
    }
  }
  return ds;
}

PartitionResult partition_pathological(const LabeledDataset& ds, const PartitionSpec& spec,
                                       RngStream& rng) {
  if (spec.scheme != PartitionScheme::pathological) {
    throw std::invalid_argument("partition_pathological: wrong scheme");
  }
  if (spec.client_count < 1) throw std::invalid_argument("partition: client_count must be >= 1");
  const std::size_t n = ds.size();
  const std::size_t shard_count = static_cast<std::size_t>(spec.client_count) *
                                  static_cast<std::size_t>(spec.shards_per_client);
  if (shard_count > n) {
    throw std::invalid_argument("partition_pathological: " + std::to_string(shard_count) +
                                " shards exceed " + std::to_string(n) + " examples");
  }
  // stable sort by label keeps a deterministic order for equal labels
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });

  const std::size_t shard_size = n / shard_count;
  std::vector<std::size_t> shard_ids(shard_count);
  std::iota(shard_ids.begin(), shard_ids.end(), std::size_t{0});
  rng.shuffle(shard_ids);

  PartitionResult out;
  out.client_indices.resize(static_cast<std::size_t>(spec.client_count));
  for (int c = 0; c < spec.client_count; ++c) {
    auto& bucket = out.client_indices[static_cast<std::size_t>(c)];
    bucket.reserve(shard_size * static_cast<std::size_t>(spec.shards_per_client));
    for (int s = 0; s < spec.shards_per_client; ++s) {
      const std::size_t shard =
          shard_ids[static_cast<std::size_t>(c) * static_cast<std::size_t>(spec.shards_per_client) +
                    static_cast<std::size_t>(s)];
      const std::size_t begin = shard * shard_size;
      for (std::size_t i = begin; i < begin + shard_size; ++i) bucket.push_back(order[i]);
    }
  }
  for (std::size_t i = shard_count * shard_size; i < n; ++i) out.dropped.push_back(order[i]);
  return out;
}

PartitionResult partition_dirichlet(const LabeledDataset& ds, const PartitionSpec& spec,
                                    RngStream& rng) {
  if (spec.scheme != PartitionScheme::dirichlet) {
    throw std::invalid_argument("partition_dirichlet: wrong scheme");
  }
  if (spec.client_count < 1) throw std::invalid_argument("partition: client_count must be >= 1");
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("partition_dirichlet: alpha must be > 0");
  const std::size_t n = ds.size();
  const std::size_t classes = static_cast<std::size_t>(ds.class_count);
  const std::size_t quota = n / static_cast<std::size_t>(spec.client_count);
  if (quota == 0) throw std::invalid_argument("partition_dirichlet: more clients than examples");

  std::vector<std::vector<std::size_t>> pools(classes);
  for (std::size_t i = 0; i < n; ++i) {
    pools[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  for (auto& pool : pools) rng.shuffle(pool);

  PartitionResult out;
  out.client_indices.resize(static_cast<std::size_t>(spec.client_count));
  for (int c = 0; c < spec.client_count; ++c) {
    std::vector<double> p = rng.dirichlet(spec.alpha, classes);
    auto& bucket = out.client_indices[static_cast<std::size_t>(c)];
    bucket.reserve(quota);
    while (bucket.size() < quota) {
      // zero out exhausted classes and renormalize
      double total = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        if (pools[k].empty()) p[k] = 0.0;
        total += p[k];
      }
      if (total <= 0.0) {
        // proportions vanished but pools remain; spread uniformly over what is left
        for (std::size_t k = 0; k < classes; ++k) p[k] = pools[k].empty() ? 0.0 : 1.0;
        total = 0.0;
        for (double v : p) total += v;
        if (total <= 0.0) break;  // every pool empty
      }
      const double u = rng.uniform01() * total;
      double acc = 0.0;
      std::size_t pick = classes - 1;
      for (std::size_t k = 0; k < classes; ++k) {
        acc += p[k];
        if (u < acc) {
          pick = k;
          break;
        }
      }
      if (pools[pick].empty()) continue;  // numerical edge of the cdf walk
      bucket.push_back(pools[pick].back());
      pools[pick].pop_back();
    }
  }
  for (const auto& pool : pools) {
    for (std::size_t idx : pool) out.dropped.push_back(idx);
  }
  std::sort(out.dropped.begin(), out.dropped.end());
  return out;
}

IndexSplit split_train_test(const std::vector<std::size_t>& indices, double fraction,
                            RngStream& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_train_test: fraction must be in (0, 1)");
  }
  if (indices.size() < 2) {
    throw std::invalid_argument("split_train_test: need at least 2 examples");
  }
  std::vector<std::size_t> shuffled = indices;
  rng.shuffle(shuffled);
  const std::size_t n = shuffled.size();
  const std::size_t n_test =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  IndexSplit out;
  out.train.assign(shuffled.begin(), shuffled.end() - static_cast<std::ptrdiff_t>(n_test));
  out.test.assign(shuffled.end() - static_cast<std::ptrdiff_t>(n_test), shuffled.end());
  return out;
}

namespace {

LabeledDataset take_rows(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
  LabeledDataset out;
  out.class_count = ds.class_count;
  out.features = Matrix(rows.size(), ds.features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = ds.features.row(rows[i]);
    std::copy(src, src + ds.features.cols(), out.features.row(i));
    out.labels[i] = ds.labels[rows[i]];
  }
  return out;
}

}  // namespace

ClientSplit materialize_split(const LabeledDataset& ds, int client_id, const IndexSplit& split) {
  ClientSplit out;
  out.client_id = client_id;
  out.train = take_rows(ds, split.train);
  out.test = take_rows(ds, split.test);
  return out;
}

TransitionMatrix build_transition(NoiseKind kind, double epsilon, int class_count) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("build_transition: epsilon must be in [0, 1)");
  }
  if (class_count < 2) throw std::invalid_argument("build_transition: need at least 2 classes");
  TransitionMatrix t;
  t.kind = kind;
  t.epsilon = epsilon;
  t.class_count = class_count;
  const std::size_t n = static_cast<std::size_t>(class_count);
  t.entries.assign(n * n, 0.0);
  switch (kind) {
    case NoiseKind::none:
      for (std::size_t i = 0; i < n; ++i) t.entries[i * n + i] = 1.0;
      break;
    case NoiseKind::pair:
      for (std::size_t i = 0; i < n; ++i) {
        t.entries[i * n + i] = 1.0 - epsilon;
        t.entries[i * n + (i + 1) % n] = epsilon;
      }
      break;
    case NoiseKind::symmetric:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          t.entries[i * n + j] = (i == j) ? 1.0 - epsilon : epsilon / static_cast<double>(n - 1);
        }
      }
      break;
  }
  return t;
}

void apply_noise(std::vector<int>& labels, const TransitionMatrix& t, RngStream& rng) {
  const int n = t.class_count;
  for (int& label : labels) {
    if (label < 0 || label >= n) {
      throw std::invalid_argument("apply_noise: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(n) + " classes");
    }
    const double u = rng.uniform01();
    double acc = 0.0;
    int picked = label;
    for (int j = 0; j < n; ++j) {
      const double p = t.at(label, j);
      if (p <= 0.0) continue;
      acc += p;
      picked = j;  // if rounding keeps u >= acc, the last nonzero column wins
      if (u < acc) break;
    }
    label = picked;
  }
}

}  // namespace superfed
