#pragma once

// Datasets, the three partition regimes (iid / Dirichlet mild / single-class
// extreme), the label-flipping injector and attacker selection.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lfshield/linalg.hpp"
#include "lfshield/rng.hpp"

namespace lfshield {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Matrix features;          // [n x input_dim]
  std::vector<int> labels;  // values in [0, classes)
  std::size_t classes = 0;

  std::size_t n() const { return features.rows(); }
  std::size_t input_dim() const { return features.cols(); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.classes = classes;
    out.features = Matrix(idx.size(), input_dim());
    out.labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto src = features.row(idx[r]);
      auto dst = out.features.row(r);
      std::copy(src.begin(), src.end(), dst.begin());
      out.labels[r] = labels[idx[r]];
    }
    return out;
  }
};

enum class Regime { iid, mild, extreme };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::iid: return "iid";
    case Regime::mild: return "mild";
    case Regime::extreme: return "extreme";
  }
  return "?";
}

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // per peer, example indices
  Regime regime = Regime::iid;
  std::vector<std::vector<std::size_t>> class_counts;  // [peer][class]

  std::size_t peers() const { return assignments.size(); }
};

struct AttackSpec {
  int source_class = 7;
  int target_class = 1;
  std::vector<std::size_t> attacker_ids;  // sorted

  bool is_attacker(std::size_t peer) const {
    return std::binary_search(attacker_ids.begin(), attacker_ids.end(), peer);
  }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> count_classes(
    const Dataset& ds, const std::vector<std::vector<std::size_t>>& assignments) {
  std::vector<std::vector<std::size_t>> counts(assignments.size(),
                                               std::vector<std::size_t>(ds.classes, 0));
  for (std::size_t p = 0; p < assignments.size(); ++p)
    for (std::size_t idx : assignments[p]) ++counts[p][static_cast<std::size_t>(ds.labels[idx])];
  return counts;
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.n(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return by_class;
}

}  // namespace detail

// Shuffled indices dealt round-robin; sizes differ by at most one.
inline PartitionPlan partition_iid(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("partition_iid: peer count must be positive");
  if (ds.n() < k) throw ConfigError("partition_iid: fewer examples than peers");
  std::vector<std::size_t> idx(ds.n());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "partition-iid"));
  rng.shuffle(idx);

  PartitionPlan plan;
  plan.regime = Regime::iid;
  plan.assignments.resize(k);
  for (std::size_t i = 0; i < idx.size(); ++i) plan.assignments[i % k].push_back(idx[i]);
  plan.class_counts = detail::count_classes(ds, plan.assignments);
  return plan;
}

// Per class, a Dirichlet(alpha) proportion vector over peers decides the
// split of that class's examples. If the full assignment leaves some peer
// empty, the largest class's vector is resampled and its split redone.
inline PartitionPlan partition_dirichlet(const Dataset& ds, std::size_t k, double alpha,
                                         std::uint64_t seed) {
  if (k == 0) throw ConfigError("partition_dirichlet: peer count must be positive");
  if (alpha <= 0.0) throw ConfigError("partition_dirichlet: alpha must be positive");
  if (ds.n() < k) throw ConfigError("partition_dirichlet: fewer examples than peers");

  Rng rng(derive_seed(seed, "partition-dirichlet"));
  auto by_class = detail::indices_by_class(ds);
  for (auto& v : by_class) rng.shuffle(v);

  auto split_class = [&](const std::vector<std::size_t>& members,
                         std::vector<std::vector<std::size_t>>& assignments) {
    const std::vector<double> prop = rng.dirichlet(alpha, k);
    // Cumulative-proportion cut points over the shuffled members.
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t p = 0; p < k; ++p) {
      cum += prop[p];
      const std::size_t end =
          (p + 1 == k) ? members.size()
                       : std::min(members.size(),
                                  static_cast<std::size_t>(cum * static_cast<double>(members.size()) + 0.5));
      for (std::size_t i = start; i < end; ++i) assignments[p].push_back(members[i]);
      start = std::max(start, end);
    }
  };

  PartitionPlan plan;
  plan.regime = Regime::mild;
  plan.assignments.assign(k, {});
  for (std::size_t c = 0; c < ds.classes; ++c)
    if (!by_class[c].empty()) split_class(by_class[c], plan.assignments);

  // Keep every peer non-empty.
  const std::size_t largest =
      std::max_element(by_class.begin(), by_class.end(),
                       [](const auto& a, const auto& b) { return a.size() < b.size(); }) -
      by_class.begin();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const bool any_empty = std::any_of(plan.assignments.begin(), plan.assignments.end(),
                                       [](const auto& a) { return a.empty(); });
    if (!any_empty) break;
    for (auto& a : plan.assignments) {
      std::erase_if(a, [&](std::size_t i) {
        return static_cast<std::size_t>(ds.labels[i]) == largest;
      });
    }
    split_class(by_class[largest], plan.assignments);
  }
  if (std::any_of(plan.assignments.begin(), plan.assignments.end(),
                  [](const auto& a) { return a.empty(); }))
    throw ConfigError("partition_dirichlet: could not give every peer an example");

  plan.class_counts = detail::count_classes(ds, plan.assignments);
  return plan;
}

// Single class per peer; k must be divisible by the class count.
inline PartitionPlan partition_extreme(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < ds.classes || k % ds.classes != 0)
    throw ConfigError("partition_extreme: peer count must be a positive multiple of the class count");
  const std::size_t per_class = k / ds.classes;

  Rng rng(derive_seed(seed, "partition-extreme"));
  auto by_class = detail::indices_by_class(ds);

  PartitionPlan plan;
  plan.regime = Regime::extreme;
  plan.assignments.assign(k, {});
  for (std::size_t c = 0; c < ds.classes; ++c) {
    if (by_class[c].size() < per_class)
      throw ConfigError("partition_extreme: class " + std::to_string(c) +
                        " has fewer examples than peers assigned to it");
    rng.shuffle(by_class[c]);
    for (std::size_t i = 0; i < by_class[c].size(); ++i) {
      const std::size_t peer = c * per_class + i % per_class;
      plan.assignments[peer].push_back(by_class[c][i]);
    }
  }
  plan.class_counts = detail::count_classes(ds, plan.assignments);
  return plan;
}

// Relabel source-class examples as the target class; features untouched.
inline Dataset flip_labels(const Dataset& peer_ds, const AttackSpec& spec) {
  if (spec.source_class == spec.target_class)
    throw ConfigError("flip_labels: source and target class must differ");
  Dataset out = peer_ds;
  for (auto& label : out.labels)
    if (label == spec.source_class) label = spec.target_class;
  return out;
}

struct AttackerSelection {
  std::vector<std::size_t> ids;  // sorted
  std::optional<std::string> warning;
};

// Attackers are drawn uniformly from peers holding at least one source
// example. Threat-model bound violations produce a warning, not an error.
inline AttackerSelection select_attackers(const PartitionPlan& plan, double ratio,
                                          int source_class, int target_class,
                                          std::uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("select_attackers: ratio must be in [0,1]");

  std::vector<std::size_t> eligible;
  for (std::size_t p = 0; p < plan.peers(); ++p)
    if (plan.class_counts[p][static_cast<std::size_t>(source_class)] > 0) eligible.push_back(p);

  AttackerSelection sel;
  const std::size_t want =
      static_cast<std::size_t>(std::lround(ratio * static_cast<double>(eligible.size())));
  if (want == 0) return sel;
  if (eligible.empty())
    throw ConfigError("select_attackers: no peer holds a source-class example");

  Rng rng(derive_seed(seed, "attackers"));
  auto picks = rng.sample_without_replacement(eligible.size(), want);
  for (std::size_t i : picks) sel.ids.push_back(eligible[i]);
  std::sort(sel.ids.begin(), sel.ids.end());

  const std::size_t k_src = eligible.size();
  std::size_t k_target = 0;
  for (std::size_t p = 0; p < plan.peers(); ++p)
    if (plan.class_counts[p][static_cast<std::size_t>(target_class)] > 0) ++k_target;

  if (plan.regime == Regime::extreme) {
    if (sel.ids.size() >= k_target)
      sel.warning = "threat-model bound violated: attackers (" + std::to_string(sel.ids.size()) +
                    ") >= target-class peers (" + std::to_string(k_target) + ")";
  } else if (2 * sel.ids.size() >= k_src) {
    sel.warning = "threat-model bound reached: attackers (" + std::to_string(sel.ids.size()) +
                  ") >= half the source-holding peers (" + std::to_string(k_src) + ")";
  }
  return sel;
}

// ---- IDX ingestion ---------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // 2049

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace detail

// Big-endian IDX image file, pixels scaled to [0,1]; one flattened row per image.
inline Matrix load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::size_t offset = 0;
  const std::uint32_t magic = detail::read_be32(in, path, offset);
  if (magic != kIdxImagesMagic)
    throw FormatError(path + ": bad image magic " + std::to_string(magic) + " at byte offset 0");
  const std::uint32_t n = detail::read_be32(in, path, offset);
  const std::uint32_t rows = detail::read_be32(in, path, offset);
  const std::uint32_t cols = detail::read_be32(in, path, offset);

  const std::size_t dim = std::size_t(rows) * cols;
  Matrix out(n, dim);
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    if (!in)
      throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
    offset += dim;
    auto row = out.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = buf[j] / 255.0;
  }
  return out;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::size_t offset = 0;
  const std::uint32_t magic = detail::read_be32(in, path, offset);
  if (magic != kIdxLabelsMagic)
    throw FormatError(path + ": bad label magic " + std::to_string(magic) + " at byte offset 0");
  const std::uint32_t n = detail::read_be32(in, path, offset);
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!in) throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
  return std::vector<int>(buf.begin(), buf.end());
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.features = load_idx_images(images_path);
  ds.labels = load_idx_labels(labels_path);
  if (ds.labels.size() != ds.n())
    throw FormatError(labels_path + ": label count " + std::to_string(ds.labels.size()) +
                      " does not match image count " + std::to_string(ds.n()));
  int mx = 0;
  for (int l : ds.labels) {
    if (l < 0) throw FormatError(labels_path + ": negative label");
    mx = std::max(mx, l);
  }
  ds.classes = static_cast<std::size_t>(mx) + 1;
  return ds;
}

// Per-class Gaussian blobs at distinct seeded means.
inline Dataset synth_gaussian(std::size_t classes, std::size_t n, std::size_t dim, double spread,
                              std::uint64_t seed) {
  if (classes == 0 || n == 0 || dim == 0 || spread <= 0.0)
    throw ConfigError("synth_gaussian: classes, n, dim and spread must be positive");
  Rng rng(derive_seed(seed, "synth"));

  Matrix means(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    auto row = means.row(c);
    for (auto& v : row) v = rng.gaussian();
    const double norm = l2_norm(row);
    for (auto& v : row) v *= 2.5 / norm;
  }

  Dataset ds;
  ds.classes = classes;
  ds.features = Matrix(n, dim);
  ds.labels.resize(n);
  const std::size_t base = n / classes;
  const std::size_t extra = n % classes;
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t count = base + (c < extra ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i, ++r) {
      auto row = ds.features.row(r);
      auto mean = means.row(c);
      for (std::size_t j = 0; j < dim; ++j) row[j] = mean[j] + spread * rng.gaussian();
      ds.labels[r] = static_cast<int>(c);
    }
  }
  return ds;
}

}  // namespace lfshield
