#pragma once

// Gradient-clustering defense: output-layer gradient extraction, dynamic
// source/target identification from neuron magnitudes, bias-sign regime
// detection, and the two filters (k-means + inverse-density scoring for
// iid/mild, HDBSCAN + shared-top-neuron comparison for extreme).

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <vector>

#include "lfshield/clustering.hpp"
#include "lfshield/linalg.hpp"
#include "lfshield/micro_nn.hpp"

namespace lfshield {

// Per peer, one row per output neuron: (weight row .. bias), length hidden+1.
struct OutputLayerGradients {
  std::size_t classes = 0;
  std::size_t hidden = 0;
  std::vector<Matrix> peers;  // each [classes x (hidden+1)]

  std::size_t peer_count() const { return peers.size(); }
  std::size_t row_len() const { return hidden + 1; }
};

inline OutputLayerGradients extract_output_layer(const std::vector<ModelGrads>& grads) {
  OutputLayerGradients olg;
  if (grads.empty()) return olg;
  const ModelShape s = grads.front().shape();
  olg.classes = s.classes;
  olg.hidden = s.hidden;
  olg.peers.reserve(grads.size());
  for (const auto& g : grads) {
    Matrix m(s.classes, s.hidden + 1);
    for (std::size_t i = 0; i < s.classes; ++i) {
      auto dst = m.row(i);
      auto src = g.w2.row(i);
      std::copy(src.begin(), src.end(), dst.begin());
      dst[s.hidden] = g.b2[i];
    }
    olg.peers.push_back(std::move(m));
  }
  return olg;
}

struct NeuronMagnitudes {
  Matrix per_peer;                   // [peers x classes], ||grad row||
  std::vector<double> aggregated;    // sum over peers, per neuron
  std::vector<std::size_t> imax1;    // per peer
  std::vector<std::size_t> imax2;
  std::size_t imax1_s = 0;
  std::size_t imax2_s = 1;
};

namespace detail {

// Two largest, descending; ties broken by the lower index.
inline std::pair<std::size_t, std::size_t> top_two(std::span<const double> v) {
  std::size_t first = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[first]) first = i;
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i == first) continue;
    if (v[i] > v[second]) second = i;
  }
  return {first, second};
}

}  // namespace detail

inline NeuronMagnitudes neuron_magnitudes(const OutputLayerGradients& olg) {
  NeuronMagnitudes m;
  m.per_peer = Matrix(olg.peer_count(), olg.classes);
  m.aggregated.assign(olg.classes, 0.0);
  m.imax1.resize(olg.peer_count());
  m.imax2.resize(olg.peer_count());
  for (std::size_t k = 0; k < olg.peer_count(); ++k) {
    for (std::size_t i = 0; i < olg.classes; ++i) {
      const double norm = l2_norm(olg.peers[k].row(i));
      m.per_peer(k, i) = norm;
      m.aggregated[i] += norm;
    }
    auto [a, b] = detail::top_two(m.per_peer.row(k));
    m.imax1[k] = a;
    m.imax2[k] = b;
  }
  auto [a, b] = detail::top_two(m.aggregated);
  m.imax1_s = a;
  m.imax2_s = b;
  return m;
}

inline std::pair<std::size_t, std::size_t> identify_source_target(const NeuronMagnitudes& m) {
  return {m.imax1_s, m.imax2_s};
}

enum class DistributionMode { mild, extreme };

// A peer's bias gradient is negative exactly for the classes she holds, so
// the median count of negative bias entries separates single-class peers
// from the rest.
inline DistributionMode detect_distribution_mode(const OutputLayerGradients& olg,
                                                 std::size_t extreme_threshold = 1) {
  std::vector<double> held_counts;
  held_counts.reserve(olg.peer_count());
  for (const auto& peer : olg.peers) {
    std::size_t held = 0;
    for (std::size_t i = 0; i < olg.classes; ++i)
      if (peer(i, olg.hidden) < 0.0) ++held;
    held_counts.push_back(static_cast<double>(held));
  }
  std::sort(held_counts.begin(), held_counts.end());
  const std::size_t n = held_counts.size();
  const double median =
      n % 2 == 1 ? held_counts[n / 2] : 0.5 * (held_counts[n / 2 - 1] + held_counts[n / 2]);
  return median <= static_cast<double>(extreme_threshold) ? DistributionMode::extreme
                                                          : DistributionMode::mild;
}

// One row per peer: gradients of the two identified neurons, weights then
// bias per neuron, same neuron order for every peer.
inline Matrix build_features_mild(const OutputLayerGradients& olg, std::size_t imax1_s,
                                  std::size_t imax2_s) {
  const std::size_t block = olg.row_len();
  Matrix features(olg.peer_count(), 2 * block);
  for (std::size_t k = 0; k < olg.peer_count(); ++k) {
    auto dst = features.row(k);
    auto r1 = olg.peers[k].row(imax1_s);
    auto r2 = olg.peers[k].row(imax2_s);
    std::copy(r1.begin(), r1.end(), dst.begin());
    std::copy(r2.begin(), r2.end(), dst.begin() + static_cast<std::ptrdiff_t>(block));
  }
  return features;
}

// Mean over rows of each row's maximum pairwise angle; lower means denser.
// A singleton has no pairs and counts as maximally dense (0).
inline double cluster_inverse_density(const Matrix& rows,
                                      std::span<const std::size_t> member_idx) {
  if (member_idx.empty()) throw std::invalid_argument("cluster_inverse_density: empty cluster");
  if (member_idx.size() == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t i : member_idx) {
    double theta_max = 0.0;
    for (std::size_t j : member_idx) {
      if (i == j) continue;
      theta_max = std::max(theta_max, angle_degrees(rows.row(i), rows.row(j)));
    }
    sum += theta_max;
  }
  return sum / static_cast<double>(member_idx.size());
}

inline double cluster_inverse_density(const Matrix& rows) {
  std::vector<std::size_t> all(rows.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return cluster_inverse_density(rows, all);
}

struct MildFilterResult {
  std::vector<std::size_t> bad_peers;  // sorted
  double score[2] = {0.0, 0.0};
  double dns[2] = {0.0, 0.0};
  bool degenerate = false;  // all rows identical; nothing filtered
};

// Two k-means clusters; the one with the smaller size-weighted inverse
// density is flagged. Equal scores flag the cluster holding the smallest
// peer id.
inline MildFilterResult filter_mild(const Matrix& features, std::uint64_t seed) {
  const std::size_t n = features.rows();
  if (n < 2) throw std::invalid_argument("filter_mild: need at least 2 peers");

  MildFilterResult out;
  bool all_same = true;
  for (std::size_t i = 1; i < n && all_same; ++i)
    all_same = sq_distance(features.row(0), features.row(i)) == 0.0;
  if (all_same) {
    out.degenerate = true;
    return out;
  }

  const KMeansResult km = kmeans(features, 2, seed);
  const auto& cl1 = km.assignment.members[0];
  const auto& cl2 = km.assignment.members[1];
  out.dns[0] = cluster_inverse_density(features, cl1);
  out.dns[1] = cluster_inverse_density(features, cl2);
  const double total = static_cast<double>(cl1.size() + cl2.size());
  out.score[0] = static_cast<double>(cl1.size()) / total * out.dns[0];
  out.score[1] = static_cast<double>(cl2.size()) / total * out.dns[1];

  std::size_t bad;
  if (out.score[0] < out.score[1]) {
    bad = 0;
  } else if (out.score[1] < out.score[0]) {
    bad = 1;
  } else {
    const std::size_t min1 = *std::min_element(cl1.begin(), cl1.end());
    const std::size_t min2 = *std::min_element(cl2.begin(), cl2.end());
    bad = min1 < min2 ? 0 : 1;
  }
  out.bad_peers = km.assignment.members[bad];
  std::sort(out.bad_peers.begin(), out.bad_peers.end());
  return out;
}

struct ExtremeFilterResult {
  std::vector<std::size_t> bad_peers;  // sorted
  ClusterAssignment assignment;
  Matrix features;  // per-peer own-top-neuron features, for diagnostics
};

// Per-peer features from that peer's own two strongest neurons (descending
// magnitude). HDBSCAN groups the peers; cluster means over the full output
// layer identify each cluster's dominant neuron; among clusters sharing a
// dominant neuron the strictly smaller one is bad, and every -1 outlier is
// bad.
inline ExtremeFilterResult filter_extreme(const OutputLayerGradients& olg,
                                          const NeuronMagnitudes& mags) {
  const std::size_t n = olg.peer_count();
  if (n < 3) throw std::invalid_argument("filter_extreme: need at least 3 peers");

  const std::size_t block = olg.row_len();
  ExtremeFilterResult out;
  out.features = Matrix(n, 2 * block);
  for (std::size_t k = 0; k < n; ++k) {
    auto dst = out.features.row(k);
    auto r1 = olg.peers[k].row(mags.imax1[k]);
    auto r2 = olg.peers[k].row(mags.imax2[k]);
    std::copy(r1.begin(), r1.end(), dst.begin());
    std::copy(r2.begin(), r2.end(), dst.begin() + static_cast<std::ptrdiff_t>(block));
  }

  out.assignment = hdbscan(out.features, 2, 2);
  const std::size_t z = out.assignment.cluster_count;

  // Neuron-wise means of the members' full output-layer gradients.
  std::vector<std::size_t> cluster_imax1(z, 0);
  for (std::size_t j = 0; j < z; ++j) {
    Matrix mean(olg.classes, block);
    for (std::size_t member : out.assignment.members[j])
      for (std::size_t i = 0; i < olg.classes; ++i) {
        auto dst = mean.row(i);
        auto src = olg.peers[member].row(i);
        for (std::size_t c = 0; c < block; ++c) dst[c] += src[c];
      }
    const double inv = 1.0 / static_cast<double>(out.assignment.members[j].size());
    for (auto& v : mean.data()) v *= inv;

    std::vector<double> norms(olg.classes);
    for (std::size_t i = 0; i < olg.classes; ++i) norms[i] = l2_norm(mean.row(i));
    cluster_imax1[j] = detail::top_two(norms).first;
  }

  std::vector<bool> bad_cluster(z, false);
  for (std::size_t a = 0; a < z; ++a)
    for (std::size_t b = a + 1; b < z; ++b) {
      if (cluster_imax1[a] != cluster_imax1[b]) continue;
      const std::size_t sa = out.assignment.members[a].size();
      const std::size_t sb = out.assignment.members[b].size();
      if (sa > sb)
        bad_cluster[b] = true;
      else if (sb > sa)
        bad_cluster[a] = true;
    }

  for (std::size_t k = 0; k < n; ++k) {
    const int label = out.assignment.labels[k];
    if (label < 0 || bad_cluster[static_cast<std::size_t>(label)]) out.bad_peers.push_back(k);
  }
  return out;
}

}  // namespace lfshield
