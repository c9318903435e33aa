#pragma once

// Self-contained clustering primitives: k-means (k-means++ init, restarts),
// pairwise angles, a minimum-cluster-size HDBSCAN with excess-of-mass
// cluster extraction, and a top-2 PCA via orthogonalized power iteration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "lfshield/linalg.hpp"
#include "lfshield/rng.hpp"

namespace lfshield {

struct ClusterAssignment {
  std::vector<int> labels;  // -1 = outlier
  std::size_t cluster_count = 0;
  std::vector<std::vector<std::size_t>> members;  // per cluster, row indices

  static ClusterAssignment from_labels(std::vector<int> labels, std::size_t clusters) {
    ClusterAssignment a;
    a.labels = std::move(labels);
    a.cluster_count = clusters;
    a.members.assign(clusters, {});
    for (std::size_t i = 0; i < a.labels.size(); ++i)
      if (a.labels[i] >= 0) a.members[static_cast<std::size_t>(a.labels[i])].push_back(i);
    return a;
  }
};

// Angle between two vectors in degrees, in [0, 180]. A zero-norm operand
// yields 0 by convention.
inline double angle_degrees(std::span<const double> u, std::span<const double> v) {
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  const double c = std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

// ---- k-means ---------------------------------------------------------------

struct KMeansResult {
  ClusterAssignment assignment;
  Matrix centroids;
  double inertia = 0.0;
};

namespace detail {

inline double assign_to_nearest(const Matrix& rows, const Matrix& centroids,
                                std::vector<int>& labels) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double d = sq_distance(rows.row(i), centroids.row(c));
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    labels[i] = best_c;
    inertia += best;
  }
  return inertia;
}

inline Matrix kmeanspp_init(const Matrix& rows, std::size_t k, Rng& rng) {
  const std::size_t n = rows.rows();
  Matrix centroids(k, rows.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  std::size_t first = rng.uniform_index(n);
  std::copy(rows.row(first).begin(), rows.row(first).end(), centroids.row(0).begin());

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_distance(rows.row(i), centroids.row(c - 1)));
      total += d2[i];
    }
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.uniform_index(n);
    } else {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cum += d2[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    }
    std::copy(rows.row(pick).begin(), rows.row(pick).end(), centroids.row(c).begin());
  }
  return centroids;
}

}  // namespace detail

// Lloyd iterations with k-means++ seeding; 10 restarts, best inertia kept.
// An empty cluster is repaired by stealing the point farthest from its
// current centroid.
inline KMeansResult kmeans(const Matrix& rows, std::size_t k, std::uint64_t seed,
                           std::size_t restarts = 10, std::size_t max_iters = 100) {
  const std::size_t n = rows.rows();
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (n < k) throw std::invalid_argument("kmeans: fewer rows than clusters");

  Rng rng(derive_seed(seed, "kmeans"));
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (std::size_t restart = 0; restart < restarts; ++restart) {
    Matrix centroids = detail::kmeanspp_init(rows, k, rng);
    std::vector<int> labels(n, 0);
    double inertia = detail::assign_to_nearest(rows, centroids, labels);

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
      // Recompute centroids.
      std::vector<std::size_t> counts(k, 0);
      Matrix sums(k, rows.cols());
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        ++counts[c];
        auto dst = sums.row(c);
        auto src = rows.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        auto dst = centroids.row(c);
        auto src = sums.row(c);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] / counts[c];
      }
      // Repair empties by stealing the farthest point.
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > 0) continue;
        std::size_t worst = 0;
        double worst_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (counts[static_cast<std::size_t>(labels[i])] <= 1) continue;
          const double d = sq_distance(rows.row(i), centroids.row(static_cast<std::size_t>(labels[i])));
          if (d > worst_d) {
            worst_d = d;
            worst = i;
          }
        }
        --counts[static_cast<std::size_t>(labels[worst])];
        labels[worst] = static_cast<int>(c);
        ++counts[c];
        std::copy(rows.row(worst).begin(), rows.row(worst).end(), centroids.row(c).begin());
      }

      const double next_inertia = detail::assign_to_nearest(rows, centroids, labels);
      const bool converged =
          std::abs(inertia - next_inertia) <= 1e-6 * std::max(inertia, 1e-300);
      inertia = next_inertia;
      if (converged) break;
    }

    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.centroids = centroids;
      best.assignment = ClusterAssignment::from_labels(labels, k);
    }
  }
  return best;
}

// ---- HDBSCAN ---------------------------------------------------------------
//
// Pipeline: core distances -> mutual reachability -> MST (Prim) ->
// single-linkage dendrogram -> condensed tree (min cluster size) ->
// excess-of-mass selection, ties resolved toward the leaves. Points never
// absorbed into a selected cluster are labeled -1.

namespace detail {

struct MstEdge {
  std::size_t a, b;
  double w;
};

// Prim over the complete mutual-reachability graph; deterministic
// lowest-index tie-breaks.
inline std::vector<MstEdge> prim_mst(const Matrix& mr) {
  const std::size_t n = mr.rows();
  std::vector<bool> in_tree(n, false);
  std::vector<double> best_w(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> best_from(n, 0);
  std::vector<MstEdge> edges;
  edges.reserve(n - 1);

  in_tree[0] = true;
  for (std::size_t j = 1; j < n; ++j) {
    best_w[j] = mr(0, j);
    best_from[j] = 0;
  }
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t pick = n;
    double pick_w = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && best_w[j] < pick_w) {
        pick_w = best_w[j];
        pick = j;
      }
    }
    in_tree[pick] = true;
    edges.push_back({best_from[pick], pick, pick_w});
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && mr(pick, j) < best_w[j]) {
        best_w[j] = mr(pick, j);
        best_from[j] = pick;
      }
    }
  }
  return edges;
}

struct DendroNode {
  std::size_t left, right;  // child node ids (< n: leaf point)
  double dist;              // merge distance
  std::size_t size;
};

struct CondensedCluster {
  double birth_lambda = 0.0;
  double stability = 0.0;
  std::size_t parent = SIZE_MAX;
  std::vector<std::size_t> children;         // condensed child cluster ids
  std::vector<std::size_t> direct_points;    // points that fell out of this cluster
};

}  // namespace detail

inline Matrix mutual_reachability(const Matrix& rows, std::size_t min_samples) {
  const std::size_t n = rows.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = distance(rows.row(i), rows.row(j));

  // Core distance: the min_samples-th nearest neighbor, the point itself
  // counting as the first. Clamped for tiny inputs.
  std::vector<double> core(n);
  const std::size_t kth = std::min(min_samples, n) - 1;
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = d.row(i);
    std::copy(row.begin(), row.end(), sorted.begin());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(kth), sorted.end());
    core[i] = sorted[kth];
  }

  Matrix mr(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      mr(i, j) = mr(j, i) = std::max({core[i], core[j], d(i, j)});
  return mr;
}

inline ClusterAssignment hdbscan(const Matrix& rows, std::size_t min_cluster_size = 2,
                                 std::size_t min_samples = 2) {
  const std::size_t n = rows.rows();
  if (n < 2) throw std::invalid_argument("hdbscan: need at least 2 rows");
  if (min_cluster_size < 2) throw std::invalid_argument("hdbscan: min cluster size must be >= 2");

  const Matrix mr = mutual_reachability(rows, min_samples);
  auto edges = detail::prim_mst(mr);
  std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
    if (a.w != b.w) return a.w < b.w;
    return std::min(a.a, a.b) < std::min(b.a, b.b);
  });

  // Single-linkage dendrogram via union-find; node ids n..2n-2 are merges.
  std::vector<detail::DendroNode> nodes(n - 1);
  std::vector<std::size_t> find_root(2 * n - 1);
  for (std::size_t i = 0; i < find_root.size(); ++i) find_root[i] = i;
  auto find = [&](std::size_t x) {
    while (find_root[x] != x) {
      find_root[x] = find_root[find_root[x]];
      x = find_root[x];
    }
    return x;
  };
  std::vector<std::size_t> active(2 * n - 1);  // representative -> current node id
  for (std::size_t i = 0; i < 2 * n - 1; ++i) active[i] = i;
  std::vector<std::size_t> sizes(2 * n - 1, 1);
  std::size_t next_id = n;
  for (const auto& e : edges) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    const std::size_t na = active[ra], nb = active[rb];
    nodes[next_id - n] = {na, nb, e.w, sizes[na] + sizes[nb]};
    sizes[next_id] = sizes[na] + sizes[nb];
    find_root[ra] = rb;
    active[find(rb)] = next_id;
    ++next_id;
  }
  const std::size_t root_node = 2 * n - 2;

  auto node_size = [&](std::size_t id) { return id < n ? std::size_t{1} : nodes[id - n].size; };
  auto leaves_of = [&](std::size_t id) {
    std::vector<std::size_t> out;
    std::vector<std::size_t> stack{id};
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      if (x < n) {
        out.push_back(x);
      } else {
        stack.push_back(nodes[x - n].left);
        stack.push_back(nodes[x - n].right);
      }
    }
    return out;
  };
  auto lambda_of = [](double dist) {
    return dist > 0.0 ? 1.0 / dist : std::numeric_limits<double>::infinity();
  };

  // Condense: walk top-down; splits where both sides reach min_cluster_size
  // spawn child clusters, smaller sides fall out as points.
  std::vector<detail::CondensedCluster> clusters;
  clusters.push_back({});  // root cluster, birth lambda 0
  std::vector<std::pair<std::size_t, std::size_t>> work{{root_node, 0}};  // dendro node, cluster id
  while (!work.empty()) {
    auto [x, cid] = work.back();
    work.pop_back();
    for (;;) {
      if (x < n) {
        // Cluster reduced to one point; it exits at infinite density.
        clusters[cid].direct_points.push_back(x);
        clusters[cid].stability += lambda_of(0.0) - clusters[cid].birth_lambda;
        break;
      }
      const auto& nd = nodes[x - n];
      const double lam = lambda_of(nd.dist);
      const std::size_t sl = node_size(nd.left), sr = node_size(nd.right);
      if (sl >= min_cluster_size && sr >= min_cluster_size) {
        clusters[cid].stability += static_cast<double>(sl + sr) * (lam - clusters[cid].birth_lambda);
        for (std::size_t child_node : {nd.left, nd.right}) {
          clusters.push_back({});
          clusters.back().birth_lambda = lam;
          clusters.back().parent = cid;
          clusters[cid].children.push_back(clusters.size() - 1);
          work.emplace_back(child_node, clusters.size() - 1);
        }
        break;
      }
      if (sl < min_cluster_size && sr < min_cluster_size) {
        for (std::size_t p : leaves_of(x)) {
          clusters[cid].direct_points.push_back(p);
          clusters[cid].stability += lam - clusters[cid].birth_lambda;
        }
        break;
      }
      const std::size_t keep = sl >= min_cluster_size ? nd.left : nd.right;
      const std::size_t drop = sl >= min_cluster_size ? nd.right : nd.left;
      for (std::size_t p : leaves_of(drop)) {
        clusters[cid].direct_points.push_back(p);
        clusters[cid].stability += lam - clusters[cid].birth_lambda;
      }
      x = keep;
    }
  }

  // Excess-of-mass selection, children first; a parent wins only with
  // strictly greater stability, so ties keep the finer clusters.
  const std::size_t m = clusters.size();
  std::vector<double> subtree_value(m, 0.0);
  std::vector<bool> selected(m, false);
  for (std::size_t ci = m; ci-- > 0;) {
    const auto& c = clusters[ci];
    if (c.children.empty()) {
      subtree_value[ci] = c.stability;
      selected[ci] = true;
      continue;
    }
    double child_sum = 0.0;
    for (std::size_t ch : c.children) child_sum += subtree_value[ch];
    if (c.stability > child_sum) {
      selected[ci] = true;
      subtree_value[ci] = c.stability;
      // Unselect the whole subtree below.
      std::vector<std::size_t> stack(c.children.begin(), c.children.end());
      while (!stack.empty()) {
        const std::size_t ch = stack.back();
        stack.pop_back();
        selected[ch] = false;
        stack.insert(stack.end(), clusters[ch].children.begin(), clusters[ch].children.end());
      }
    } else {
      subtree_value[ci] = child_sum;
    }
  }

  // Point label: the nearest selected ancestor of the cluster it fell from.
  std::vector<int> point_owner(n, -1);
  for (std::size_t ci = 0; ci < m; ++ci) {
    std::size_t a = ci;
    int owner = -1;
    while (a != SIZE_MAX) {
      if (selected[a]) {
        owner = static_cast<int>(a);
        break;
      }
      a = clusters[a].parent;
    }
    for (std::size_t p : clusters[ci].direct_points) point_owner[p] = owner;
  }

  // Renumber selected clusters by smallest member index.
  std::vector<std::pair<std::size_t, int>> order;  // (min member, cluster id)
  std::vector<std::size_t> min_member(m, SIZE_MAX);
  for (std::size_t p = 0; p < n; ++p)
    if (point_owner[p] >= 0)
      min_member[static_cast<std::size_t>(point_owner[p])] =
          std::min(min_member[static_cast<std::size_t>(point_owner[p])], p);
  for (std::size_t ci = 0; ci < m; ++ci)
    if (selected[ci] && min_member[ci] != SIZE_MAX)
      order.emplace_back(min_member[ci], static_cast<int>(ci));
  std::sort(order.begin(), order.end());
  std::vector<int> relabel(m, -1);
  for (std::size_t i = 0; i < order.size(); ++i) relabel[static_cast<std::size_t>(order[i].second)] = static_cast<int>(i);

  std::vector<int> labels(n, -1);
  for (std::size_t p = 0; p < n; ++p)
    if (point_owner[p] >= 0) labels[p] = relabel[static_cast<std::size_t>(point_owner[p])];
  return ClusterAssignment::from_labels(std::move(labels), order.size());
}

// Total MST weight over the mutual-reachability graph; exposed for the
// exhaustive spanning-tree checks.
inline double hdbscan_mst_weight(const Matrix& rows, std::size_t min_samples = 2) {
  const Matrix mr = mutual_reachability(rows, min_samples);
  double total = 0.0;
  for (const auto& e : detail::prim_mst(mr)) total += e.w;
  return total;
}

// ---- PCA -------------------------------------------------------------------

struct PcaResult {
  Matrix coords;  // [n x 2]
  double explained_variance[2] = {0.0, 0.0};
  std::vector<double> pc1, pc2;  // unit-length components
};

namespace detail {

// Power iteration on the covariance; the component with the largest
// magnitude is made positive so signs are reproducible.
inline double power_iteration(const Matrix& cov, std::vector<double>& v) {
  const std::size_t d = cov.rows();
  Rng rng(0x9a7c1ed5u);
  v.resize(d);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  double norm = l2_norm(v);
  for (auto& x : v) x /= norm;

  std::vector<double> next(d);
  double eig = 0.0;
  for (std::size_t iter = 0; iter < 1000; ++iter) {
    for (std::size_t i = 0; i < d; ++i) next[i] = dot(cov.row(i), v);
    eig = dot(next, v);
    norm = l2_norm(next);
    if (norm < 1e-300) {
      v.assign(d, 0.0);
      return 0.0;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      next[i] /= norm;
      delta = std::max(delta, std::abs(next[i] - v[i]));
    }
    std::swap(v, next);
    if (delta < 1e-10) break;
  }
  std::size_t imax = 0;
  for (std::size_t i = 1; i < d; ++i)
    if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
  if (v[imax] < 0.0)
    for (auto& x : v) x = -x;
  return eig;
}

}  // namespace detail

inline PcaResult pca_top2(const Matrix& rows) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  if (n < 2) throw std::invalid_argument("pca_top2: need at least 2 rows");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = rows.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);

  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = rows.row(i);
    auto dst = centered.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] - mean[j];
  }

  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = centered.row(i);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(a, b) += r[a] * r[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) cov(b, a) = cov(a, b) /= static_cast<double>(n);

  PcaResult out;
  out.explained_variance[0] = detail::power_iteration(cov, out.pc1);

  // Deflate and repeat for the second component.
  Matrix cov2 = cov;
  if (out.explained_variance[0] > 0.0) {
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov2(a, b) -= out.explained_variance[0] * out.pc1[a] * out.pc1[b];
  }
  out.explained_variance[1] = detail::power_iteration(cov2, out.pc2);
  if (out.explained_variance[1] < 0.0) {
    out.explained_variance[1] = 0.0;
    out.pc2.assign(d, 0.0);
  }

  out.coords = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    out.coords(i, 0) = dot(centered.row(i), out.pc1);
    out.coords(i, 1) = dot(centered.row(i), out.pc2);
  }
  return out;
}

}  // namespace lfshield
