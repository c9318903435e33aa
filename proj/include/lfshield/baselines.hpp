#pragma once

// Comparison aggregators: coordinate-wise median, trimmed mean, repeated
// median (Siegel estimator over sorted-order abscissas), multi-Krum and
// FoolsGold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lfshield/data.hpp"
#include "lfshield/linalg.hpp"
#include "lfshield/micro_nn.hpp"

namespace lfshield {

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Flatten updates to a [m x d] matrix once; coordinate ops then work on columns.
inline Matrix flat_updates(const std::vector<ModelParams>& updates) {
  if (updates.empty()) throw std::invalid_argument("aggregation: no updates");
  Matrix flat(updates.size(), updates.front().size());
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const auto f = updates[i].flatten();
    std::copy(f.begin(), f.end(), flat.row(i).begin());
  }
  return flat;
}

}  // namespace detail

inline ModelParams coord_median(const std::vector<ModelParams>& updates) {
  const Matrix flat = detail::flat_updates(updates);
  const std::size_t m = flat.rows(), d = flat.cols();
  std::vector<double> out(d);
  std::vector<double> column(m);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < m; ++i) column[i] = flat(i, c);
    out[c] = detail::median_inplace(column);
  }
  return ModelParams::unflatten(updates.front().shape(), out);
}

// Drop floor(beta*m) values per side per coordinate, mean the rest.
inline ModelParams trimmed_mean(const std::vector<ModelParams>& updates, double beta) {
  if (beta < 0.0 || beta >= 0.5) throw ConfigError("trimmed_mean: beta must be in [0, 0.5)");
  const Matrix flat = detail::flat_updates(updates);
  const std::size_t m = flat.rows(), d = flat.cols();
  const std::size_t trim = static_cast<std::size_t>(beta * static_cast<double>(m));
  if (2 * trim >= m) throw ConfigError("trimmed_mean: beta trims away every update");

  std::vector<double> out(d);
  std::vector<double> column(m);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < m; ++i) column[i] = flat(i, c);
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (std::size_t i = trim; i < m - trim; ++i) sum += column[i];
    out[c] = sum / static_cast<double>(m - 2 * trim);
  }
  return ModelParams::unflatten(updates.front().shape(), out);
}

// Siegel's repeated median line fit per coordinate, over the sorted values
// at abscissas 1..m, evaluated at the midpoint (m+1)/2.
inline ModelParams repeated_median(const std::vector<ModelParams>& updates) {
  const Matrix flat = detail::flat_updates(updates);
  const std::size_t m = flat.rows(), d = flat.cols();
  if (m < 2) throw std::invalid_argument("repeated_median: need at least 2 updates");

  std::vector<double> out(d);
  std::vector<double> y(m), inner(m - 1), slopes(m), intercepts(m);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < m; ++i) y[i] = flat(i, c);
    std::sort(y.begin(), y.end());
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t w = 0;
      for (std::size_t k = 0; k < m; ++k) {
        if (k == i) continue;
        inner[w++] = (y[k] - y[i]) / (static_cast<double>(k) - static_cast<double>(i));
      }
      slopes[i] = detail::median_inplace(inner);
    }
    const double b = detail::median_inplace(slopes);
    for (std::size_t i = 0; i < m; ++i) intercepts[i] = y[i] - b * static_cast<double>(i + 1);
    const double a = detail::median_inplace(intercepts);
    out[c] = a + b * static_cast<double>(m + 1) / 2.0;
  }
  return ModelParams::unflatten(updates.front().shape(), out);
}

// Krum score: sum of squared distances to the m-f-2 nearest other updates;
// the m-f lowest-scoring updates are kept. Score ties keep the lower index.
inline std::vector<std::size_t> multi_krum_select(const std::vector<ModelParams>& updates,
                                                  std::size_t f) {
  const std::size_t m = updates.size();
  if (m < f + 3) throw ConfigError("multi_krum: need at least f+3 updates");
  const Matrix flat = detail::flat_updates(updates);

  Matrix d2(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) d2(i, j) = d2(j, i) = sq_distance(flat.row(i), flat.row(j));

  const std::size_t nearest = m - f - 2;
  std::vector<double> scores(m);
  std::vector<double> dists(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) dists[w++] = d2(i, j);
    std::sort(dists.begin(), dists.end());
    scores[i] = 0.0;
    for (std::size_t k = 0; k < nearest; ++k) scores[i] += dists[k];
  }

  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m - f));
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline ModelParams multi_krum(const std::vector<ModelParams>& updates, std::size_t f) {
  const auto selected = multi_krum_select(updates, f);
  ModelParams out = ModelParams::zeros(updates.front().shape());
  for (std::size_t i : selected) out.add_scaled(updates[i], 1.0);
  out.scale(1.0 / static_cast<double>(selected.size()));
  return out;
}

// FoolsGold learning-rate weights from per-peer accumulated output-layer
// gradient histories: pairwise cosine similarity, pardoning, 1 - maxsim,
// renormalization by the max, logit transform, clip to [0,1].
inline std::vector<double> foolsgold_weights(const Matrix& histories) {
  const std::size_t n = histories.rows();
  if (n < 2) throw std::invalid_argument("foolsgold: need at least 2 peers");

  std::vector<double> norms(n);
  bool any_nonzero = false;
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = l2_norm(histories.row(i));
    any_nonzero |= norms[i] > 0.0;
  }
  if (!any_nonzero) return std::vector<double>(n, 1.0);

  Matrix cs(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || norms[i] == 0.0 || norms[j] == 0.0) continue;
      cs(i, j) = dot(histories.row(i), histories.row(j)) / (norms[i] * norms[j]);
    }

  std::vector<double> maxsim(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) maxsim[i] = std::max(maxsim[i], cs(i, j));

  // Pardoning: peers judged against more-suspect peers get rescaled down.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (maxsim[j] > maxsim[i] && maxsim[j] > 0.0) cs(i, j) *= maxsim[i] / maxsim[j];
    }

  std::vector<double> wv(n, 0.0);
  double wmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) ms = std::max(ms, cs(i, j));
    wv[i] = std::clamp(1.0 - ms, 0.0, 1.0);
    wmax = std::max(wmax, wv[i]);
  }
  if (wmax <= 0.0) return std::vector<double>(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    double w = wv[i] / wmax;
    if (w >= 1.0) {
      w = 1.0;
    } else if (w <= 0.0) {
      w = 0.0;
    } else {
      w = std::log(w / (1.0 - w)) + 0.5;
      w = std::clamp(w, 0.0, 1.0);
    }
    wv[i] = w;
  }
  return wv;
}

}  // namespace lfshield
