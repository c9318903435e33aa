#pragma once

// Planted fixtures shared by the unit and acceptance suites. Both are
// built by construction, so the ground truth is known exactly.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lfshield/defense.hpp"
#include "lfshield/linalg.hpp"
#include "lfshield/rng.hpp"

namespace fixtures {

// A unit vector at exactly `angle_deg` from `axis`, with a random
// perpendicular direction.
inline std::vector<double> within_cone(const std::vector<double>& axis, double angle_deg,
                                       lfshield::Rng& rng) {
  const std::size_t d = axis.size();
  std::vector<double> perp(d);
  for (;;) {
    for (auto& v : perp) v = rng.gaussian();
    double along = lfshield::dot(perp, axis);
    for (std::size_t i = 0; i < d; ++i) perp[i] -= along * axis[i];
    const double norm = lfshield::l2_norm(perp);
    if (norm > 1e-9) {
      for (auto& v : perp) v /= norm;
      break;
    }
  }
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i)
    out[i] = std::cos(rad) * axis[i] + std::sin(rad) * perp[i];
  return out;
}

struct MildFixture {
  lfshield::Matrix rows;
  std::vector<std::size_t> attackers;  // sorted row indices
};

// Honest rows jittered up to honest_jitter degrees around a random unit
// direction u; attacker rows jittered up to attacker_jitter around -u.
// Attacker positions are interleaved at random.
inline MildFixture mild_fixture(std::size_t peers, std::size_t attacker_count, double honest_jitter,
                                double attacker_jitter, std::size_t dim, std::uint64_t seed) {
  lfshield::Rng rng(lfshield::derive_seed(seed, "mild-fixture"));

  std::vector<double> u(dim);
  for (auto& v : u) v = rng.gaussian();
  const double norm = lfshield::l2_norm(u);
  for (auto& v : u) v /= norm;
  std::vector<double> neg_u(dim);
  for (std::size_t i = 0; i < dim; ++i) neg_u[i] = -u[i];

  MildFixture fx;
  auto picks = rng.sample_without_replacement(peers, attacker_count);
  fx.attackers.assign(picks.begin(), picks.end());
  std::sort(fx.attackers.begin(), fx.attackers.end());

  fx.rows = lfshield::Matrix(peers, dim);
  for (std::size_t p = 0; p < peers; ++p) {
    const bool bad = std::binary_search(fx.attackers.begin(), fx.attackers.end(), p);
    const double jitter = rng.uniform(0.0, bad ? attacker_jitter : honest_jitter);
    const auto dir = within_cone(bad ? neg_u : u, jitter, rng);
    const double radius = rng.uniform(0.9, 1.1);
    auto row = fx.rows.row(p);
    for (std::size_t i = 0; i < dim; ++i) row[i] = radius * dir[i];
  }
  return fx;
}

struct ExtremeFixture {
  lfshield::OutputLayerGradients olg;
  std::vector<std::size_t> attackers;  // sorted peer indices
  std::size_t singleton = SIZE_MAX;    // injected outlier peer, if any
  int source_class = 7;
  int target_class = 1;
};

// Single-class-per-peer output-layer gradients shaped like the extreme
// benchmark: `per_class` honest peers per class, except that
// `attacker_count` peers of the source class are attackers whose dominant
// gradient sits on the target neuron. Optionally one far-away singleton.
inline ExtremeFixture extreme_fixture(std::size_t classes, std::size_t per_class,
                                      std::size_t attacker_count, bool inject_singleton,
                                      std::uint64_t seed, std::size_t hidden = 16) {
  lfshield::Rng rng(lfshield::derive_seed(seed, "extreme-fixture"));
  ExtremeFixture fx;
  fx.olg.classes = classes;
  fx.olg.hidden = hidden;
  const std::size_t block = hidden + 1;

  // Mutually orthonormal strong directions: one per class plus two for the
  // attackers, so every cross-group distance is controlled by construction.
  const std::size_t dirs_needed = classes + 2;
  if (dirs_needed > block)
    throw std::invalid_argument("extreme_fixture: hidden too small for orthonormal directions");
  lfshield::Matrix dirs(dirs_needed, block);
  for (std::size_t d = 0; d < dirs_needed; ++d) {
    auto row = dirs.row(d);
    for (;;) {
      for (auto& v : row) v = rng.gaussian();
      for (std::size_t prev = 0; prev < d; ++prev) {
        const double along = lfshield::dot(row, dirs.row(prev));
        auto p = dirs.row(prev);
        for (std::size_t i = 0; i < block; ++i) row[i] -= along * p[i];
      }
      const double norm = lfshield::l2_norm(row);
      if (norm > 1e-6) {
        for (auto& v : row) v /= norm;
        break;
      }
    }
  }
  const lfshield::Matrix& class_dir = dirs;
  std::vector<double> att_dir1(dirs.row(classes).begin(), dirs.row(classes).end());
  std::vector<double> att_dir2(dirs.row(classes + 1).begin(), dirs.row(classes + 1).end());

  const auto src = static_cast<std::size_t>(fx.source_class);
  const auto tgt = static_cast<std::size_t>(fx.target_class);

  auto honest_peer = [&](std::size_t held) {
    lfshield::Matrix m(classes, block);
    for (std::size_t c = 0; c < classes; ++c) {
      auto row = m.row(c);
      if (c == held) {
        // Dominant held-class row: magnitude ~10, negative bias.
        auto dir = class_dir.row(c);
        for (std::size_t i = 0; i < block; ++i) row[i] = -10.0 * dir[i] + 0.3 * rng.gaussian();
        row[hidden] = -std::abs(row[hidden]);
      } else {
        // Weak positive rows; the (held+5 mod classes) neuron is made the
        // consistent runner-up so imax2 is stable within a class.
        const double mag = (c == (held + 5) % classes) ? 2.0 : 0.4;
        auto dir = class_dir.row(c);
        for (std::size_t i = 0; i < block; ++i) row[i] = mag * dir[i] + 0.05 * rng.gaussian();
        row[hidden] = std::abs(row[hidden]);
      }
    }
    return m;
  };

  auto attacker_peer = [&] {
    lfshield::Matrix m(classes, block);
    for (std::size_t c = 0; c < classes; ++c) {
      auto row = m.row(c);
      if (c == tgt) {
        for (std::size_t i = 0; i < block; ++i) row[i] = -9.0 * att_dir1[i] + 0.05 * rng.gaussian();
        row[hidden] = -std::abs(row[hidden]);
      } else if (c == src) {
        for (std::size_t i = 0; i < block; ++i) row[i] = 7.0 * att_dir2[i] + 0.05 * rng.gaussian();
        row[hidden] = std::abs(row[hidden]);
      } else {
        auto dir = class_dir.row(c);
        for (std::size_t i = 0; i < block; ++i) row[i] = 0.4 * dir[i] + 0.05 * rng.gaussian();
        row[hidden] = std::abs(row[hidden]);
      }
    }
    return m;
  };

  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      if (c == src && i < attacker_count) {
        fx.attackers.push_back(fx.olg.peers.size());
        fx.olg.peers.push_back(attacker_peer());
      } else {
        fx.olg.peers.push_back(honest_peer(c));
      }
    }
  }
  if (inject_singleton) {
    lfshield::Matrix m(classes, block);
    for (auto& v : m.data()) v = 25.0 * rng.gaussian();
    fx.singleton = fx.olg.peers.size();
    fx.olg.peers.push_back(std::move(m));
  }
  return fx;
}

}  // namespace fixtures
