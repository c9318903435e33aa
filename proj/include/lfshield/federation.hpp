#pragma once

// The outer training loop: per-round peer selection, local SGD, update
// gradient reconstruction, defense dispatch and FedAvg aggregation, with
// per-peer RNG streams so the result is independent of worker count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lfshield/baselines.hpp"
#include "lfshield/data.hpp"
#include "lfshield/defense.hpp"
#include "lfshield/metrics.hpp"
#include "lfshield/micro_nn.hpp"

namespace lfshield {

enum class DefenseKind { fedavg, median, rmedian, tmean, mkrum, fgold, ours };

inline const char* to_string(DefenseKind d) {
  switch (d) {
    case DefenseKind::fedavg: return "fedavg";
    case DefenseKind::median: return "median";
    case DefenseKind::rmedian: return "rmedian";
    case DefenseKind::tmean: return "tmean";
    case DefenseKind::mkrum: return "mkrum";
    case DefenseKind::fgold: return "fgold";
    case DefenseKind::ours: return "ours";
  }
  return "?";
}

inline std::optional<DefenseKind> parse_defense(const std::string& s) {
  for (DefenseKind d : {DefenseKind::fedavg, DefenseKind::median, DefenseKind::rmedian,
                        DefenseKind::tmean, DefenseKind::mkrum, DefenseKind::fgold,
                        DefenseKind::ours})
    if (s == to_string(d)) return d;
  return std::nullopt;
}

enum class ModeChoice { auto_detect, mild, extreme };

inline const char* to_string(ModeChoice m) {
  switch (m) {
    case ModeChoice::auto_detect: return "auto";
    case ModeChoice::mild: return "mild";
    case ModeChoice::extreme: return "extreme";
  }
  return "?";
}

struct DatasetConfig {
  std::string kind = "synth";  // synth | idx
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // synth
  std::size_t synth_classes = 10;
  std::size_t synth_train_n = 2000;
  std::size_t synth_test_n = 500;
  std::size_t synth_dim = 16;
  double synth_spread = 1.0;
};

struct ExperimentConfig {
  DatasetConfig data;
  Regime regime = Regime::iid;
  double alpha = 1.0;  // Dirichlet concentration for the mild regime

  std::size_t peers = 20;         // K
  double participation = 1.0;     // C
  std::size_t rounds = 30;        // T
  std::size_t hidden = 32;
  Hyperparams hp;

  double attacker_ratio = 0.0;
  int source_class = 7;
  int target_class = 1;
  std::vector<std::size_t> attacker_override;  // optional explicit ids

  DefenseKind defense = DefenseKind::ours;
  double mkrum_f = -1.0;      // assumed attacker count; <0 = derive from true ratio
  double tmean_beta = -1.0;   // trim fraction; <0 = derive from true ratio
  std::size_t extreme_threshold = 1;
  ModeChoice mode = ModeChoice::auto_detect;

  std::uint64_t seed = 42;
  std::size_t threads = 1;

  void validate() const {
    if (peers == 0) throw ConfigError("config: peers must be positive");
    if (participation <= 0.0 || participation > 1.0)
      throw ConfigError("config: participation must be in (0, 1]");
    if (rounds == 0) throw ConfigError("config: rounds must be positive");
    if (hidden == 0) throw ConfigError("config: hidden must be positive");
    if (hp.lr <= 0.0) throw ConfigError("config: lr must be positive");
    if (hp.momentum < 0.0 || hp.momentum >= 1.0)
      throw ConfigError("config: momentum must be in [0, 1)");
    if (hp.local_epochs < 0) throw ConfigError("config: epochs must be non-negative");
    if (hp.batch_size == 0) throw ConfigError("config: batch size must be positive");
    if (attacker_ratio < 0.0 || attacker_ratio > 1.0)
      throw ConfigError("config: ratio must be in [0, 1]");
    if (source_class == target_class) throw ConfigError("config: source == target class");
    if (data.kind != "synth" && data.kind != "idx")
      throw ConfigError("config: dataset must be synth or idx");
    if (tmean_beta >= 0.5) throw ConfigError("config: tmean_beta must be below 0.5");
  }
};

// ---- Local training --------------------------------------------------------

// E epochs of shuffled mini-batch momentum SGD from a copy of the global
// model. Batch gradients are means of per-example gradients. Returns
// nullopt for an empty dataset (skip-peer signal).
inline std::optional<ModelParams> local_train(const ModelParams& global, const Dataset& peer_ds,
                                              const Hyperparams& hp, std::uint64_t peer_seed) {
  if (peer_ds.n() == 0) return std::nullopt;
  ModelParams params = global;
  ModelGrads velocity = ModelParams::zeros(params.shape());
  Rng rng(peer_seed);

  std::vector<std::size_t> order(peer_ds.n());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < hp.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      ModelGrads batch = ModelParams::zeros(params.shape());
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        const ForwardTrace t = forward(params, peer_ds.features.row(idx));
        const auto y = one_hot(peer_ds.classes, static_cast<std::size_t>(peer_ds.labels[idx]));
        batch.add_scaled(backward(params, t, y), 1.0);
      }
      batch.scale(1.0 / static_cast<double>(end - start));
      sgd_step(params, velocity, batch, hp);
    }
  }
  return params;
}

// Server-side gradient reconstruction (W^t - W_k^{t+1}) / eta, with the
// output layer addressable per class neuron.
struct UpdateGradient {
  ModelGrads values;

  std::vector<double> output_neuron(std::size_t i) const {
    const ModelShape s = values.shape();
    std::vector<double> row(s.hidden + 1);
    auto w = values.w2.row(i);
    std::copy(w.begin(), w.end(), row.begin());
    row[s.hidden] = values.b2[i];
    return row;
  }
};

inline UpdateGradient compute_update_gradient(const ModelParams& w_t, const ModelParams& w_next,
                                              double lr) {
  if (lr <= 0.0) throw std::invalid_argument("compute_update_gradient: lr must be positive");
  if (!(w_t.shape() == w_next.shape()))
    throw std::invalid_argument("compute_update_gradient: shape mismatch");
  UpdateGradient g;
  g.values = w_t;
  g.values.add_scaled(w_next, -1.0);
  g.values.scale(1.0 / lr);
  return g;
}

// Coordinate-wise weighted mean.
inline ModelParams fedavg(const std::vector<ModelParams>& updates,
                          const std::vector<double>& weights) {
  if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
  if (updates.size() != weights.size()) throw std::invalid_argument("fedavg: weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("fedavg: negative weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("fedavg: weights sum to zero");
  ModelParams out = ModelParams::zeros(updates.front().shape());
  for (std::size_t i = 0; i < updates.size(); ++i) out.add_scaled(updates[i], weights[i] / total);
  return out;
}

// ---- Round state and experiment loop ----------------------------------------

struct RoundState {
  std::size_t round = 0;
  ModelParams global;                   // W^t
  std::vector<std::size_t> selected;    // S
  std::vector<ModelParams> updates;     // W_k^{t+1}, aligned with selected
  std::vector<UpdateGradient> gradients;
  std::vector<std::size_t> excluded;    // sorted peer ids
  ModelParams next_global;              // W^{t+1}
};

// One feature-dump row per selected peer per round.
struct FeatureDumpRow {
  std::size_t round = 0;
  std::size_t peer = 0;
  bool attacker = false;
  int cluster = -2;  // -2 = defense did not cluster
  bool flagged = false;
  double pca_x = 0.0, pca_y = 0.0;
  std::vector<double> features;
};

struct ExperimentResult {
  std::vector<RoundReport> reports;
  Summary summary;
  std::vector<FeatureDumpRow> feature_dump;
  std::vector<std::string> warnings;
  std::vector<std::size_t> attackers;  // resolved ground truth
};

namespace detail {

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::min(threads, n);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

class FederatedExperiment {
 public:
  FederatedExperiment(ExperimentConfig config, Dataset train, Dataset test)
      : cfg_(std::move(config)), test_(std::move(test)) {
    cfg_.validate();
    setup(std::move(train));
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::vector<std::size_t>& attackers() const { return attackers_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const ModelParams& global() const { return global_; }

  ExperimentResult run(bool dump_features = false) {
    ExperimentResult result;
    result.attackers = attackers_;
    for (std::size_t t = 0; t < cfg_.rounds; ++t) {
      RoundState state = run_round(t, dump_features ? &result.feature_dump : nullptr);
      global_ = state.next_global;

      const EvalResult ev = evaluate(global_, test_, cfg_.source_class, cfg_.target_class);
      RoundReport report;
      report.round = t;
      report.te = ev.te;
      report.all_acc = ev.all_acc;
      report.src_acc = ev.src_acc;
      report.asr = ev.asr;
      report.excluded = state.excluded;
      report.attackers = attackers_;
      report.precision = defense_precision(state.excluded, attackers_);
      report.recall = defense_recall(state.excluded, attackers_);
      report.defense_ms = last_defense_ms_;
      result.reports.push_back(std::move(report));
    }
    result.summary = summarize(result.reports);
    result.warnings = warnings_;
    return result;
  }

  RoundState run_round(std::size_t t, std::vector<FeatureDumpRow>* dump = nullptr) {
    RoundState state;
    state.round = t;
    state.global = global_;

    // S: random set of m = max(C*K, 1) peers.
    const auto m = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg_.participation * static_cast<double>(cfg_.peers)));
    Rng select_rng(derive_seed(cfg_.seed, "select", t));
    state.selected = select_rng.sample_without_replacement(cfg_.peers, m);
    std::sort(state.selected.begin(), state.selected.end());

    // Local training, parallel across peers; per-peer streams keep the
    // result independent of the worker count.
    std::vector<std::optional<ModelParams>> raw(state.selected.size());
    detail::parallel_for(state.selected.size(), cfg_.threads, [&](std::size_t i) {
      const std::size_t peer = state.selected[i];
      raw[i] = local_train(global_, peer_data_[peer], cfg_.hp,
                           derive_seed(cfg_.seed, "peer", peer, t));
    });

    std::vector<std::size_t> trained;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!raw[i]) continue;  // skip-peer signal
      trained.push_back(state.selected[i]);
      state.updates.push_back(std::move(*raw[i]));
    }
    state.selected = trained;

    state.gradients.reserve(state.updates.size());
    for (const auto& u : state.updates)
      state.gradients.push_back(compute_update_gradient(global_, u, cfg_.hp.lr));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> bad_local = apply_defense(state, t, dump);
    last_defense_ms_ =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    std::sort(bad_local.begin(), bad_local.end());
    for (std::size_t i : bad_local) state.excluded.push_back(state.selected[i]);

    aggregate(state, bad_local);
    return state;
  }

 private:
  void setup(Dataset train) {
    switch (cfg_.regime) {
      case Regime::iid: plan_ = partition_iid(train, cfg_.peers, cfg_.seed); break;
      case Regime::mild: plan_ = partition_dirichlet(train, cfg_.peers, cfg_.alpha, cfg_.seed); break;
      case Regime::extreme: plan_ = partition_extreme(train, cfg_.peers, cfg_.seed); break;
    }

    if (!cfg_.attacker_override.empty()) {
      attackers_ = cfg_.attacker_override;
      std::sort(attackers_.begin(), attackers_.end());
      for (std::size_t a : attackers_)
        if (a >= cfg_.peers) throw ConfigError("config: attacker id out of range");
    } else if (cfg_.attacker_ratio > 0.0) {
      AttackerSelection sel = select_attackers(plan_, cfg_.attacker_ratio, cfg_.source_class,
                                               cfg_.target_class, cfg_.seed);
      attackers_ = sel.ids;
      if (sel.warning) {
        warnings_.push_back(*sel.warning);
        std::cerr << "[warn] " << *sel.warning << "\n";
      }
    }

    AttackSpec spec;
    spec.source_class = cfg_.source_class;
    spec.target_class = cfg_.target_class;
    spec.attacker_ids = attackers_;

    peer_data_.reserve(cfg_.peers);
    for (std::size_t p = 0; p < cfg_.peers; ++p) {
      Dataset local = train.subset(plan_.assignments[p]);
      if (spec.is_attacker(p)) local = flip_labels(local, spec);
      peer_data_.push_back(std::move(local));
    }

    const ModelShape shape{train.input_dim(), cfg_.hidden, train.classes};
    global_ = init_params(shape, derive_seed(cfg_.seed, "init"));
    fg_history_ = Matrix(cfg_.peers, train.classes * (cfg_.hidden + 1));
  }

  std::size_t resolve_mkrum_f(std::size_t m) const {
    if (cfg_.mkrum_f >= 0.0) return static_cast<std::size_t>(cfg_.mkrum_f);
    return static_cast<std::size_t>(
        std::lround(cfg_.attacker_ratio * static_cast<double>(m)));
  }

  double resolve_tmean_beta() const {
    return cfg_.tmean_beta >= 0.0 ? cfg_.tmean_beta : cfg_.attacker_ratio;
  }

  // Returns indices into state.selected deemed bad.
  std::vector<std::size_t> apply_defense(RoundState& state, std::size_t t,
                                         std::vector<FeatureDumpRow>* dump) {
    const std::size_t m = state.updates.size();
    std::vector<std::size_t> bad;
    OutputLayerGradients olg;

    switch (cfg_.defense) {
      case DefenseKind::fedavg:
      case DefenseKind::median:
      case DefenseKind::rmedian:
      case DefenseKind::tmean:
        break;
      case DefenseKind::mkrum: {
        const std::size_t f = resolve_mkrum_f(m);
        if (m >= f + 3) {
          const auto kept = multi_krum_select(updates_of(state), f);
          std::vector<bool> keep(m, false);
          for (std::size_t i : kept) keep[i] = true;
          for (std::size_t i = 0; i < m; ++i)
            if (!keep[i]) bad.push_back(i);
        } else {
          log_round(t, "mkrum skipped: too few updates for assumed f");
        }
        break;
      }
      case DefenseKind::fgold:
        break;  // weighting happens in aggregate()
      case DefenseKind::ours: {
        olg = extract_gradients(state);
        if (m < 2) {
          log_round(t, "defense skipped: fewer than 2 updates");
          break;
        }
        const NeuronMagnitudes mags = neuron_magnitudes(olg);
        DistributionMode mode;
        switch (cfg_.mode) {
          case ModeChoice::mild: mode = DistributionMode::mild; break;
          case ModeChoice::extreme: mode = DistributionMode::extreme; break;
          default: mode = detect_distribution_mode(olg, cfg_.extreme_threshold); break;
        }
        if (mode == DistributionMode::mild) {
          const auto [i1, i2] = identify_source_target(mags);
          const Matrix features = build_features_mild(olg, i1, i2);
          const MildFilterResult res = filter_mild(features, derive_seed(cfg_.seed, "filter", t));
          if (res.degenerate) log_round(t, "filter_mild: identical rows, nothing filtered");
          bad = res.bad_peers;
          if (dump) dump_rows(*dump, state, t, features, nullptr, bad);
        } else {
          if (m < 3) {
            log_round(t, "filter_extreme skipped: fewer than 3 updates");
            break;
          }
          const ExtremeFilterResult res = filter_extreme(olg, mags);
          bad = res.bad_peers;
          if (dump) dump_rows(*dump, state, t, res.features, &res.assignment, bad);
        }
        break;
      }
    }

    // Diagnostic dump for non-clustering defenses: relevant-neuron features only.
    if (dump && cfg_.defense != DefenseKind::ours && m >= 2) {
      if (olg.peer_count() == 0) olg = extract_gradients(state);
      const NeuronMagnitudes mags = neuron_magnitudes(olg);
      const Matrix features = build_features_mild(olg, mags.imax1_s, mags.imax2_s);
      dump_rows(*dump, state, t, features, nullptr, bad);
    }
    return bad;
  }

  std::vector<ModelParams> updates_of(const RoundState& state) const { return state.updates; }

  OutputLayerGradients extract_gradients(const RoundState& state) const {
    std::vector<ModelGrads> grads;
    grads.reserve(state.gradients.size());
    for (const auto& g : state.gradients) grads.push_back(g.values);
    return extract_output_layer(grads);
  }

  void dump_rows(std::vector<FeatureDumpRow>& dump, const RoundState& state, std::size_t t,
                 const Matrix& features, const ClusterAssignment* assignment,
                 const std::vector<std::size_t>& bad_local) {
    const PcaResult pca = features.rows() >= 2 ? pca_top2(features) : PcaResult{};
    for (std::size_t i = 0; i < state.selected.size(); ++i) {
      FeatureDumpRow row;
      row.round = t;
      row.peer = state.selected[i];
      row.attacker = std::binary_search(attackers_.begin(), attackers_.end(), row.peer);
      row.cluster = assignment ? assignment->labels[i] : -2;
      row.flagged = std::binary_search(bad_local.begin(), bad_local.end(), i);
      if (pca.coords.rows() == state.selected.size()) {
        row.pca_x = pca.coords(i, 0);
        row.pca_y = pca.coords(i, 1);
      }
      auto feat = features.row(i);
      row.features.assign(feat.begin(), feat.end());
      dump.push_back(std::move(row));
    }
  }

  void aggregate(RoundState& state, const std::vector<std::size_t>& bad_local) {
    const std::size_t m = state.updates.size();

    // FoolsGold history accrues for every trained peer before weighting.
    if (cfg_.defense == DefenseKind::fgold) {
      const OutputLayerGradients olg = extract_gradients(state);
      for (std::size_t i = 0; i < m; ++i) {
        auto hist = fg_history_.row(state.selected[i]);
        std::size_t w = 0;
        for (std::size_t c = 0; c < olg.classes; ++c) {
          auto row = olg.peers[i].row(c);
          for (double v : row) hist[w++] += v;
        }
      }
    }

    std::vector<ModelParams> kept;
    std::vector<double> weights;
    std::vector<bool> is_bad(m, false);
    for (std::size_t i : bad_local) is_bad[i] = true;
    for (std::size_t i = 0; i < m; ++i) {
      if (is_bad[i]) continue;
      kept.push_back(state.updates[i]);
      weights.push_back(static_cast<double>(peer_data_[state.selected[i]].n()));
    }

    if (kept.empty()) {
      log_round(state.round, "defense excluded every update; keeping the current model");
      state.next_global = global_;
      return;
    }

    switch (cfg_.defense) {
      case DefenseKind::median: state.next_global = coord_median(kept); break;
      case DefenseKind::rmedian: state.next_global = repeated_median(kept); break;
      case DefenseKind::tmean: {
        double beta = resolve_tmean_beta();
        const auto trim = static_cast<std::size_t>(beta * static_cast<double>(kept.size()));
        if (2 * trim >= kept.size()) {
          // Equivalent fallback at the 50% boundary.
          state.next_global = coord_median(kept);
        } else {
          state.next_global = trimmed_mean(kept, beta);
        }
        break;
      }
      case DefenseKind::fgold: {
        Matrix hist(m, fg_history_.cols());
        for (std::size_t i = 0; i < m; ++i) {
          auto src = fg_history_.row(state.selected[i]);
          std::copy(src.begin(), src.end(), hist.row(i).begin());
        }
        const std::vector<double> fw = foolsgold_weights(hist);
        double total = 0.0;
        for (double w : fw) total += w;
        if (total <= 0.0) {
          log_round(state.round, "foolsgold zeroed every weight; keeping the current model");
          state.next_global = global_;
        } else {
          state.next_global = fedavg(state.updates, fw);
        }
        break;
      }
      default:
        state.next_global = fedavg(kept, weights);
        break;
    }

    if (!state.next_global.all_finite())
      throw std::runtime_error("aggregation produced a non-finite model");
  }

  void log_round(std::size_t t, const std::string& msg) {
    std::cerr << "[warn] round " << t << ": " << msg << "\n";
    warnings_.push_back("round " + std::to_string(t) + ": " + msg);
  }

  ExperimentConfig cfg_;
  Dataset test_;
  PartitionPlan plan_;
  std::vector<Dataset> peer_data_;
  std::vector<std::size_t> attackers_;
  std::vector<std::string> warnings_;
  ModelParams global_;
  Matrix fg_history_;
  double last_defense_ms_ = 0.0;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Dataset train, Dataset test,
                                       bool dump_features = false) {
  FederatedExperiment exp(cfg, std::move(train), std::move(test));
  return exp.run(dump_features);
}

}  // namespace lfshield
