// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Tolerances and thresholds are pinned in code.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "lfshield/cli.hpp"
#include "lfshield/federation.hpp"
#include "lfshield/reports.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace lfshield;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

using CriterionFn = std::function<void(Outcome&)>;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

ModelParams random_params(const ModelShape& s, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::zeros(s);
  for (auto& v : p.w1.data()) v = rng.gaussian();
  for (auto& v : p.b1) v = 0.3 * rng.gaussian();
  for (auto& v : p.w2.data()) v = rng.gaussian();
  for (auto& v : p.b2) v = 0.3 * rng.gaussian();
  return p;
}

// ---- digits dataset ---------------------------------------------------------

const fs::path kDigitsDir = fs::path(LFSHIELD_SOURCE_DIR) / "data" / "digits8x8";

Dataset digits_train() {
  return load_idx((kDigitsDir / "train-images-idx3-ubyte").string(),
                  (kDigitsDir / "train-labels-idx1-ubyte").string());
}

Dataset digits_test() {
  return load_idx((kDigitsDir / "test-images-idx3-ubyte").string(),
                  (kDigitsDir / "test-labels-idx1-ubyte").string());
}

ExperimentConfig digits_iid_config() {
  ExperimentConfig cfg;
  cfg.data.kind = "idx";
  cfg.regime = Regime::iid;
  cfg.peers = 20;
  cfg.rounds = 30;
  cfg.hidden = 32;
  cfg.hp = {.lr = 0.05, .momentum = 0.9, .local_epochs = 3, .batch_size = 32};
  cfg.source_class = 7;
  cfg.target_class = 1;
  cfg.defense = DefenseKind::fedavg;
  cfg.seed = 42;
  return cfg;
}

// Cached runs shared by criteria 6 and 8.
struct DigitsRuns {
  Summary attack_free;
  Summary ours_30;
  Summary fedavg_30;
  bool ready = false;
};
DigitsRuns g_digits;

void ensure_digits_runs() {
  if (g_digits.ready) return;
  const Dataset train = digits_train();
  const Dataset test = digits_test();

  auto run_with = [&](DefenseKind defense, double ratio) {
    ExperimentConfig cfg = digits_iid_config();
    cfg.defense = defense;
    cfg.attacker_ratio = ratio;
    return run_experiment(cfg, train, test).summary;
  };
  g_digits.attack_free = run_with(DefenseKind::fedavg, 0.0);
  g_digits.ours_30 = run_with(DefenseKind::ours, 0.3);
  g_digits.fedavg_30 = run_with(DefenseKind::fedavg, 0.3);
  g_digits.ready = true;
}

// ---- criteria ---------------------------------------------------------------

void criterion_gradient_correctness(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  const ModelShape s{6, 5, 4};
  for (int instance = 0; instance < 50; ++instance) {
    const ModelParams p = random_params(s, rng.next_u64());
    std::vector<double> x(s.input);
    for (auto& v : x) v = rng.gaussian();
    const auto y = one_hot(s.classes, rng.uniform_index(s.classes));
    const auto analytic = backward(p, forward(p, x), y).flatten();
    const auto fd = oracles::finite_diff_gradient(p, x, y, 1e-5);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double rel = std::abs(analytic[i] - fd[i]) / std::max(1.0, std::abs(fd[i]));
      if (rel > 1e-6) {
        out.require(false, "coordinate " + std::to_string(i) + " rel err " + fmt(rel));
        return;
      }
    }
  }
  const double secs = seconds_since(t0);
  out.require(secs < 5.0, "runtime " + fmt(secs) + "s exceeds 5s");
  out.detail = "50 instances within 1e-6, " + fmt(secs) + "s";
}

void criterion_delta_bounds(Outcome& out) {
  Rng rng(2002);
  const ModelShape s{5, 4, 6};
  std::size_t violations = 0;
  for (int call = 0; call < 1000; ++call) {
    const ModelParams p = random_params(s, rng.next_u64());
    std::vector<double> x(s.input);
    for (auto& v : x) v = rng.gaussian();
    const std::size_t label = rng.uniform_index(s.classes);
    const auto trace = forward(p, x);
    const auto y = one_hot(s.classes, label);
    (void)backward(p, trace, y);
    for (std::size_t i = 0; i < s.classes; ++i) {
      const double delta = trace.probs[i] - y[i];
      const bool ok = i == label ? (delta >= -1.0 && delta <= 0.0) : (delta >= 0.0 && delta <= 1.0);
      if (!ok) ++violations;
    }
  }
  out.require(violations == 0, std::to_string(violations) + " bound violations");
  out.detail = "1000 backward calls, zero violations";
}

void criterion_planted_mild(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failures = 0;
  for (double fraction : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    const auto attackers = static_cast<std::size_t>(std::lround(fraction * 20.0));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto fx = fixtures::mild_fixture(20, attackers, 25.0, 5.0, 10, seed * 7919 + 13);
      const auto res = filter_mild(fx.rows, derive_seed(seed, "acceptance-mild"));
      if (res.bad_peers != fx.attackers) ++failures;
    }
  }
  const double secs = seconds_since(t0);
  out.require(failures == 0, std::to_string(failures) + "/500 recoveries missed");
  out.require(secs < 30.0, "runtime " + fmt(secs) + "s exceeds 30s");
  out.detail = "500/500 exact recoveries, " + fmt(secs) + "s";
}

void criterion_extreme_fixture(Outcome& out) {
  std::size_t failures = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto fx = fixtures::extreme_fixture(10, 10, 4, true, seed * 104729 + 7);
    const auto res = filter_extreme(fx.olg, neuron_magnitudes(fx.olg));
    auto expected = fx.attackers;
    expected.push_back(fx.singleton);
    std::sort(expected.begin(), expected.end());
    if (res.bad_peers != expected) ++failures;
  }
  out.require(failures == 0, std::to_string(failures) + "/100 seeds misflagged");
  out.detail = "100/100 seeds: 4 attackers + singleton flagged, zero false positives";
}

void criterion_oracle_equivalence(Outcome& out) {
  Rng rng(5005);
  const ModelShape s{2, 2, 2};
  auto random_update = [&](double scale = 1.0) {
    ModelParams p = ModelParams::zeros(s);
    for (auto& v : p.w1.data()) v = scale * rng.gaussian();
    for (auto& v : p.b1) v = scale * rng.gaussian();
    for (auto& v : p.w2.data()) v = scale * rng.gaussian();
    for (auto& v : p.b2) v = scale * rng.gaussian();
    return p;
  };

  std::size_t median_miss = 0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t m = 1 + rng.uniform_index(9);
    std::vector<ModelParams> updates;
    for (std::size_t i = 0; i < m; ++i) updates.push_back(random_update());
    const auto mine = coord_median(updates).flatten();
    for (std::size_t c = 0; c < mine.size(); ++c) {
      std::vector<double> col;
      for (const auto& u : updates) col.push_back(u.flatten()[c]);
      if (mine[c] != oracles::median_of(col)) ++median_miss;
    }
  }
  out.require(median_miss == 0, "coord_median mismatches: " + std::to_string(median_miss));

  std::size_t krum_miss = 0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t m = 4 + rng.uniform_index(3);
    const std::size_t f = rng.uniform_index(m - 2);
    std::vector<ModelParams> updates;
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < m; ++i) {
      updates.push_back(random_update());
      rows.push_back(updates.back().flatten());
    }
    if (multi_krum_select(updates, f) != oracles::krum_select(rows, f)) ++krum_miss;
  }
  out.require(krum_miss == 0, "multi_krum mismatches: " + std::to_string(krum_miss));

  std::size_t mst_miss = 0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t n = 2 + rng.uniform_index(7);
    Matrix rows(n, 2);
    for (auto& v : rows.data()) v = rng.uniform(0.0, 10.0);
    const double mine = hdbscan_mst_weight(rows, 2);
    const double exact = oracles::exhaustive_mst_weight(mutual_reachability(rows, 2));
    if (std::abs(mine - exact) > 1e-9 * std::max(1.0, exact)) ++mst_miss;
  }
  out.require(mst_miss == 0, "MST weight mismatches: " + std::to_string(mst_miss));

  std::size_t rmedian_miss = 0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t m = 2 + rng.uniform_index(7);
    std::vector<double> values(m);
    for (auto& v : values) v = rng.uniform(-10.0, 10.0);
    std::vector<ModelParams> updates;
    for (double v : values) {
      ModelParams p = ModelParams::zeros({1, 1, 1});
      p.w1(0, 0) = p.b1[0] = p.w2(0, 0) = p.b2[0] = v;
      updates.push_back(p);
    }
    const double mine = repeated_median(updates).w1(0, 0);
    const double exact = oracles::siegel_midpoint(values);
    if (std::abs(mine - exact) > 1e-12 * std::max(1.0, std::abs(exact))) ++rmedian_miss;
  }
  out.require(rmedian_miss == 0, "repeated_median mismatches: " + std::to_string(rmedian_miss));

  out.detail = "median, multi-krum, MST and repeated-median all match (200 instances each)";
}

void criterion_e2e_mild(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_digits_runs();

  const double base_src = g_digits.attack_free.src_acc.value_or(0.0);
  const double ours_src = g_digits.ours_30.src_acc.value_or(0.0);
  const double ours_asr = g_digits.ours_30.asr.value_or(1.0);
  const double fedavg_src = g_digits.fedavg_30.src_acc.value_or(0.0);
  const double fedavg_asr = g_digits.fedavg_30.asr.value_or(0.0);

  out.require(ours_asr <= 0.05, "defended ASR " + fmt(ours_asr) + " > 0.05");
  out.require(ours_src >= base_src - 0.03,
              "defended Src-Acc " + fmt(ours_src) + " < attack-free " + fmt(base_src) + " - 0.03");
  out.require(fedavg_asr >= 2.0 * ours_asr,
              "undefended ASR " + fmt(fedavg_asr) + " < 2x defended " + fmt(ours_asr));
  out.require(fedavg_src <= base_src - 0.10,
              "undefended Src-Acc " + fmt(fedavg_src) + " not 0.10 below " + fmt(base_src));
  const double secs = seconds_since(t0);
  out.require(secs < 600.0, "runtime " + fmt(secs) + "s exceeds 10min");
  out.detail = "attack-free src " + fmt(base_src) + ", ours src " + fmt(ours_src) + " asr " +
               fmt(ours_asr) + ", fedavg src " + fmt(fedavg_src) + " asr " + fmt(fedavg_asr) +
               ", " + fmt(secs) + "s";
}

void criterion_e2e_extreme(Outcome& out) {
  const Dataset train = digits_train();
  const Dataset test = digits_test();

  ExperimentConfig cfg = digits_iid_config();
  cfg.regime = Regime::extreme;
  cfg.peers = 50;
  cfg.attacker_ratio = 0.0;
  cfg.defense = DefenseKind::fedavg;
  const Summary attack_free = run_experiment(cfg, train, test).summary;

  cfg.attacker_ratio = 0.4;
  cfg.defense = DefenseKind::ours;
  const auto defended = run_experiment(cfg, train, test);

  const double base_src = attack_free.src_acc.value_or(0.0);
  const double ours_src = defended.summary.src_acc.value_or(0.0);
  out.require(ours_src >= 0.8 * base_src,
              "defended Src-Acc " + fmt(ours_src) + " < 0.8 x attack-free " + fmt(base_src));

  double recall_tail = 0.0;
  std::size_t tail = std::min<std::size_t>(10, defended.reports.size());
  for (std::size_t i = defended.reports.size() - tail; i < defended.reports.size(); ++i)
    recall_tail += defended.reports[i].recall.value_or(0.0);
  recall_tail /= static_cast<double>(tail);
  out.require(recall_tail == 1.0, "last-10 mean recall " + fmt(recall_tail) + " != 1.0");
  out.detail = "attack-free src " + fmt(base_src) + ", defended src " + fmt(ours_src) +
               ", tail recall " + fmt(recall_tail);
}

void criterion_stability(Outcome& out) {
  ensure_digits_runs();
  const double cv_ours = g_digits.ours_30.cv_src_acc;
  const double cv_fedavg = g_digits.fedavg_30.cv_src_acc;
  out.require(std::isfinite(cv_ours) && std::isfinite(cv_fedavg), "CV not finite");
  out.require(cv_ours <= cv_fedavg,
              "CV ours " + fmt(cv_ours) + " > CV fedavg " + fmt(cv_fedavg));
  out.detail = "CV ours " + fmt(cv_ours) + " <= CV fedavg " + fmt(cv_fedavg);
}

void criterion_angle_separation(Outcome& out) {
  const Dataset train = digits_train();
  const Dataset test = digits_test();

  // Warm up a clean global model, then compare one peer's honest and
  // flipped updates from the same state, data and seed.
  ExperimentConfig cfg = digits_iid_config();
  cfg.rounds = 5;
  FederatedExperiment warmup(cfg, train, test);
  (void)warmup.run();
  const ModelParams w = warmup.global();

  const auto plan = partition_iid(train, cfg.peers, cfg.seed);
  std::size_t peer = 0;
  Dataset peer_ds;
  for (; peer < cfg.peers; ++peer) {
    peer_ds = train.subset(plan.assignments[peer]);
    if (std::count(peer_ds.labels.begin(), peer_ds.labels.end(), cfg.source_class) > 0) break;
  }
  out.require(peer < cfg.peers, "no peer holds a source example");

  const AttackSpec spec{.source_class = cfg.source_class, .target_class = cfg.target_class};
  const auto honest = local_train(w, peer_ds, cfg.hp, 99);
  const auto bad = local_train(w, flip_labels(peer_ds, spec), cfg.hp, 99);
  const UpdateGradient g_h = compute_update_gradient(w, *honest, cfg.hp.lr);
  const UpdateGradient g_b = compute_update_gradient(w, *bad, cfg.hp.lr);

  const double whole = angle_degrees(g_h.values.flatten(), g_b.values.flatten());

  auto output_layer_flat = [](const UpdateGradient& g) {
    std::vector<double> v(g.values.w2.data());
    v.insert(v.end(), g.values.b2.begin(), g.values.b2.end());
    return v;
  };
  const double output = angle_degrees(output_layer_flat(g_h), output_layer_flat(g_b));

  const auto olg = extract_output_layer({g_h.values, g_b.values});
  const auto mags = neuron_magnitudes(olg);
  const Matrix features = build_features_mild(olg, mags.imax1_s, mags.imax2_s);
  const double relevant = angle_degrees(features.row(0), features.row(1));

  out.require(relevant > output, "relevant " + fmt(relevant) + " <= output-layer " + fmt(output));
  out.require(output > whole, "output-layer " + fmt(output) + " <= whole " + fmt(whole));
  out.detail = "whole " + fmt(whole) + " < output-layer " + fmt(output) + " < relevant " +
               fmt(relevant) + " degrees";
}

void criterion_determinism(Outcome& out) {
  const fs::path dir = fs::temp_directory_path() / "lfshield_acceptance_det";
  fs::remove_all(dir);

  ExperimentConfig cfg;
  cfg.data.kind = "synth";
  cfg.data.synth_classes = 5;
  cfg.data.synth_train_n = 250;
  cfg.data.synth_test_n = 100;
  cfg.data.synth_dim = 8;
  cfg.peers = 10;
  cfg.rounds = 5;
  cfg.hidden = 8;
  cfg.hp = {.lr = 0.05, .momentum = 0.9, .local_epochs = 2, .batch_size = 16};
  cfg.source_class = 3;
  cfg.target_class = 1;
  cfg.attacker_ratio = 0.3;
  cfg.defense = DefenseKind::ours;
  cfg.seed = 7;

  auto run_into = [&](const fs::path& out_dir, std::size_t threads) {
    ExperimentConfig local = cfg;
    local.threads = threads;
    run_sweep(local, {DefenseKind::ours}, {0.3}, out_dir, true);
  };
  run_into(dir / "a", 1);
  run_into(dir / "b", 1);
  run_into(dir / "c", 4);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  for (const char* rel : {"summary.csv", "ours_r30/rounds.jsonl", "ours_r30/features.csv"}) {
    const std::string a = slurp(dir / "a" / rel);
    out.require(!a.empty(), std::string(rel) + " missing");
    out.require(a == slurp(dir / "b" / rel), std::string(rel) + " differs across reruns");
    out.require(a == slurp(dir / "c" / rel), std::string(rel) + " differs across thread counts");
  }
  out.detail = "JSONL/CSV byte-identical across reruns and at 1 vs 4 threads";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, CriterionFn>> criteria{
      {"gradient correctness vs finite differences", criterion_gradient_correctness},
      {"delta bound invariant", criterion_delta_bounds},
      {"planted-cluster recovery (mild)", criterion_planted_mild},
      {"extreme-regime fixture recovery", criterion_extreme_fixture},
      {"oracle equivalence (median/krum/mst/rmedian)", criterion_oracle_equivalence},
      {"end-to-end iid digits reproduction", criterion_e2e_mild},
      {"end-to-end extreme reproduction", criterion_e2e_extreme},
      {"source-accuracy stability (CV)", criterion_stability},
      {"angle separation ordering", criterion_angle_separation},
      {"byte-identical determinism", criterion_determinism},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs = seconds_since(t0);
    std::printf("[%s] criterion %zu: %s — %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
