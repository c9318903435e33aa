#pragma once

// The `run` subcommand: load a config, apply overrides, execute the
// requested (defense x ratio) sweep cells and write JSONL round reports,
// the summary CSV and optional feature dumps.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lfshield/config.hpp"
#include "lfshield/federation.hpp"
#include "lfshield/reports.hpp"

namespace lfshield {

struct CliOptions {
  std::string config_path;
  std::string defense = "";        // empty = from config; "all" = every aggregator
  std::vector<double> ratios;      // empty = from config
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out_dir = "out";
  bool dump_features = false;
  std::optional<std::size_t> threads;
};

namespace detail {

inline std::string cell_name(DefenseKind defense, double ratio) {
  const int pct = static_cast<int>(std::lround(ratio * 100.0));
  return std::string(to_string(defense)) + "_r" + std::to_string(pct);
}

inline std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
  if (cfg.data.kind == "idx") {
    if (cfg.data.train_images.empty() || cfg.data.train_labels.empty() ||
        cfg.data.test_images.empty() || cfg.data.test_labels.empty())
      throw ConfigError("config: dataset=idx requires the four idx_* paths");
    return {load_idx(cfg.data.train_images, cfg.data.train_labels),
            load_idx(cfg.data.test_images, cfg.data.test_labels)};
  }
  Dataset train = synth_gaussian(cfg.data.synth_classes, cfg.data.synth_train_n,
                                 cfg.data.synth_dim, cfg.data.synth_spread,
                                 derive_seed(cfg.seed, "synth-train"));
  Dataset test = synth_gaussian(cfg.data.synth_classes, cfg.data.synth_test_n, cfg.data.synth_dim,
                                cfg.data.synth_spread, derive_seed(cfg.seed, "synth-test"));
  return {train, test};
}

}  // namespace detail

// Executes every requested sweep cell; returns 0 on success.
inline int run_sweep(const ExperimentConfig& base, const std::vector<DefenseKind>& defenses,
                     const std::vector<double>& ratios, const std::filesystem::path& out_dir,
                     bool dump_features) {
  std::filesystem::create_directories(out_dir);
  const auto [train, test] = detail::load_datasets(base);

  std::vector<SummaryRow> summary_rows;
  for (DefenseKind defense : defenses) {
    for (double ratio : ratios) {
      ExperimentConfig cfg = base;
      cfg.defense = defense;
      cfg.attacker_ratio = ratio;
      cfg.validate();

      const std::string cell = detail::cell_name(defense, ratio);
      std::cerr << "[run] " << cell << "\n";
      ExperimentResult result = run_experiment(cfg, train, test, dump_features);

      const nlohmann::json echo = config_echo(cfg);
      const std::filesystem::path cell_dir = out_dir / cell;
      std::filesystem::create_directories(cell_dir);
      atomic_write_file(cell_dir / "rounds.jsonl", reports_to_jsonl(echo, result.reports));
      if (dump_features)
        atomic_write_file(cell_dir / "features.csv", features_to_csv(echo, result.feature_dump));

      for (const auto& r : result.reports)
        std::cerr << "[timing] " << cell << " round " << r.round << " defense_ms="
                  << r.defense_ms << "\n";

      summary_rows.push_back({to_string(defense), ratio, result.summary});
    }
  }
  atomic_write_file(out_dir / "summary.csv", summary_to_csv(config_echo(base), summary_rows));
  return 0;
}

inline int run_command(const CliOptions& opt) {
  ExperimentConfig cfg;
  bool seed_from_file = false;
  if (!opt.config_path.empty()) {
    const KvMap kv = parse_kv_file(opt.config_path);
    seed_from_file = kv.count("seed") > 0;
    apply_kv(cfg, kv);
  }

  // Seed precedence: --seed, then the config file, then LFSHIELD_SEED.
  if (opt.seed) {
    cfg.seed = *opt.seed;
  } else if (!seed_from_file) {
    if (const char* env = std::getenv("LFSHIELD_SEED")) apply_kv(cfg, {{"seed", env}});
  }

  if (!opt.mode.empty()) {
    if (opt.mode == "auto") cfg.mode = ModeChoice::auto_detect;
    else if (opt.mode == "mild") cfg.mode = ModeChoice::mild;
    else if (opt.mode == "extreme") cfg.mode = ModeChoice::extreme;
    else throw ConfigError("unknown --mode '" + opt.mode + "'");
  }
  if (opt.threads) cfg.threads = *opt.threads;

  std::vector<DefenseKind> defenses;
  if (opt.defense == "all") {
    defenses = {DefenseKind::fedavg, DefenseKind::median, DefenseKind::rmedian,
                DefenseKind::tmean, DefenseKind::mkrum, DefenseKind::fgold, DefenseKind::ours};
  } else if (!opt.defense.empty()) {
    const auto d = parse_defense(opt.defense);
    if (!d) throw ConfigError("unknown --defense '" + opt.defense + "'");
    defenses = {*d};
  } else {
    defenses = {cfg.defense};
  }

  std::vector<double> ratios = opt.ratios.empty() ? std::vector<double>{cfg.attacker_ratio}
                                                  : opt.ratios;
  for (double r : ratios)
    if (r < 0.0 || r > 1.0) throw ConfigError("ratio out of [0, 1]");

  cfg.validate();
  return run_sweep(cfg, defenses, ratios, opt.out_dir, opt.dump_features);
}

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Label-flipping attack simulator for federated learning"};
  app.require_subcommand(1);

  CliOptions opt;
  CLI::App* run = app.add_subcommand("run", "run an experiment sweep");
  run->add_option("--config", opt.config_path, "experiment config file (key = value lines)");
  run->add_option("--defense", opt.defense, "aggregator: fedavg|median|rmedian|tmean|mkrum|fgold|ours|all");
  run->add_option("--ratios", opt.ratios, "attacker ratios, e.g. 0,0.1,0.2")->delimiter(',');
  run->add_option("--ratio", opt.ratios, "single attacker ratio (may repeat)");
  std::uint64_t seed_val = 0;
  auto* seed_opt = run->add_option("--seed", seed_val, "experiment seed (overrides config)");
  run->add_option("--mode", opt.mode, "distribution mode: auto|mild|extreme")
      ->check(CLI::IsMember({"auto", "mild", "extreme"}));
  run->add_option("--out-dir", opt.out_dir, "output directory");
  run->add_flag("--dump-features", opt.dump_features, "write per-round gradient feature + PCA CSVs");
  std::size_t threads_val = 0;
  auto* threads_opt = run->add_option("--threads", threads_val, "worker threads for local training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*seed_opt) opt.seed = seed_val;
  if (*threads_opt) opt.threads = threads_val;

  try {
    return run_command(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace lfshield
