#pragma once

// Flat key = value experiment config files ('#' comments, blank lines
// ignored) and the resolved-config echo embedded in every output.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lfshield/federation.hpp"

namespace lfshield {

using KvMap = std::map<std::string, std::string>;

inline KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  KvMap kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " is not a number: '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " is not an integer: '" + v + "'");
  }
}

}  // namespace detail

// Applies kv pairs over a default-initialized (or partially filled) config.
// Unknown keys are errors so typos fail before any training.
inline void apply_kv(ExperimentConfig& cfg, const KvMap& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "dataset") cfg.data.kind = value;
    else if (key == "idx_train_images") cfg.data.train_images = value;
    else if (key == "idx_train_labels") cfg.data.train_labels = value;
    else if (key == "idx_test_images") cfg.data.test_images = value;
    else if (key == "idx_test_labels") cfg.data.test_labels = value;
    else if (key == "synth_classes") cfg.data.synth_classes = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "synth_train_n") cfg.data.synth_train_n = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "synth_test_n") cfg.data.synth_test_n = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "synth_dim") cfg.data.synth_dim = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "synth_spread") cfg.data.synth_spread = detail::to_double(key, value);
    else if (key == "regime") {
      if (value == "iid") cfg.regime = Regime::iid;
      else if (value == "mild") cfg.regime = Regime::mild;
      else if (value == "extreme") cfg.regime = Regime::extreme;
      else throw ConfigError("config: unknown regime '" + value + "'");
    } else if (key == "alpha") cfg.alpha = detail::to_double(key, value);
    else if (key == "peers") cfg.peers = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "participation") cfg.participation = detail::to_double(key, value);
    else if (key == "rounds") cfg.rounds = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "hidden") cfg.hidden = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "lr") cfg.hp.lr = detail::to_double(key, value);
    else if (key == "momentum") cfg.hp.momentum = detail::to_double(key, value);
    else if (key == "epochs") cfg.hp.local_epochs = static_cast<int>(detail::to_int(key, value));
    else if (key == "batch") cfg.hp.batch_size = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "ratio") cfg.attacker_ratio = detail::to_double(key, value);
    else if (key == "source") cfg.source_class = static_cast<int>(detail::to_int(key, value));
    else if (key == "target") cfg.target_class = static_cast<int>(detail::to_int(key, value));
    else if (key == "attackers") {
      cfg.attacker_override.clear();
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) cfg.attacker_override.push_back(static_cast<std::size_t>(detail::to_int(key, tok)));
    } else if (key == "defense") {
      const auto d = parse_defense(value);
      if (!d) throw ConfigError("config: unknown defense '" + value + "'");
      cfg.defense = *d;
    } else if (key == "mkrum_f") cfg.mkrum_f = detail::to_double(key, value);
    else if (key == "tmean_beta") cfg.tmean_beta = detail::to_double(key, value);
    else if (key == "extreme_threshold") cfg.extreme_threshold = static_cast<std::size_t>(detail::to_int(key, value));
    else if (key == "mode") {
      if (value == "auto") cfg.mode = ModeChoice::auto_detect;
      else if (value == "mild") cfg.mode = ModeChoice::mild;
      else if (value == "extreme") cfg.mode = ModeChoice::extreme;
      else throw ConfigError("config: unknown mode '" + value + "'");
    } else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::to_int(key, value));
    else if (key == "threads") cfg.threads = static_cast<std::size_t>(detail::to_int(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  apply_kv(cfg, parse_kv_file(path));
  return cfg;
}

// Resolved configuration as JSON (keys sorted by nlohmann's object order),
// embedded in report headers.
inline nlohmann::json config_echo(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = cfg.data.kind;
  if (cfg.data.kind == "idx") {
    j["idx_train_images"] = cfg.data.train_images;
    j["idx_train_labels"] = cfg.data.train_labels;
    j["idx_test_images"] = cfg.data.test_images;
    j["idx_test_labels"] = cfg.data.test_labels;
  } else {
    j["synth_classes"] = cfg.data.synth_classes;
    j["synth_train_n"] = cfg.data.synth_train_n;
    j["synth_test_n"] = cfg.data.synth_test_n;
    j["synth_dim"] = cfg.data.synth_dim;
    j["synth_spread"] = cfg.data.synth_spread;
  }
  j["regime"] = to_string(cfg.regime);
  j["alpha"] = cfg.alpha;
  j["peers"] = cfg.peers;
  j["participation"] = cfg.participation;
  j["rounds"] = cfg.rounds;
  j["hidden"] = cfg.hidden;
  j["lr"] = cfg.hp.lr;
  j["momentum"] = cfg.hp.momentum;
  j["epochs"] = cfg.hp.local_epochs;
  j["batch"] = cfg.hp.batch_size;
  j["ratio"] = cfg.attacker_ratio;
  j["source"] = cfg.source_class;
  j["target"] = cfg.target_class;
  if (!cfg.attacker_override.empty()) j["attackers"] = cfg.attacker_override;
  j["defense"] = to_string(cfg.defense);
  j["mkrum_f"] = cfg.mkrum_f;
  j["tmean_beta"] = cfg.tmean_beta;
  j["extreme_threshold"] = cfg.extreme_threshold;
  j["mode"] = to_string(cfg.mode);
  j["seed"] = cfg.seed;
  // threads is execution-only: results are independent of worker count, so
  // it stays out of the provenance echo to keep outputs byte-stable.
  return j;
}

}  // namespace lfshield
