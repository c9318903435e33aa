#pragma once

// Serialization of round reports (JSONL), sweep summaries (CSV) and feature
// dumps (CSV), plus atomic file writes. Output bytes are deterministic for
// a given config and seed; the defense wall-clock is deliberately not
// serialized.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfshield/config.hpp"
#include "lfshield/federation.hpp"
#include "lfshield/metrics.hpp"

namespace lfshield {

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

// Shortest round-trip formatting, identical to nlohmann's number output.
inline std::string fmt_double(double v) { return nlohmann::json(v).dump(); }

inline std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string{};
}

}  // namespace detail

// First line: {"config": ...}; then one JSON object per round.
inline std::string reports_to_jsonl(const nlohmann::json& config_echo,
                                    const std::vector<RoundReport>& reports) {
  std::string out;
  nlohmann::json head;
  head["config"] = config_echo;
  out += head.dump();
  out += '\n';
  for (const auto& r : reports) {
    nlohmann::json j;
    j["round"] = r.round;
    j["te"] = r.te;
    j["all_acc"] = r.all_acc;
    j["src_acc"] = detail::opt_json(r.src_acc);
    j["asr"] = detail::opt_json(r.asr);
    j["excluded"] = r.excluded;
    j["attackers"] = r.attackers;
    j["precision"] = detail::opt_json(r.precision);
    j["recall"] = detail::opt_json(r.recall);
    out += j.dump();
    out += '\n';
  }
  return out;
}

struct SummaryRow {
  std::string defense;
  double ratio = 0.0;
  Summary summary;
};

// One row per (defense, ratio) cell. te_x10 mirrors the scaled plotting
// convention; CV NaN is written literally as nan.
inline std::string summary_to_csv(const nlohmann::json& config_echo,
                                  const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "# config: " << config_echo.dump() << "\n";
  out << "defense,ratio,te,te_x10,all_acc,src_acc,asr,cv_src_acc,cv_src_acc_post10,precision,recall\n";
  for (const auto& row : rows) {
    const Summary& s = row.summary;
    out << row.defense << ',' << detail::fmt_double(row.ratio) << ',' << detail::fmt_double(s.te)
        << ',' << detail::fmt_double(s.te * 10.0) << ',' << detail::fmt_double(s.all_acc) << ','
        << detail::fmt_opt(s.src_acc) << ',' << detail::fmt_opt(s.asr) << ','
        << (std::isnan(s.cv_src_acc) ? "nan" : detail::fmt_double(s.cv_src_acc)) << ','
        << (std::isnan(s.cv_src_acc_post10) ? "nan" : detail::fmt_double(s.cv_src_acc_post10))
        << ',' << detail::fmt_opt(s.precision) << ',' << detail::fmt_opt(s.recall) << '\n';
  }
  return out.str();
}

inline std::string features_to_csv(const nlohmann::json& config_echo,
                                   const std::vector<FeatureDumpRow>& rows) {
  std::ostringstream out;
  out << "# config: " << config_echo.dump() << "\n";
  out << "round,peer,attacker,cluster,flagged,pca_x,pca_y";
  const std::size_t dim = rows.empty() ? 0 : rows.front().features.size();
  for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
  out << "\n";
  for (const auto& r : rows) {
    out << r.round << ',' << r.peer << ',' << (r.attacker ? 1 : 0) << ',' << r.cluster << ','
        << (r.flagged ? 1 : 0) << ',' << detail::fmt_double(r.pca_x) << ','
        << detail::fmt_double(r.pca_y);
    for (double f : r.features) out << ',' << detail::fmt_double(f);
    out << '\n';
  }
  return out.str();
}

// Write to a temp file in the destination directory and rename into place,
// so a failed run never leaves a partial file behind.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lfshield
