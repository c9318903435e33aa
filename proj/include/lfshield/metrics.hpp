#pragma once

// Evaluation: test error, overall/source-class accuracy, attack success
// rate, coefficient of variation, last-10-round summaries and defense
// precision/recall bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "lfshield/data.hpp"
#include "lfshield/micro_nn.hpp"

namespace lfshield {

struct EvalResult {
  double te = 0.0;
  double all_acc = 0.0;
  std::optional<double> src_acc;  // absent when the test set has no source examples
  std::optional<double> asr;
};

struct RoundReport {
  std::size_t round = 0;
  double te = 0.0;
  double all_acc = 0.0;
  std::optional<double> src_acc;
  std::optional<double> asr;
  std::vector<std::size_t> excluded;   // sorted peer ids
  std::vector<std::size_t> attackers;  // sorted, ground truth
  std::optional<double> precision;     // absent when nothing was flagged
  std::optional<double> recall;        // absent when there are no attackers
  double defense_ms = 0.0;             // logged, never serialized into reports
};

inline std::size_t predict(const ModelParams& params, std::span<const double> x) {
  const ForwardTrace t = forward(params, x);
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.probs.size(); ++i)
    if (t.probs[i] > t.probs[best]) best = i;
  return best;
}

inline EvalResult evaluate(const ModelParams& params, const Dataset& test, int source_class,
                           int target_class) {
  if (test.n() == 0) throw std::invalid_argument("evaluate: empty test set");
  EvalResult r;
  std::size_t correct = 0, src_total = 0, src_correct = 0, src_as_target = 0;
  for (std::size_t i = 0; i < test.n(); ++i) {
    const ForwardTrace t = forward(params, test.features.row(i));
    const auto label = static_cast<std::size_t>(test.labels[i]);
    r.te += cross_entropy(t.probs, one_hot(test.classes, label));
    std::size_t pred = 0;
    for (std::size_t c = 1; c < t.probs.size(); ++c)
      if (t.probs[c] > t.probs[pred]) pred = c;
    if (pred == label) ++correct;
    if (test.labels[i] == source_class) {
      ++src_total;
      if (pred == label) ++src_correct;
      if (pred == static_cast<std::size_t>(target_class)) ++src_as_target;
    }
  }
  r.te /= static_cast<double>(test.n());
  r.all_acc = static_cast<double>(correct) / static_cast<double>(test.n());
  if (src_total > 0) {
    r.src_acc = static_cast<double>(src_correct) / static_cast<double>(src_total);
    r.asr = static_cast<double>(src_as_target) / static_cast<double>(src_total);
  }
  return r;
}

// Population standard deviation over the mean. A non-positive mean yields
// the NaN sentinel.
inline double coefficient_of_variation(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("coefficient_of_variation: empty series");
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(series.size());
  if (mean <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  double var = 0.0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= static_cast<double>(series.size());
  return std::sqrt(var) / mean;
}

inline std::optional<double> defense_precision(std::span<const std::size_t> flagged,
                                               std::span<const std::size_t> attackers) {
  if (flagged.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (std::size_t f : flagged)
    if (std::binary_search(attackers.begin(), attackers.end(), f)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(flagged.size());
}

inline std::optional<double> defense_recall(std::span<const std::size_t> flagged,
                                            std::span<const std::size_t> attackers) {
  if (attackers.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (std::size_t a : attackers)
    if (std::binary_search(flagged.begin(), flagged.end(), a)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(attackers.size());
}

struct Summary {
  std::size_t rounds = 0;
  std::size_t tail = 0;  // how many final rounds the means cover
  double te = 0.0;
  double all_acc = 0.0;
  std::optional<double> src_acc;
  std::optional<double> asr;
  double cv_src_acc = std::numeric_limits<double>::quiet_NaN();
  double cv_src_acc_post10 = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> precision;
  std::optional<double> recall;
};

namespace detail {

inline std::optional<double> mean_present(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& x : xs)
    if (x) {
      sum += *x;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace detail

// Means over the last 10 rounds (fewer if the run is shorter), CV of the
// source accuracy over the whole run plus a post-round-10 variant.
inline Summary summarize(const std::vector<RoundReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("summarize: no reports");
  Summary s;
  s.rounds = reports.size();
  s.tail = std::min<std::size_t>(10, reports.size());

  std::vector<std::optional<double>> src, asr, prec, rec;
  for (std::size_t i = reports.size() - s.tail; i < reports.size(); ++i) {
    s.te += reports[i].te;
    s.all_acc += reports[i].all_acc;
    src.push_back(reports[i].src_acc);
    asr.push_back(reports[i].asr);
  }
  s.te /= static_cast<double>(s.tail);
  s.all_acc /= static_cast<double>(s.tail);
  s.src_acc = detail::mean_present(src);
  s.asr = detail::mean_present(asr);

  for (const auto& r : reports) {
    prec.push_back(r.precision);
    rec.push_back(r.recall);
  }
  s.precision = detail::mean_present(prec);
  s.recall = detail::mean_present(rec);

  std::vector<double> series, series_post10;
  for (const auto& r : reports)
    if (r.src_acc) {
      series.push_back(*r.src_acc);
      if (r.round >= 10) series_post10.push_back(*r.src_acc);
    }
  if (!series.empty()) s.cv_src_acc = coefficient_of_variation(series);
  if (!series_post10.empty()) s.cv_src_acc_post10 = coefficient_of_variation(series_post10);
  return s;
}

}  // namespace lfshield
