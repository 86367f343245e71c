#include "famguard/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "famguard/errors.hpp"
#include "famguard/log.hpp"
#include "famguard/parallel.hpp"
#include "famguard/text.hpp"

namespace famguard {

std::string to_string(Label l) { return l == Label::familiar ? "FAMILIAR" : "UNFAMILIAR"; }

Label parse_label(std::string_view s) {
  const auto u = text::ascii_upper(s);
  if (u == "FAMILIAR") return Label::familiar;
  if (u == "UNFAMILIAR") return Label::unfamiliar;
  throw ValidationError("unknown label \"" + std::string(s) + "\" (expected FAMILIAR or UNFAMILIAR)");
}

// ---------------------------------------------------------------------------
// Metrics

double auc(std::span<const LabeledScore> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });

  // Sum of midranks of the positives, ties sharing their average rank.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]].score == scores[order[i]].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (scores[order[k]].label == Label::familiar) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUC undefined: both labels are required");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

AccF1 acc_f1(std::span<const LabeledScore> scores, double h) {
  if (scores.empty()) throw ContractViolation("acc_f1: no scores");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (const auto& s : scores) {
    const bool predicted_unfamiliar = s.score < h;
    const bool unfamiliar = s.label == Label::unfamiliar;
    if (predicted_unfamiliar == unfamiliar) ++correct;
    if (predicted_unfamiliar && unfamiliar) ++tp;
    if (predicted_unfamiliar && !unfamiliar) ++fp;
    if (!predicted_unfamiliar && unfamiliar) ++fn;
  }
  AccF1 out;
  out.acc = static_cast<double>(correct) / static_cast<double>(scores.size());
  out.f1 = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractViolation("pearson: inputs differ in length");
  if (x.size() < 2) throw ContractViolation("pearson: at least two pairs are required");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractViolation("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractViolation("quantile: q must be in [0, 1]");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? sorted[lo] : sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

EvalMetrics evaluate(std::span<const LabeledScore> scores, double h) {
  EvalMetrics m;
  m.n = scores.size();
  m.threshold_used = h;
  m.auc = auc(scores);
  const auto af = acc_f1(scores, h);
  m.acc = af.acc;
  m.f1 = af.f1;

  std::vector<double> predicted, gold;
  for (const auto& s : scores) {
    if (!s.gold_score) continue;
    predicted.push_back(s.score);
    gold.push_back(*s.gold_score);
  }
  if (gold.empty()) {
    log::warn("pearson_skipped", {{"reason", "no gold scores"}});
  } else {
    if (gold.size() < scores.size()) {
      log::warn("pearson_partial_gold", {{"with_gold", gold.size()}, {"total", scores.size()}});
    }
    try {
      m.pearson = pearson(predicted, gold);
    } catch (const Error& e) {
      log::warn("pearson_skipped", {{"reason", e.what()}});
    }
  }
  return m;
}

std::vector<RocPoint> roc_curve(std::span<const LabeledScore> scores) {
  std::size_t n_pos = 0;
  for (const auto& s : scores) n_pos += s.label == Label::familiar;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("ROC undefined: both labels are required");

  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<RocPoint> points{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].score == sorted[i].score; ++j) {
      (sorted[j].label == Label::familiar ? tp : fp) += 1;
    }
    points.push_back({sorted[i].score, static_cast<double>(fp) / static_cast<double>(n_neg),
                      static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return points;
}

std::string roc_csv(std::span<const RocPoint> points) {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : points) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Calibration

std::string to_string(CalibrationMode m) { return m == CalibrationMode::percentile ? "percentile" : "raw"; }

CalibrationMode parse_calibration_mode(std::string_view s) {
  if (s == "percentile") return CalibrationMode::percentile;
  if (s == "raw") return CalibrationMode::raw;
  throw UsageError("unknown calibration mode \"" + std::string(s) + "\" (expected percentile or raw)");
}

std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t b) {
  const auto bb = static_cast<std::uint64_t>(b);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(bb), static_cast<std::uint32_t>(bb >> 32)};
  std::mt19937_64 engine(seq);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) {
    // Multiply-shift maps a 64-bit draw onto [0, n) without modulo.
    i = static_cast<std::size_t>((static_cast<unsigned __int128>(engine()) * n) >> 64);
  }
  return idx;
}

namespace {

double resample_statistic(std::span<const double> scores, std::size_t b, double q, std::uint64_t seed) {
  const auto idx = bootstrap_indices(scores.size(), seed, b);
  std::vector<double> sample(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) sample[j] = scores[idx[j]];
  std::sort(sample.begin(), sample.end());
  return quantile_sorted(sample, q);
}

void check_scores(std::span<const double> scores) {
  if (scores.size() < kMinCalibrationScores) {
    throw ValidationError("insufficient calibration data: " + std::to_string(scores.size()) + " scores, need at least " +
                          std::to_string(kMinCalibrationScores));
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("calibration scores must be finite");
  }
}

}  // namespace

std::vector<double> bootstrap_statistics_serial(std::span<const double> scores, std::size_t n_resamples, double q,
                                                std::uint64_t seed) {
  std::vector<double> stats(n_resamples);
  for (std::size_t b = 0; b < n_resamples; ++b) stats[b] = resample_statistic(scores, b, q, seed);
  return stats;
}

std::vector<double> bootstrap_statistics_parallel(std::span<const double> scores, std::size_t n_resamples, double q,
                                                  std::uint64_t seed, int jobs) {
  std::vector<double> stats(n_resamples);
  parallel_for(n_resamples, jobs, [&](std::size_t b) { stats[b] = resample_statistic(scores, b, q, seed); });
  return stats;
}

CalibrationResult bootstrap_threshold(std::span<const double> basic_scores, const BootstrapOptions& options) {
  check_scores(basic_scores);
  if (!(options.q >= 0.0 && options.q <= 1.0)) throw UsageError("quantile q must be in [0, 1]");
  if (!(options.c > 0.0 && options.c <= 1.0)) throw UsageError("confidence c must be in (0, 1]");

  CalibrationResult r;
  r.seed = options.seed;
  r.q = options.q;
  r.c = options.c;
  r.mode = options.mode;
  r.n_scores = basic_scores.size();

  std::vector<double> dist;
  if (options.mode == CalibrationMode::percentile) {
    if (options.n_resamples == 0) throw UsageError("n_resamples must be >= 1");
    r.n_resamples = options.n_resamples;
    dist = options.jobs > 1
               ? bootstrap_statistics_parallel(basic_scores, options.n_resamples, options.q, options.seed, options.jobs)
               : bootstrap_statistics_serial(basic_scores, options.n_resamples, options.q, options.seed);
  } else {
    dist.assign(basic_scores.begin(), basic_scores.end());
  }
  std::sort(dist.begin(), dist.end());
  const double tail = (1.0 - options.c) / 2.0;
  r.interval_low = quantile_sorted(dist, tail);
  r.interval_high = quantile_sorted(dist, 1.0 - tail);
  r.threshold = r.interval_low == r.interval_high ? r.interval_low : (r.interval_low + r.interval_high) / 2.0;
  return r;
}

nlohmann::json to_json(const EvalMetrics& m) {
  nlohmann::json j = {{"auc", m.auc},
                      {"acc", m.acc},
                      {"f1", m.f1},
                      {"pearson", nullptr},
                      {"threshold_used", m.threshold_used},
                      {"n", m.n}};
  if (m.pearson) j["pearson"] = *m.pearson;
  return j;
}

nlohmann::json to_json(const CalibrationResult& c) {
  return {{"threshold", c.threshold},     {"interval_low", c.interval_low}, {"interval_high", c.interval_high},
          {"n_resamples", c.n_resamples}, {"seed", c.seed},                 {"q", c.q},
          {"c", c.c},                     {"mode", to_string(c.mode)},      {"n_scores", c.n_scores}};
}

CalibrationResult calibration_from_json(const nlohmann::json& doc) {
  try {
    CalibrationResult c;
    c.threshold = doc.at("threshold").get<double>();
    c.interval_low = doc.value("interval_low", c.threshold);
    c.interval_high = doc.value("interval_high", c.threshold);
    c.n_resamples = doc.value("n_resamples", std::size_t{0});
    c.seed = doc.value("seed", std::uint64_t{0});
    c.q = doc.value("q", 0.0);
    c.c = doc.value("c", 0.0);
    c.mode = parse_calibration_mode(doc.value("mode", std::string("percentile")));
    c.n_scores = doc.value("n_scores", std::size_t{0});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed calibration entry: ") + e.what());
  }
}

}  // namespace famguard
