#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace famguard {

enum class Label { familiar, unfamiliar };

std::string to_string(Label l);
/// Accepts FAMILIAR / UNFAMILIAR in any case. Throws ValidationError otherwise.
Label parse_label(std::string_view s);

struct LabeledScore {
  std::string id;
  double score = 0.0;
  Label label = Label::familiar;
  std::optional<double> gold_score;  ///< annotated familiarity on the 1-9 scale
};

struct EvalMetrics {
  double auc = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  std::optional<double> pearson;
  double threshold_used = 0.0;
  std::size_t n = 0;
};

/// Mann-Whitney AUC with FAMILIAR as the positive class; ties count one half.
/// Throws ValidationError("AUC undefined") unless both labels occur.
double auc(std::span<const LabeledScore> scores);

struct AccF1 {
  double acc = 0.0;
  double f1 = 0.0;
};

/// A score below h predicts UNFAMILIAR. F1 takes UNFAMILIAR as the positive class and is 0
/// when there are no true positives.
AccF1 acc_f1(std::span<const LabeledScore> scores, double h);

/// Sample Pearson correlation. Throws ValidationError("correlation undefined") on a zero
/// variance side, and ContractViolation on mismatched or too short inputs.
double pearson(std::span<const double> x, std::span<const double> y);

/// Linear interpolation between order statistics of a sorted sample (q in [0, 1]).
double quantile_sorted(std::span<const double> sorted, double q);

/// AUC, ACC, F1, and Pearson against gold scores when any are present.
EvalMetrics evaluate(std::span<const LabeledScore> scores, double h);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC points for "score >= threshold predicts FAMILIAR", one per distinct score plus (0, 0).
std::vector<RocPoint> roc_curve(std::span<const LabeledScore> scores);
std::string roc_csv(std::span<const RocPoint> points);

enum class CalibrationMode {
  percentile,  ///< bootstrap interval of the q-quantile statistic
  raw,         ///< central c interval of the scores themselves
};

std::string to_string(CalibrationMode m);
CalibrationMode parse_calibration_mode(std::string_view s);

struct BootstrapOptions {
  std::size_t n_resamples = 1000;
  double q = 0.05;
  double c = 0.95;
  std::uint64_t seed = 42;
  CalibrationMode mode = CalibrationMode::percentile;
  int jobs = 1;
};

struct CalibrationResult {
  double threshold = 0.0;
  double interval_low = 0.0;
  double interval_high = 0.0;
  std::size_t n_resamples = 0;
  std::uint64_t seed = 0;
  double q = 0.0;
  double c = 0.0;
  CalibrationMode mode = CalibrationMode::percentile;
  std::size_t n_scores = 0;
};

inline constexpr std::size_t kMinCalibrationScores = 10;

/// Index of the j-th draw of resample b. Each resample owns its generator, seeded from
/// (seed, b), so any partition of resamples across threads yields the same draws.
std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t b);

/// q-quantile of every resample, in resample order. Serial reference.
std::vector<double> bootstrap_statistics_serial(std::span<const double> scores, std::size_t n_resamples, double q,
                                                std::uint64_t seed);
/// Same statistics computed on `jobs` OpenMP threads.
std::vector<double> bootstrap_statistics_parallel(std::span<const double> scores, std::size_t n_resamples, double q,
                                                  std::uint64_t seed, int jobs);

/// Threshold h as the midpoint of the calibration interval.
/// Throws ValidationError("insufficient calibration data") below kMinCalibrationScores.
CalibrationResult bootstrap_threshold(std::span<const double> basic_scores, const BootstrapOptions& options = {});

nlohmann::json to_json(const EvalMetrics& m);
nlohmann::json to_json(const CalibrationResult& c);
CalibrationResult calibration_from_json(const nlohmann::json& doc);

}  // namespace famguard
