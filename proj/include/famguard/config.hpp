#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "famguard/decoder.hpp"

namespace famguard {

enum class Aggregator { weighted, min, most_infrequent };
/// How concepts are ranked for the geometric weights: by frequency score (rarest first or
/// most common first) or by position in the instruction.
enum class ThetaOrder { ascending, descending, position };
enum class KlDirection { forward, reverse, symmetric };

std::string to_string(Aggregator a);
std::string to_string(ThetaOrder t);
std::string to_string(KlDirection d);
Aggregator parse_aggregator(std::string_view s);
ThetaOrder parse_theta_order(std::string_view s);
KlDirection parse_kl_direction(std::string_view s);

/// Every tunable of the scoring pipeline. Defaults are the reference settings.
struct Config {
  std::size_t t_b = 30;      ///< constrained beam size
  std::size_t l_b = 15;      ///< max tokens of a concept inference response
  std::size_t l_f = 200;     ///< max tokens of an explanation / baseline response
  std::size_t t_s = 10;      ///< samples for the consistency baselines
  double r = 2.0;            ///< aggregation decay ratio
  double h_norm = 100.0;     ///< frequency-rank normalizer H
  std::string mask_token = "...";
  std::size_t common_cutoff = 10000;
  std::uint64_t seed = 42;
  double temperature = 1.0;
  Aggregator aggregator = Aggregator::weighted;
  ScoreMode score = ScoreMode::mean_logprob;
  ThetaOrder theta_order = ThetaOrder::ascending;
  KlDirection kl_direction = KlDirection::forward;
  bool grouping = true;
  bool filtering = true;
  bool ranking = true;

  /// Throws UsageError on out-of-range values.
  void validate() const;

  nlohmann::json to_json() const;
  /// Overlays the keys present in `doc` onto this config. Unknown keys are a UsageError.
  void merge_json(const nlohmann::json& doc);
  static Config load(const std::filesystem::path& path);
};

}  // namespace famguard
