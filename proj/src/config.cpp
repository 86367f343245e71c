#include "famguard/config.hpp"

#include <fstream>

#include "famguard/errors.hpp"

namespace famguard {

std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::weighted: return "weighted";
    case Aggregator::min: return "min";
    case Aggregator::most_infrequent: return "most_infrequent";
  }
  return "weighted";
}

std::string to_string(ThetaOrder t) {
  switch (t) {
    case ThetaOrder::ascending: return "ascending";
    case ThetaOrder::descending: return "descending";
    case ThetaOrder::position: return "position";
  }
  return "ascending";
}

std::string to_string(KlDirection d) {
  switch (d) {
    case KlDirection::forward: return "forward";
    case KlDirection::reverse: return "reverse";
    case KlDirection::symmetric: return "symmetric";
  }
  return "forward";
}

Aggregator parse_aggregator(std::string_view s) {
  if (s == "weighted") return Aggregator::weighted;
  if (s == "min") return Aggregator::min;
  if (s == "most_infrequent") return Aggregator::most_infrequent;
  throw UsageError("unknown aggregator \"" + std::string(s) + "\" (expected weighted|min|most_infrequent)");
}

ThetaOrder parse_theta_order(std::string_view s) {
  if (s == "ascending") return ThetaOrder::ascending;
  if (s == "descending") return ThetaOrder::descending;
  if (s == "position") return ThetaOrder::position;
  throw UsageError("unknown theta order \"" + std::string(s) + "\" (expected ascending|descending|position)");
}

KlDirection parse_kl_direction(std::string_view s) {
  if (s == "forward") return KlDirection::forward;
  if (s == "reverse") return KlDirection::reverse;
  if (s == "symmetric") return KlDirection::symmetric;
  throw UsageError("unknown KL direction \"" + std::string(s) + "\" (expected forward|reverse|symmetric)");
}

void Config::validate() const {
  if (t_b < 1) throw UsageError("t_b must be >= 1");
  if (l_b < 1) throw UsageError("l_b must be >= 1");
  if (l_f < 1) throw UsageError("l_f must be >= 1");
  if (t_s < 2) throw UsageError("t_s must be >= 2");
  if (!(r > 1.0)) throw UsageError("r must be > 1");
  if (!(h_norm > 0.0)) throw UsageError("h_norm must be > 0");
  if (mask_token.empty()) throw UsageError("mask_token must be non-empty");
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
}

nlohmann::json Config::to_json() const {
  return {{"t_b", t_b},
          {"l_b", l_b},
          {"l_f", l_f},
          {"t_s", t_s},
          {"r", r},
          {"h_norm", h_norm},
          {"mask_token", mask_token},
          {"common_cutoff", common_cutoff},
          {"seed", seed},
          {"temperature", temperature},
          {"aggregator", to_string(aggregator)},
          {"score", to_string(score)},
          {"theta_order", to_string(theta_order)},
          {"kl_direction", to_string(kl_direction)},
          {"grouping", grouping},
          {"filtering", filtering},
          {"ranking", ranking}};
}

void Config::merge_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "t_b") t_b = value.get<std::size_t>();
      else if (key == "l_b") l_b = value.get<std::size_t>();
      else if (key == "l_f") l_f = value.get<std::size_t>();
      else if (key == "t_s") t_s = value.get<std::size_t>();
      else if (key == "r") r = value.get<double>();
      else if (key == "h_norm") h_norm = value.get<double>();
      else if (key == "mask_token") mask_token = value.get<std::string>();
      else if (key == "common_cutoff") common_cutoff = value.get<std::size_t>();
      else if (key == "seed") seed = value.get<std::uint64_t>();
      else if (key == "temperature") temperature = value.get<double>();
      else if (key == "aggregator") aggregator = parse_aggregator(value.get<std::string>());
      else if (key == "score") score = parse_score_mode(value.get<std::string>());
      else if (key == "theta_order") theta_order = parse_theta_order(value.get<std::string>());
      else if (key == "kl_direction") kl_direction = parse_kl_direction(value.get<std::string>());
      else if (key == "grouping") grouping = value.get<bool>();
      else if (key == "filtering") filtering = value.get<bool>();
      else if (key == "ranking") ranking = value.get<bool>();
      else throw UsageError("unknown config key \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  Config cfg;
  try {
    cfg.merge_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace famguard
