#pragma once

#include <string>

#include <json.hpp>

#include "famguard/lm.hpp"

namespace testing_support {

inline std::string fixture(const std::string& name) { return std::string(FAMGUARD_FIXTURE_DIR) + "/" + name; }

inline famguard::ModelPtr table(const nlohmann::json& doc) {
  return famguard::build_table_lm(famguard::parse_table_lm_spec(doc));
}

inline famguard::TokenSeq ids(const famguard::LanguageModel& m, const std::string& text) { return m.tokenize(text); }

}  // namespace testing_support
