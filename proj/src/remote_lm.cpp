#include "famguard/remote_lm.hpp"

#include <limits>

#include "famguard/errors.hpp"

namespace famguard {
namespace {

template <typename T>
T field(const nlohmann::json& doc, const char* key, const char* endpoint) {
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string(endpoint) + ": bad or missing \"" + key + "\": " + e.what());
  }
}

}  // namespace

RemoteLm::RemoteLm(HttpJsonClient client) : client_(std::move(client)) {
  const auto doc = client_.get("/v1/vocab");
  const auto size = field<long long>(doc, "size", "/v1/vocab");
  const auto eos = field<long long>(doc, "eos_id", "/v1/vocab");
  if (size < 2 || eos < 0 || eos >= size) {
    throw ProtocolError("/v1/vocab: invalid size " + std::to_string(size) + " / eos_id " + std::to_string(eos));
  }
  size_ = static_cast<std::size_t>(size);
  eos_id_ = static_cast<TokenId>(eos);
}

TokenSeq RemoteLm::tokenize(std::string_view text) const {
  const auto doc = client_.post("/v1/tokenize", {{"text", text}});
  auto tokens = field<TokenSeq>(doc, "tokens", "/v1/tokenize");
  try {
    check_context(tokens);
  } catch (const ContractViolation& e) {
    throw ProtocolError(std::string("/v1/tokenize: ") + e.what());
  }
  return tokens;
}

std::string RemoteLm::detokenize(std::span<const TokenId> seq) const {
  check_context(seq);
  const auto doc = client_.post("/v1/detokenize", {{"tokens", TokenSeq(seq.begin(), seq.end())}});
  return field<std::string>(doc, "text", "/v1/detokenize");
}

LogProbs RemoteLm::do_next_logprobs(std::span<const TokenId> context) const {
  std::vector<TokenSeq> one{TokenSeq(context.begin(), context.end())};
  return std::move(do_next_logprobs_batch(one).front());
}

std::vector<LogProbs> RemoteLm::do_next_logprobs_batch(std::span<const TokenSeq> contexts) const {
  if (contexts.empty()) return {};
  nlohmann::json batch = nlohmann::json::array();
  for (const auto& c : contexts) batch.push_back(c);
  const auto doc = client_.post("/v1/logprobs", {{"batch", std::move(batch)}});
  if (!doc.contains("logprobs") || !doc["logprobs"].is_array()) {
    throw ProtocolError("/v1/logprobs: missing \"logprobs\" array");
  }
  const auto& rows = doc["logprobs"];
  if (rows.size() != contexts.size()) {
    throw ProtocolError("/v1/logprobs: expected " + std::to_string(contexts.size()) + " rows, got " +
                        std::to_string(rows.size()));
  }
  std::vector<LogProbs> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != size_) {
      throw ProtocolError("/v1/logprobs: row length does not match vocabulary size " + std::to_string(size_));
    }
    LogProbs lp(size_);
    for (std::size_t i = 0; i < size_; ++i) {
      if (row[i].is_null()) {
        lp[i] = -std::numeric_limits<double>::infinity();
      } else if (row[i].is_number()) {
        lp[i] = row[i].get<double>();
      } else {
        throw ProtocolError("/v1/logprobs: non-numeric entry");
      }
    }
    out.push_back(std::move(lp));
  }
  return out;
}

ModelPtr connect_remote_lm(const std::string& base_url) {
  return std::make_shared<RemoteLm>(HttpJsonClient(base_url));
}

}  // namespace famguard
