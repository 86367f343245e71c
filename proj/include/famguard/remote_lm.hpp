#pragma once

#include <string>

#include "famguard/http.hpp"
#include "famguard/lm.hpp"

namespace famguard {

/// Environment variable naming the default inference endpoint.
inline constexpr const char* kLmUrlEnv = "FAMGUARD_LM_URL";

/// Client for an inference server speaking the famguard wire protocol:
///
///   GET  /v1/vocab       -> {"size": int, "eos_id": int}
///   POST /v1/tokenize    {"text": s}         -> {"tokens": [int]}
///   POST /v1/detokenize  {"tokens": [int]}   -> {"text": s}
///   POST /v1/logprobs    {"batch": [[int]]}  -> {"logprobs": [[float; size]]}
///
/// One /v1/logprobs round trip answers a whole decoding step. Null entries in a logprob row
/// are read as -inf.
class RemoteLm final : public LanguageModel {
 public:
  /// Fetches the vocabulary descriptor; throws TransportError/ProtocolError on failure.
  explicit RemoteLm(HttpJsonClient client);

  std::size_t vocab_size() const override { return size_; }
  TokenId eos_id() const override { return eos_id_; }
  TokenSeq tokenize(std::string_view text) const override;
  std::string detokenize(std::span<const TokenId> seq) const override;

 protected:
  LogProbs do_next_logprobs(std::span<const TokenId> context) const override;
  std::vector<LogProbs> do_next_logprobs_batch(std::span<const TokenSeq> contexts) const override;

 private:
  HttpJsonClient client_;
  std::size_t size_ = 0;
  TokenId eos_id_ = 0;
};

ModelPtr connect_remote_lm(const std::string& base_url);

}  // namespace famguard
