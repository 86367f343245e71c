#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace famguard {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
/// Natural-log next-token probabilities, one per vocabulary entry; -inf marks an impossible token.
using LogProbs = std::vector<double>;

/// Ordered token surfaces plus the end-of-sequence id.
class Vocab {
 public:
  /// Throws ValidationError unless there are >= 2 unique surfaces and `eos` is one of them.
  Vocab(std::vector<std::string> tokens, std::string_view eos);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId eos_id() const noexcept { return eos_id_; }
  const std::string& surface(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::optional<TokenId> find(std::string_view surface) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId eos_id_ = 0;
};

/// Linear next-token probabilities. Valid when non-negative and summing to 1 within 1e-9.
struct NextTokenDistribution {
  std::vector<double> probs;

  /// Returns an empty string when valid, otherwise the reason.
  std::string validate(std::size_t vocab_size, double tolerance = 1e-9) const;
};

/// Token-level model contract consumed by every decoder and scorer.
///
/// Implementations are immutable after construction and must be safe to query from several
/// threads at once. Public entry points validate token ids and forward to the protected hooks.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual TokenId eos_id() const = 0;
  virtual TokenSeq tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(std::span<const TokenId> seq) const = 0;

  /// Throws ContractViolation when a context id is outside the vocabulary.
  LogProbs next_logprobs(std::span<const TokenId> context) const;
  /// One row per context. Remote models answer the whole batch in one round trip.
  std::vector<LogProbs> next_logprobs_batch(std::span<const TokenSeq> contexts) const;
  NextTokenDistribution next_distribution(std::span<const TokenId> context) const;

  void check_context(std::span<const TokenId> context) const;

 protected:
  virtual LogProbs do_next_logprobs(std::span<const TokenId> context) const = 0;
  virtual std::vector<LogProbs> do_next_logprobs_batch(std::span<const TokenSeq> contexts) const;
  /// Defaults to exponentiating do_next_logprobs.
  virtual NextTokenDistribution do_next_distribution(std::span<const TokenId> context) const;
};

using ModelPtr = std::shared_ptr<const LanguageModel>;

// ---------------------------------------------------------------------------
// Toy tokenization: whitespace split with every ASCII punctuation character as its own word.

std::vector<std::string> split_words(std::string_view text);

/// Joins words with single spaces, gluing punctuation to its neighbours so that
/// join_words(split_words(t)) equals t up to whitespace for ordinary prose.
std::string join_words(std::span<const std::string> words);

/// Shared closed-vocabulary tokenizer for the built-in toy models.
class ToyModel : public LanguageModel {
 public:
  explicit ToyModel(Vocab vocab) : vocab_(std::move(vocab)) {}

  const Vocab& vocab() const noexcept { return vocab_; }
  std::size_t vocab_size() const override { return vocab_.size(); }
  TokenId eos_id() const override { return vocab_.eos_id(); }
  /// Throws OovError naming the first word missing from the vocabulary.
  TokenSeq tokenize(std::string_view text) const override;
  std::string detokenize(std::span<const TokenId> seq) const override;

 private:
  Vocab vocab_;
};

// ---------------------------------------------------------------------------
// Table model

struct TableLmSpec {
  Vocab vocab;
  std::map<TokenSeq, NextTokenDistribution> rows;
  NextTokenDistribution fallback;
};

/// Exact-context lookup table. Contexts without a row get the fallback distribution.
class TableLm final : public ToyModel {
 public:
  /// Throws ValidationError naming the offending context when a row is invalid.
  explicit TableLm(TableLmSpec spec);

 protected:
  LogProbs do_next_logprobs(std::span<const TokenId> context) const override;
  NextTokenDistribution do_next_distribution(std::span<const TokenId> context) const override;

 private:
  struct Row {
    NextTokenDistribution linear;
    LogProbs log;
  };
  const Row& lookup(std::span<const TokenId> context) const;

  std::map<TokenSeq, Row> rows_;
  Row fallback_;
};

ModelPtr build_table_lm(TableLmSpec spec);

/// Parses {"vocab": [...], "eos": "<eos>", "rows": [{"context": [...], "dist": {...}}], "fallback": {...}}.
/// Tokens omitted from a "dist" object have probability 0.
TableLmSpec parse_table_lm_spec(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// N-gram model

struct NgramLmSpec {
  Vocab vocab;
  int order = 1;
  std::vector<TokenSeq> corpus;
  double smoothing_alpha = 1.0;
};

/// Additive-smoothed n-gram model:
///   P(w | h) = (count(h, w) + alpha) / (count(h) + alpha * |V|)
/// with histories shorter than order-1 left-padded by a reserved begin marker.
class NgramLm final : public ToyModel {
 public:
  explicit NgramLm(NgramLmSpec spec);

  int order() const noexcept { return order_; }

 protected:
  LogProbs do_next_logprobs(std::span<const TokenId> context) const override;

 private:
  TokenSeq history_of(std::span<const TokenId> context) const;

  int order_;
  double alpha_;
  TokenId begin_marker_;
  std::map<TokenSeq, std::vector<double>> counts_;
  std::map<TokenSeq, double> totals_;
};

ModelPtr build_ngram_lm(NgramLmSpec spec);

/// Parses {"type": "ngram", "order": n, "alpha": a, "eos": "<eos>", "vocab": [...]?, "corpus": ["text", ...]}.
/// Each corpus line is split with split_words and terminated with eos. Without "vocab", the
/// vocabulary is every corpus word in order of first appearance followed by eos.
NgramLmSpec parse_ngram_lm_spec(const nlohmann::json& doc);

/// Loads a toy model file, dispatching on its "type" field ("table" when absent).
ModelPtr load_toy_lm(const std::filesystem::path& path);

}  // namespace famguard
