#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "famguard/lm.hpp"

namespace famguard {

/// How a response's per-token log probabilities collapse into one probability score.
enum class ScoreMode {
  mean_logprob,  ///< exp(mean log p), length-normalized
  joint,         ///< exp(sum log p)
};

std::string to_string(ScoreMode mode);
/// Accepts "mean_logprob" and "joint"; throws UsageError otherwise.
ScoreMode parse_score_mode(std::string_view name);

/// Throws ContractViolation on an empty sequence.
double sequence_score(std::span<const double> logprobs, ScoreMode mode);

/// A generated continuation. `tokens` excludes the prompt and includes a terminal eos when one
/// was emitted. Response scores are computed over content_logprobs(), i.e. without that eos.
struct DecodedResponse {
  TokenSeq tokens;
  std::vector<double> token_probs;
  std::vector<double> token_logprobs;
  bool finished = false;  ///< eos emitted before max_len

  std::span<const double> content_logprobs() const;
  TokenSeq content_tokens() const;
};

/// Argmax decoding, lowest token id on ties. Stops after eos or max_len tokens.
DecodedResponse greedy_search(const LanguageModel& model, std::span<const TokenId> context, std::size_t max_len);

/// k ancestral samples at the given temperature. Sample i draws from its own mt19937_64
/// stream seeded with (seed, i), so results depend only on the arguments.
std::vector<DecodedResponse> sample_k(const LanguageModel& model, std::span<const TokenId> context,
                                      std::size_t max_len, std::size_t k, double temperature, std::uint64_t seed);

struct ForcedDecode {
  std::vector<double> token_probs;
  std::vector<double> token_logprobs;
  /// Full next-token log distribution at each step; filled only when capture_full is set.
  std::vector<LogProbs> distributions;
};

/// Scores a fixed target continuation step by step under the model.
ForcedDecode force_decode(const LanguageModel& model, std::span<const TokenId> context,
                          std::span<const TokenId> target, bool capture_full);

/// Alternative surface forms of one concept; a hypothesis satisfies the set by containing any
/// one of them as a contiguous run.
class ConstraintSet {
 public:
  /// Drops empty and duplicate variants; throws ContractViolation unless 1..3 remain.
  explicit ConstraintSet(std::vector<TokenSeq> variants);

  const std::vector<TokenSeq>& variants() const noexcept { return variants_; }
  std::size_t max_length() const;
  std::size_t min_length() const;

 private:
  std::vector<TokenSeq> variants_;
};

struct BeamHypothesis {
  TokenSeq tokens;
  std::vector<double> token_logprobs;
  /// Sum of content-token log probabilities (a terminal eos is not counted).
  double cumulative_logprob = 0.0;
  /// Per variant: length of the longest variant prefix that is a suffix of `tokens`.
  std::vector<std::size_t> constraint_progress;
  bool satisfied = false;
  bool finished = false;
};

struct ScoredResponse {
  DecodedResponse response;
  double score = 0.0;
};

struct ConstrainedSearchOptions {
  std::size_t beam_size = 30;
  std::size_t max_len = 15;
  ScoreMode score = ScoreMode::mean_logprob;
};

struct ConstrainedSearchResult {
  /// Satisfied, finished hypotheses, best first; at most beam_size.
  std::vector<ScoredResponse> hypotheses;
  std::size_t effective_max_len = 0;
  std::vector<std::string> warnings;

  /// Highest score, or 0 when nothing satisfied the constraint.
  double best_score() const { return hypotheses.empty() ? 0.0 : hypotheses.front().score; }
};

/// Banked constrained beam search.
///
/// Hypotheses live in banks indexed by their best constraint progress, with one extra bank for
/// hypotheses that already contain a full variant. Every step expands each live hypothesis with
/// its beam_size most probable tokens plus, while unsatisfied, the next token of every variant
/// (continuing a partial run or starting a new one). All live hypotheses share one batched model
/// call per step. Each bank keeps its beam_size best by cumulative log probability; ties go to
/// the lexicographically smaller token sequence. Zero-probability tokens are never expanded.
///
/// When the shortest variant is not shorter than max_len, max_len is raised to that length + 2
/// and a warning is recorded.
ConstrainedSearchResult constrained_beam_search(const LanguageModel& model, std::span<const TokenId> context,
                                                const ConstraintSet& constraints,
                                                const ConstrainedSearchOptions& options);

}  // namespace famguard
