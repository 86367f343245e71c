#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "famguard/config.hpp"
#include "famguard/decoder.hpp"
#include "famguard/http.hpp"
#include "famguard/lm.hpp"

namespace famguard {

enum class BaselineMethod {
  greedy_perplexity,
  greedy_avg_logp,
  greedy_min_logp,
  greedy_significance,
  sample_bertscore,
  sample_sentence,
  forward_inference,
};

std::string to_string(BaselineMethod m);

struct BaselineScore {
  BaselineMethod method;
  double score = 0.0;
  std::vector<std::string> responses;
  std::vector<std::vector<double>> probability_sequences;
};

// Scores over a response probability sequence. All throw ContractViolation on an empty sequence.

/// -exp(-mean log p): the negated perplexity.
double negative_perplexity(std::span<const double> logprobs);
double mean_logprob(std::span<const double> logprobs);
double min_logprob(std::span<const double> logprobs);

/// Greedy response to the instruction, returned with its content probability sequence.
/// Throws ValidationError("no tokens generated") when the model stops immediately.
DecodedResponse greedy_response(const LanguageModel& model, std::string_view instruction, std::size_t max_len);

BaselineScore greedy_perplexity(const LanguageModel& model, std::string_view instruction, std::size_t max_len = 200);
BaselineScore greedy_avg_logp(const LanguageModel& model, std::string_view instruction, std::size_t max_len = 200);
BaselineScore greedy_min_logp(const LanguageModel& model, std::string_view instruction, std::size_t max_len = 200);

/// KL(p || q) between two log-space distributions. q entries are floored at kKlFloor so the
/// divergence stays finite when q rules out a token p allows.
inline constexpr double kKlFloor = 1e-12;
double kl_divergence(std::span<const double> log_p, std::span<const double> log_q);
double directed_kl(std::span<const double> log_p, std::span<const double> log_q, KlDirection direction);

/// Greedy response R under the instruction, then R force-decoded under the instruction with
/// every concept word masked. Score is the mean per-step KL between the two next-token
/// distributions. Throws ValidationError when `concepts` is empty.
BaselineScore greedy_significance(const LanguageModel& model, std::string_view instruction,
                                  std::span<const std::string> concepts, std::string_view mask_token,
                                  std::size_t max_len = 200, KlDirection direction = KlDirection::forward);

/// Pairwise text similarity in [0, 1]; symmetric with pairwise(a, a) = 1.
class SimilarityBackend {
 public:
  virtual ~SimilarityBackend() = default;
  virtual double pairwise(std::string_view a, std::string_view b) const = 0;
  /// Full similarity matrix. Remote backends override this to embed all texts at once.
  virtual std::vector<std::vector<double>> matrix(std::span<const std::string> texts, int jobs) const;
};

/// Bag-of-tokens F1 overlap (lowercased toy words); stands in for BERTScore.
class TokenF1Similarity final : public SimilarityBackend {
 public:
  double pairwise(std::string_view a, std::string_view b) const override;
};

/// Cosine similarity of bag-of-words count vectors; stands in for sentence embeddings.
class BagOfWordsCosine final : public SimilarityBackend {
 public:
  double pairwise(std::string_view a, std::string_view b) const override;
};

/// POST /v1/embed {"texts": [s]} -> {"vectors": [[f]]}; similarity is the cosine of the vectors,
/// clamped to [0, 1].
class RemoteEmbeddingSimilarity final : public SimilarityBackend {
 public:
  explicit RemoteEmbeddingSimilarity(HttpJsonClient client) : client_(std::move(client)) {}
  double pairwise(std::string_view a, std::string_view b) const override;
  std::vector<std::vector<double>> matrix(std::span<const std::string> texts, int jobs) const override;

 private:
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const;
  HttpJsonClient client_;
};

/// Serial reference for the similarity matrix; the parallel kernel must match it exactly.
std::vector<std::vector<double>> similarity_matrix_serial(const SimilarityBackend& backend,
                                                          std::span<const std::string> texts);
/// Computes the upper triangle on `jobs` OpenMP threads and mirrors it.
std::vector<std::vector<double>> similarity_matrix_parallel(const SimilarityBackend& backend,
                                                            std::span<const std::string> texts, int jobs);

/// max_i (1/m) sum_j sim[i][j], self-similarity included.
double consistency_score(const std::vector<std::vector<double>>& sim);

struct SamplingConfig {
  std::size_t k = 10;
  std::size_t max_len = 200;
  double temperature = 1.0;
  std::uint64_t seed = 42;
  int jobs = 1;
};

/// k sampled responses scored by their best mean similarity to all samples.
/// Backend failures are rethrown naming the sample index.
BaselineScore sample_consistency(const LanguageModel& model, std::string_view instruction,
                                 const SimilarityBackend& backend, const SamplingConfig& sampling,
                                 BaselineMethod method = BaselineMethod::sample_bertscore);

enum class InferenceMode { concept_level, instruction_level };

/// The direct familiarity question for a concept (with domain) or a whole instruction.
std::string forward_prompt(std::string_view subject, std::string_view domain, InferenceMode mode);

/// True when R contains "yes", "YES", or "Yes" as a whole word.
bool contains_yes(std::string_view response);

/// Greedy answer R to the familiarity question; Prob(R) if R says yes, else 1 - Prob(R).
BaselineScore forward_inference(const LanguageModel& model, std::string_view subject, std::string_view domain,
                                InferenceMode mode, ScoreMode score_mode = ScoreMode::mean_logprob,
                                std::size_t max_len = 200);

nlohmann::json to_json(const BaselineScore& s, bool audit);

}  // namespace famguard
