#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "famguard/concepts.hpp"
#include "famguard/config.hpp"
#include "famguard/decoder.hpp"
#include "famguard/lm.hpp"

namespace famguard {

struct PromptTemplates {
  std::string explain_general = "Explain the \"{concept}\" within one short paragraph.";
  std::string explain_domain = "Explain the {concept} in the {domain} domain within one short paragraph.";
  std::string infer = "\"{masked_explanation}\" is related to what?";
  std::string mask_token = "...";

  /// Each template must hold each of its slots exactly once and no other slot.
  void validate() const;
};

/// Replaces every "{name}" slot with its value.
std::string fill_template(std::string_view tmpl, std::span<const std::pair<std::string_view, std::string_view>> slots);

/// Greedy explanation of a concept, detokenized without the prompt. Uses the domain template
/// when a domain is given. Returns "" when the model stops immediately.
std::string explain_concept(const LanguageModel& model, std::string_view concept_text,
                            const std::optional<std::string>& domain, const PromptTemplates& templates,
                            std::size_t max_len);

/// Replaces each whole-word, case-insensitive occurrence of every concept word with mask_token.
std::string mask_concept(std::string_view explanation, std::string_view concept_text, std::string_view mask_token);

/// True when no concept word survives in `masked` as a whole word (case-insensitive).
bool mask_is_complete(std::string_view masked, std::string_view concept_text);

/// Lowercase, uppercase, and first-letter-capitalized forms of the concept, each tokenized on
/// its own. Forms the tokenizer rejects as out-of-vocabulary are skipped; nullopt if none remain.
std::optional<ConstraintSet> concept_constraints(const LanguageModel& model, std::string_view concept_text);

struct InferenceCandidate {
  std::string text;
  double score = 0.0;
};

struct ConceptScore {
  ConceptSpan concept_span;
  double familiarity = 0.0;  ///< s_i in [0, 1]
  double log_freq = 0.0;     ///< log f_i
  std::string explanation;
  std::string masked_explanation;
  std::optional<std::string> best_inference;
  std::vector<InferenceCandidate> candidates;
  std::vector<std::string> flags;
};

struct FamiliarityOptions {
  PromptTemplates templates;
  std::size_t beam_size = 30;
  std::size_t infer_max_len = 15;
  std::size_t explain_max_len = 200;
  ScoreMode score = ScoreMode::mean_logprob;
  double h_norm = 100.0;

  static FamiliarityOptions from_config(const Config& cfg);
};

/// Explain, mask, then constrained re-inference of the concept. Familiarity is the best
/// constrained response score, or 0 when no response can contain the concept.
ConceptScore concept_familiarity(const LanguageModel& model, const ConceptSpan& concept_span,
                                 const std::optional<std::string>& domain, const FrequencyDictionary& dict,
                                 const FamiliarityOptions& options);

struct ConceptEvidence {
  double familiarity = 0.0;
  double log_freq = 0.0;
  std::size_t position = 0;
};

struct AggregateResult {
  double score = 0.0;
  /// theta[i] is the zero-based weight rank of input i; weight_i = r^-theta[i].
  std::vector<std::size_t> theta;
};

/// Geometric-weight average of concept familiarities:
///   s_f = sum_i r^-theta_i s_i / sum_i r^-theta_i
/// where theta ranks concepts by log frequency (ties: earlier position first). `min` and
/// `most_infrequent` replace the average by the minimum or by the theta = 0 concept.
/// Throws ContractViolation on empty input or r <= 1.
AggregateResult aggregate(std::span<const ConceptEvidence> evidence, double r,
                          Aggregator aggregator = Aggregator::weighted, ThetaOrder order = ThetaOrder::ascending);

struct FamiliarityReport {
  std::vector<ConceptScore> concept_scores;
  double instruction_score = 1.0;
  std::vector<std::size_t> theta;
  bool no_concepts = false;
  std::vector<ConceptSpan> extracted;  ///< before grouping/filtering
  std::vector<ConceptSpan> dropped;    ///< removed by filtering
};

enum class Verdict { proceed, withhold };
std::string to_string(Verdict v);

struct GuardDecision {
  Verdict verdict = Verdict::proceed;
  double score = 1.0;
  double threshold = 0.0;
  std::vector<ConceptSpan> unfamiliar_concepts;
  bool no_concepts = false;
};

struct PipelineOptions {
  FamiliarityOptions familiarity;
  double r = 2.0;
  Aggregator aggregator = Aggregator::weighted;
  ThetaOrder theta_order = ThetaOrder::ascending;
  bool grouping = true;
  bool filtering = true;
  /// Concepts scored concurrently per instruction.
  int jobs = 1;

  static PipelineOptions from_config(const Config& cfg);
};

/// Extract, group, filter, score every concept, and aggregate. Errors name the failing stage.
FamiliarityReport assess_instruction(const LanguageModel& model, const Extractor& extractor,
                                     const FrequencyDictionary& dict, std::string_view instruction,
                                     const std::optional<std::string>& domain, const PipelineOptions& options);

/// Scores one provided concept with the domain explanation template.
FamiliarityReport assess_concept(const LanguageModel& model, const FrequencyDictionary& dict,
                                 std::string_view concept_text, const std::optional<std::string>& domain,
                                 const PipelineOptions& options);

/// WITHHOLD iff score < threshold; lists every concept below the threshold.
GuardDecision decide(const FamiliarityReport& report, double threshold);

std::pair<GuardDecision, FamiliarityReport> guard(const LanguageModel& model, const Extractor& extractor,
                                                  const FrequencyDictionary& dict, std::string_view instruction,
                                                  const std::optional<std::string>& domain,
                                                  const PipelineOptions& options, double threshold);

nlohmann::json to_json(const ConceptSpan& span, std::string_view instruction);
nlohmann::json to_json(const ConceptScore& score, std::string_view instruction, bool audit);
nlohmann::json to_json(const FamiliarityReport& report, std::string_view instruction, bool audit);
nlohmann::json to_json(const GuardDecision& decision, std::string_view instruction);

}  // namespace famguard
