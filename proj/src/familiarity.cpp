#include "famguard/familiarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "famguard/errors.hpp"
#include "famguard/parallel.hpp"
#include "famguard/text.hpp"

namespace famguard {
namespace {

[[noreturn]] void rethrow_in_stage(const std::string& stage) {
  const std::string prefix = stage + ": ";
  try {
    throw;
  } catch (const TransportError& e) {
    throw TransportError(prefix + e.what(), e.status());
  } catch (const ProtocolError& e) {
    throw ProtocolError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const UsageError& e) {
    throw UsageError(prefix + e.what());
  } catch (const ContractViolation& e) {
    throw ContractViolation(prefix + e.what());
  } catch (const Error& e) {
    throw ValidationError(prefix + e.what());
  }
}

template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error&) {
    rethrow_in_stage(stage);
  }
}

struct Interval {
  std::size_t start;
  std::size_t end;
};

/// Whole-word, case-insensitive occurrences of each word, non-overlapping and in order.
std::vector<Interval> find_words(std::string_view haystack, const std::vector<std::string>& words) {
  const std::string lower = text::ascii_lower(haystack);
  std::vector<Interval> hits;
  for (const auto& w : words) {
    for (auto pos = lower.find(w); pos != std::string::npos; pos = lower.find(w, pos + 1)) {
      const std::size_t end = pos + w.size();
      const bool left_ok = pos == 0 || !text::is_word_char(lower[pos - 1]);
      const bool right_ok = end == lower.size() || !text::is_word_char(lower[end]);
      if (left_ok && right_ok) hits.push_back({pos, end});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Interval& a, const Interval& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.end > b.end;
  });
  std::vector<Interval> merged;
  for (const auto& h : hits) {
    if (merged.empty() || h.start >= merged.back().end) merged.push_back(h);
  }
  return merged;
}

std::vector<std::string> lowered_words(std::string_view concept_text) {
  std::vector<std::string> words;
  for (const auto& w : text::words_of(concept_text)) {
    auto lw = text::ascii_lower(w);
    if (std::find(words.begin(), words.end(), lw) == words.end()) words.push_back(std::move(lw));
  }
  return words;
}

std::size_t count_slot(std::string_view tmpl, std::string_view slot) {
  std::size_t n = 0;
  for (auto pos = tmpl.find(slot); pos != std::string_view::npos; pos = tmpl.find(slot, pos + 1)) ++n;
  return n;
}

void check_template(std::string_view name, std::string_view tmpl, std::initializer_list<std::string_view> slots) {
  std::size_t expected_braces = 0;
  for (auto slot : slots) {
    const std::string marker = "{" + std::string(slot) + "}";
    if (count_slot(tmpl, marker) != 1) {
      throw UsageError(std::string(name) + " template must contain " + marker + " exactly once");
    }
    ++expected_braces;
  }
  if (static_cast<std::size_t>(std::count(tmpl.begin(), tmpl.end(), '{')) != expected_braces) {
    throw UsageError(std::string(name) + " template has an undeclared slot");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompts and masking

void PromptTemplates::validate() const {
  check_template("explain_general", explain_general, {"concept"});
  check_template("explain_domain", explain_domain, {"concept", "domain"});
  check_template("infer", infer, {"masked_explanation"});
  if (mask_token.empty()) throw UsageError("mask token must be non-empty");
}

std::string fill_template(std::string_view tmpl, std::span<const std::pair<std::string_view, std::string_view>> slots) {
  std::string out(tmpl);
  for (const auto& [name, value] : slots) {
    const std::string marker = "{" + std::string(name) + "}";
    for (auto pos = out.find(marker); pos != std::string::npos; pos = out.find(marker, pos + value.size())) {
      out.replace(pos, marker.size(), value);
    }
  }
  return out;
}

std::string explain_concept(const LanguageModel& model, std::string_view concept_text,
                            const std::optional<std::string>& domain, const PromptTemplates& templates,
                            std::size_t max_len) {
  if (concept_text.empty()) throw ContractViolation("explain_concept: concept must be non-empty");
  std::string prompt;
  if (domain) {
    const std::pair<std::string_view, std::string_view> slots[] = {{"concept", concept_text}, {"domain", *domain}};
    prompt = fill_template(templates.explain_domain, slots);
  } else {
    const std::pair<std::string_view, std::string_view> slots[] = {{"concept", concept_text}};
    prompt = fill_template(templates.explain_general, slots);
  }
  const auto response = greedy_search(model, model.tokenize(prompt), max_len);
  return model.detokenize(response.content_tokens());
}

std::string mask_concept(std::string_view explanation, std::string_view concept_text, std::string_view mask_token) {
  const auto hits = find_words(explanation, lowered_words(concept_text));
  std::string out;
  std::size_t cursor = 0;
  for (const auto& h : hits) {
    out.append(explanation.substr(cursor, h.start - cursor));
    out.append(mask_token);
    cursor = h.end;
  }
  out.append(explanation.substr(cursor));
  return out;
}

bool mask_is_complete(std::string_view masked, std::string_view concept_text) {
  return find_words(masked, lowered_words(concept_text)).empty();
}

std::optional<ConstraintSet> concept_constraints(const LanguageModel& model, std::string_view concept_text) {
  std::vector<TokenSeq> variants;
  for (const auto& form : {text::ascii_lower(concept_text), text::ascii_upper(concept_text),
                           text::capitalize_first(concept_text)}) {
    try {
      variants.push_back(model.tokenize(form));
    } catch (const OovError&) {
    }
  }
  std::erase_if(variants, [](const TokenSeq& v) { return v.empty(); });
  if (variants.empty()) return std::nullopt;
  return ConstraintSet(std::move(variants));
}

// ---------------------------------------------------------------------------
// Concept guessing

FamiliarityOptions FamiliarityOptions::from_config(const Config& cfg) {
  FamiliarityOptions o;
  o.templates.mask_token = cfg.mask_token;
  o.beam_size = cfg.t_b;
  o.infer_max_len = cfg.l_b;
  o.explain_max_len = cfg.l_f;
  o.score = cfg.score;
  o.h_norm = cfg.h_norm;
  return o;
}

ConceptScore concept_familiarity(const LanguageModel& model, const ConceptSpan& concept_span,
                                 const std::optional<std::string>& domain, const FrequencyDictionary& dict,
                                 const FamiliarityOptions& options) {
  if (concept_span.text.empty()) throw ContractViolation("concept_familiarity: concept must be non-empty");
  ConceptScore out;
  out.concept_span = concept_span;
  out.log_freq = log_frequency_score(concept_span, dict, options.h_norm);

  out.explanation = in_stage("explain", [&] {
    return explain_concept(model, concept_span.text, domain, options.templates, options.explain_max_len);
  });
  if (out.explanation.empty()) out.flags.emplace_back("empty_explanation");

  out.masked_explanation = mask_concept(out.explanation, concept_span.text, options.templates.mask_token);
  if (!mask_is_complete(out.masked_explanation, concept_span.text)) {
    throw ValidationError("mask: mask token \"" + options.templates.mask_token + "\" reintroduces a word of \"" +
                          concept_span.text + "\"");
  }

  in_stage("infer", [&] {
    const std::pair<std::string_view, std::string_view> slots[] = {{"masked_explanation", out.masked_explanation}};
    const TokenSeq prompt = model.tokenize(fill_template(options.templates.infer, slots));
    const auto constraints = concept_constraints(model, concept_span.text);
    if (!constraints) {
      out.flags.emplace_back("concept_not_tokenizable");
      return;
    }
    const auto result = constrained_beam_search(
        model, prompt, *constraints, ConstrainedSearchOptions{options.beam_size, options.infer_max_len, options.score});
    if (!result.warnings.empty()) out.flags.emplace_back("max_len_raised");
    for (const auto& h : result.hypotheses) {
      out.candidates.push_back(InferenceCandidate{model.detokenize(h.response.content_tokens()), h.score});
    }
    if (!out.candidates.empty()) out.best_inference = out.candidates.front().text;
    out.familiarity = result.best_score();
  });
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

AggregateResult aggregate(std::span<const ConceptEvidence> evidence, double r, Aggregator aggregator,
                          ThetaOrder order) {
  if (evidence.empty()) throw ContractViolation("no concepts to aggregate");
  if (!(r > 1.0)) throw ContractViolation("aggregate: decay ratio r must be > 1");

  std::vector<std::size_t> idx(evidence.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = evidence[a];
    const auto& eb = evidence[b];
    if (order == ThetaOrder::ascending && ea.log_freq != eb.log_freq) return ea.log_freq < eb.log_freq;
    if (order == ThetaOrder::descending && ea.log_freq != eb.log_freq) return ea.log_freq > eb.log_freq;
    return ea.position < eb.position;
  });

  AggregateResult out;
  out.theta.resize(evidence.size());
  for (std::size_t rank = 0; rank < idx.size(); ++rank) out.theta[idx[rank]] = rank;

  switch (aggregator) {
    case Aggregator::min:
      out.score = std::min_element(evidence.begin(), evidence.end(), [](const auto& a, const auto& b) {
                    return a.familiarity < b.familiarity;
                  })->familiarity;
      break;
    case Aggregator::most_infrequent:
      out.score = evidence[idx.front()].familiarity;
      break;
    case Aggregator::weighted: {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < evidence.size(); ++i) {
        const double w = std::pow(r, -static_cast<double>(out.theta[i]));
        num += w * evidence[i].familiarity;
        den += w;
      }
      // Rounding must not push the average outside [min, max].
      const auto [lo, hi] = std::minmax_element(evidence.begin(), evidence.end(), [](const auto& a, const auto& b) {
        return a.familiarity < b.familiarity;
      });
      out.score = std::clamp(num / den, lo->familiarity, hi->familiarity);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

std::string to_string(Verdict v) { return v == Verdict::withhold ? "WITHHOLD" : "PROCEED"; }

PipelineOptions PipelineOptions::from_config(const Config& cfg) {
  PipelineOptions o;
  o.familiarity = FamiliarityOptions::from_config(cfg);
  o.r = cfg.r;
  o.aggregator = cfg.aggregator;
  o.theta_order = cfg.ranking ? cfg.theta_order : ThetaOrder::position;
  o.grouping = cfg.grouping;
  o.filtering = cfg.filtering;
  return o;
}

namespace {

void score_concepts(FamiliarityReport& report, const LanguageModel& model, const std::vector<ConceptSpan>& spans,
                    const std::optional<std::string>& domain, const FrequencyDictionary& dict,
                    const PipelineOptions& options) {
  report.concept_scores.resize(spans.size());
  parallel_for(spans.size(), options.jobs, [&](std::size_t i) {
    report.concept_scores[i] = in_stage("concept \"" + spans[i].text + "\"", [&] {
      return concept_familiarity(model, spans[i], domain, dict, options.familiarity);
    });
  });
  std::vector<ConceptEvidence> evidence;
  for (std::size_t i = 0; i < report.concept_scores.size(); ++i) {
    evidence.push_back({report.concept_scores[i].familiarity, report.concept_scores[i].log_freq, i});
  }
  auto agg = in_stage("aggregate", [&] { return aggregate(evidence, options.r, options.aggregator, options.theta_order); });
  report.instruction_score = agg.score;
  report.theta = std::move(agg.theta);
}

}  // namespace

FamiliarityReport assess_instruction(const LanguageModel& model, const Extractor& extractor,
                                     const FrequencyDictionary& dict, std::string_view instruction,
                                     const std::optional<std::string>& domain, const PipelineOptions& options) {
  FamiliarityReport report;
  report.extracted =
      in_stage("extract", [&] { return extract_entities(extractor, instruction, domain.value_or(std::string())); });
  auto spans = options.grouping ? group_concepts(report.extracted, instruction) : report.extracted;
  if (options.filtering) {
    auto filtered = filter_concepts(std::move(spans), dict);
    spans = std::move(filtered.kept);
    report.dropped = std::move(filtered.dropped);
  }
  if (spans.empty()) {
    report.no_concepts = true;
    report.instruction_score = 1.0;
    return report;
  }
  // Instruction-level explanations use the general template.
  score_concepts(report, model, spans, std::nullopt, dict, options);
  return report;
}

FamiliarityReport assess_concept(const LanguageModel& model, const FrequencyDictionary& dict,
                                 std::string_view concept_text, const std::optional<std::string>& domain,
                                 const PipelineOptions& options) {
  if (concept_text.empty()) throw ContractViolation("assess_concept: concept must be non-empty");
  FamiliarityReport report;
  const std::vector<ConceptSpan> spans{ConceptSpan{std::string(concept_text), 0, concept_text.size(), SpanOrigin::provided}};
  score_concepts(report, model, spans, domain, dict, options);
  return report;
}

GuardDecision decide(const FamiliarityReport& report, double threshold) {
  GuardDecision d;
  d.score = report.instruction_score;
  d.threshold = threshold;
  d.no_concepts = report.no_concepts;
  d.verdict = d.score < threshold ? Verdict::withhold : Verdict::proceed;
  for (const auto& cs : report.concept_scores) {
    if (cs.familiarity < threshold) d.unfamiliar_concepts.push_back(cs.concept_span);
  }
  return d;
}

std::pair<GuardDecision, FamiliarityReport> guard(const LanguageModel& model, const Extractor& extractor,
                                                  const FrequencyDictionary& dict, std::string_view instruction,
                                                  const std::optional<std::string>& domain,
                                                  const PipelineOptions& options, double threshold) {
  auto report = assess_instruction(model, extractor, dict, instruction, domain, options);
  auto decision = decide(report, threshold);
  return {std::move(decision), std::move(report)};
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const ConceptSpan& span, std::string_view instruction) {
  return {{"text", span.text},
          {"start", text::utf8_char_offset(instruction, span.start)},
          {"end", text::utf8_char_offset(instruction, span.end)},
          {"origin", to_string(span.origin)}};
}

nlohmann::json to_json(const ConceptScore& score, std::string_view instruction, bool audit) {
  nlohmann::json j = {{"concept", to_json(score.concept_span, instruction)},
                      {"familiarity", score.familiarity},
                      {"log_freq", score.log_freq},
                      {"flags", score.flags}};
  if (audit) {
    j["explanation"] = score.explanation;
    j["masked_explanation"] = score.masked_explanation;
    j["best_inference"] = score.best_inference ? nlohmann::json(*score.best_inference) : nlohmann::json(nullptr);
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : score.candidates) cands.push_back({{"text", c.text}, {"score", c.score}});
    j["candidates"] = std::move(cands);
  }
  return j;
}

nlohmann::json to_json(const FamiliarityReport& report, std::string_view instruction, bool audit) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& cs : report.concept_scores) scores.push_back(to_json(cs, instruction, audit));
  nlohmann::json j = {{"instruction_score", report.instruction_score},
                      {"theta", report.theta},
                      {"no_concepts", report.no_concepts},
                      {"concept_scores", std::move(scores)}};
  if (audit) {
    nlohmann::json extracted = nlohmann::json::array();
    for (const auto& s : report.extracted) extracted.push_back(to_json(s, instruction));
    nlohmann::json dropped = nlohmann::json::array();
    for (const auto& s : report.dropped) {
      auto d = to_json(s, instruction);
      d["reason"] = "filtered";
      dropped.push_back(std::move(d));
    }
    j["extracted"] = std::move(extracted);
    j["dropped"] = std::move(dropped);
  }
  return j;
}

nlohmann::json to_json(const GuardDecision& decision, std::string_view instruction) {
  nlohmann::json unfamiliar = nlohmann::json::array();
  for (const auto& s : decision.unfamiliar_concepts) unfamiliar.push_back(to_json(s, instruction));
  nlohmann::json flags = nlohmann::json::array();
  if (decision.no_concepts) flags.push_back("no-concepts");
  return {{"verdict", to_string(decision.verdict)},
          {"score", decision.score},
          {"threshold", decision.threshold},
          {"unfamiliar_concepts", std::move(unfamiliar)},
          {"flags", std::move(flags)}};
}

}  // namespace famguard
