#include "famguard/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "famguard/errors.hpp"
#include "famguard/familiarity.hpp"
#include "famguard/parallel.hpp"
#include "famguard/text.hpp"

namespace famguard {
namespace {

void require_non_empty(std::span<const double> lp) {
  if (lp.empty()) throw ContractViolation("no tokens generated");
}

std::map<std::string, double> bag_of_words(std::string_view s) {
  std::map<std::string, double> bag;
  for (const auto& w : split_words(s)) {
    if (w.size() == 1 && text::is_ascii_punct(w[0])) continue;
    bag[text::ascii_lower(w)] += 1.0;
  }
  return bag;
}

double total(const std::map<std::string, double>& bag) {
  double n = 0.0;
  for (const auto& [w, c] : bag) n += c;
  return n;
}

BaselineScore from_greedy(BaselineMethod method, const DecodedResponse& r, const LanguageModel& model, double score) {
  const auto content = r.content_logprobs();
  std::vector<double> probs;
  for (double lp : content) probs.push_back(std::exp(lp));
  return BaselineScore{method, score, {model.detokenize(r.content_tokens())}, {std::move(probs)}};
}

}  // namespace

std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::greedy_perplexity: return "perplexity";
    case BaselineMethod::greedy_avg_logp: return "avg_logp";
    case BaselineMethod::greedy_min_logp: return "min_logp";
    case BaselineMethod::greedy_significance: return "significance";
    case BaselineMethod::sample_bertscore: return "sample_bert";
    case BaselineMethod::sample_sentence: return "sample_sentence";
    case BaselineMethod::forward_inference: return "forward";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Greedy probability baselines

double negative_perplexity(std::span<const double> logprobs) {
  require_non_empty(logprobs);
  return -std::exp(-mean_logprob(logprobs));
}

double mean_logprob(std::span<const double> logprobs) {
  require_non_empty(logprobs);
  return std::accumulate(logprobs.begin(), logprobs.end(), 0.0) / static_cast<double>(logprobs.size());
}

double min_logprob(std::span<const double> logprobs) {
  require_non_empty(logprobs);
  return *std::min_element(logprobs.begin(), logprobs.end());
}

DecodedResponse greedy_response(const LanguageModel& model, std::string_view instruction, std::size_t max_len) {
  auto r = greedy_search(model, model.tokenize(instruction), max_len);
  if (r.content_logprobs().empty()) throw ValidationError("no tokens generated");
  return r;
}

BaselineScore greedy_perplexity(const LanguageModel& model, std::string_view instruction, std::size_t max_len) {
  const auto r = greedy_response(model, instruction, max_len);
  return from_greedy(BaselineMethod::greedy_perplexity, r, model, negative_perplexity(r.content_logprobs()));
}

BaselineScore greedy_avg_logp(const LanguageModel& model, std::string_view instruction, std::size_t max_len) {
  const auto r = greedy_response(model, instruction, max_len);
  return from_greedy(BaselineMethod::greedy_avg_logp, r, model, mean_logprob(r.content_logprobs()));
}

BaselineScore greedy_min_logp(const LanguageModel& model, std::string_view instruction, std::size_t max_len) {
  const auto r = greedy_response(model, instruction, max_len);
  return from_greedy(BaselineMethod::greedy_min_logp, r, model, min_logprob(r.content_logprobs()));
}

// ---------------------------------------------------------------------------
// Significance

double kl_divergence(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) throw ContractViolation("kl_divergence: distributions differ in length");
  const double floor = std::log(kKlFloor);
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    if (!std::isfinite(log_p[i])) continue;  // p = 0 contributes nothing
    kl += std::exp(log_p[i]) * (log_p[i] - std::max(log_q[i], floor));
  }
  return std::max(kl, 0.0);
}

double directed_kl(std::span<const double> log_p, std::span<const double> log_q, KlDirection direction) {
  switch (direction) {
    case KlDirection::forward: return kl_divergence(log_p, log_q);
    case KlDirection::reverse: return kl_divergence(log_q, log_p);
    case KlDirection::symmetric: return 0.5 * (kl_divergence(log_p, log_q) + kl_divergence(log_q, log_p));
  }
  return 0.0;
}

BaselineScore greedy_significance(const LanguageModel& model, std::string_view instruction,
                                  std::span<const std::string> concepts, std::string_view mask_token,
                                  std::size_t max_len, KlDirection direction) {
  if (concepts.empty()) throw ValidationError("significance undefined without concepts");
  const TokenSeq prompt = model.tokenize(instruction);
  const auto r = greedy_search(model, prompt, max_len);

  std::string masked(instruction);
  for (const auto& c : concepts) masked = mask_concept(masked, c, mask_token);
  const TokenSeq masked_prompt = model.tokenize(masked);

  const auto original = force_decode(model, prompt, r.tokens, true);
  const auto unconditional = force_decode(model, masked_prompt, r.tokens, true);
  double sum = 0.0;
  for (std::size_t t = 0; t < r.tokens.size(); ++t) {
    sum += directed_kl(original.distributions[t], unconditional.distributions[t], direction);
  }
  BaselineScore out{BaselineMethod::greedy_significance, sum / static_cast<double>(r.tokens.size()), {}, {}};
  out.responses = {model.detokenize(r.content_tokens()), masked};
  out.probability_sequences = {original.token_probs, unconditional.token_probs};
  return out;
}

// ---------------------------------------------------------------------------
// Similarity backends and consistency

std::vector<std::vector<double>> SimilarityBackend::matrix(std::span<const std::string> texts, int jobs) const {
  return similarity_matrix_parallel(*this, texts, jobs);
}

double TokenF1Similarity::pairwise(std::string_view a, std::string_view b) const {
  const auto ba = bag_of_words(a);
  const auto bb = bag_of_words(b);
  const double na = total(ba);
  const double nb = total(bb);
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  double overlap = 0.0;
  for (const auto& [w, c] : ba) {
    if (auto it = bb.find(w); it != bb.end()) overlap += std::min(c, it->second);
  }
  // F1 = 2PR/(P+R) with P = overlap/na, R = overlap/nb, which simplifies to:
  return 2.0 * overlap / (na + nb);
}

double BagOfWordsCosine::pairwise(std::string_view a, std::string_view b) const {
  const auto ba = bag_of_words(a);
  const auto bb = bag_of_words(b);
  if (ba.empty() && bb.empty()) return 1.0;
  if (ba.empty() || bb.empty()) return 0.0;
  if (ba == bb) return 1.0;
  double dot = 0.0;
  double sa = 0.0;
  double sb = 0.0;
  for (const auto& [w, c] : ba) {
    sa += c * c;
    if (auto it = bb.find(w); it != bb.end()) dot += c * it->second;
  }
  for (const auto& [w, c] : bb) sb += c * c;
  return std::clamp(dot / std::sqrt(sa * sb), 0.0, 1.0);
}

std::vector<std::vector<double>> RemoteEmbeddingSimilarity::embed(std::span<const std::string> texts) const {
  nlohmann::json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  const auto doc = client_.post("/v1/embed", body);
  try {
    auto vectors = doc.at("vectors").get<std::vector<std::vector<double>>>();
    if (vectors.size() != texts.size()) throw ProtocolError("/v1/embed: vector count does not match text count");
    return vectors;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("/v1/embed: malformed payload: ") + e.what());
  }
}

namespace {

double cosine01(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ProtocolError("/v1/embed: vectors differ in dimension");
  double dot = 0.0;
  double sa = 0.0;
  double sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    sa += a[i] * a[i];
    sb += b[i] * b[i];
  }
  if (sa == 0.0 || sb == 0.0) return sa == sb ? 1.0 : 0.0;
  return std::clamp(dot / std::sqrt(sa * sb), 0.0, 1.0);
}

}  // namespace

double RemoteEmbeddingSimilarity::pairwise(std::string_view a, std::string_view b) const {
  if (a == b) return 1.0;
  const std::string texts[] = {std::string(a), std::string(b)};
  const auto v = embed(texts);
  return cosine01(v[0], v[1]);
}

std::vector<std::vector<double>> RemoteEmbeddingSimilarity::matrix(std::span<const std::string> texts,
                                                                   int /*jobs*/) const {
  const auto v = embed(texts);
  const std::size_t n = texts.size();
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      sim[i][j] = sim[j][i] = texts[i] == texts[j] ? 1.0 : cosine01(v[i], v[j]);
    }
  }
  return sim;
}

std::vector<std::vector<double>> similarity_matrix_serial(const SimilarityBackend& backend,
                                                          std::span<const std::string> texts) {
  const std::size_t n = texts.size();
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      try {
        s = backend.pairwise(texts[i], texts[j]);
      } catch (const Error& e) {
        throw Error("similarity of samples " + std::to_string(i) + " and " + std::to_string(j) + ": " + e.what());
      }
      sim[i][j] = sim[j][i] = s;
    }
  }
  return sim;
}

std::vector<std::vector<double>> similarity_matrix_parallel(const SimilarityBackend& backend,
                                                            std::span<const std::string> texts, int jobs) {
  const std::size_t n = texts.size();
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
  // One task per row of the upper triangle; every cell is written by exactly one task.
  parallel_for(n, jobs, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      try {
        sim[i][j] = backend.pairwise(texts[i], texts[j]);
      } catch (const Error& e) {
        throw Error("similarity of samples " + std::to_string(i) + " and " + std::to_string(j) + ": " + e.what());
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sim[j][i] = sim[i][j];
  }
  return sim;
}

double consistency_score(const std::vector<std::vector<double>>& sim) {
  if (sim.empty()) throw ContractViolation("consistency_score: no samples");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& row : sim) {
    best = std::max(best, std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  }
  return best;
}

BaselineScore sample_consistency(const LanguageModel& model, std::string_view instruction,
                                 const SimilarityBackend& backend, const SamplingConfig& sampling,
                                 BaselineMethod method) {
  if (sampling.k < 2) throw ContractViolation("sample_consistency: k must be >= 2");
  const auto samples =
      sample_k(model, model.tokenize(instruction), sampling.max_len, sampling.k, sampling.temperature, sampling.seed);
  BaselineScore out{method, 0.0, {}, {}};
  for (const auto& s : samples) {
    out.responses.push_back(model.detokenize(s.content_tokens()));
    out.probability_sequences.push_back(s.token_probs);
  }
  out.score = consistency_score(backend.matrix(out.responses, sampling.jobs));
  return out;
}

// ---------------------------------------------------------------------------
// Forward inference

std::string forward_prompt(std::string_view subject, std::string_view domain, InferenceMode mode) {
  if (mode == InferenceMode::concept_level) {
    return "Are you familiar with the " + std::string(subject) + " in " + std::string(domain) +
           "? Answer yes or no.";
  }
  return "Are you familiar with all the " + std::string(domain) + " concepts in \"" + std::string(subject) +
         "\"? Answer yes or no.";
}

bool contains_yes(std::string_view response) {
  for (std::string_view form : {"yes", "YES", "Yes"}) {
    for (auto pos = response.find(form); pos != std::string_view::npos; pos = response.find(form, pos + 1)) {
      const auto end = pos + form.size();
      const bool left_ok = pos == 0 || !text::is_word_char(response[pos - 1]);
      const bool right_ok = end == response.size() || !text::is_word_char(response[end]);
      if (left_ok && right_ok) return true;
    }
  }
  return false;
}

BaselineScore forward_inference(const LanguageModel& model, std::string_view subject, std::string_view domain,
                                InferenceMode mode, ScoreMode score_mode, std::size_t max_len) {
  const auto r = greedy_search(model, model.tokenize(forward_prompt(subject, domain, mode)), max_len);
  const auto content = r.content_logprobs();
  // An immediate eos is scored by the eos step itself.
  const double prob = sequence_score(content.empty() ? std::span<const double>(r.token_logprobs) : content, score_mode);
  const std::string answer = model.detokenize(r.content_tokens());
  const double score = contains_yes(answer) ? prob : 1.0 - prob;
  std::vector<double> probs;
  for (double lp : content) probs.push_back(std::exp(lp));
  return BaselineScore{BaselineMethod::forward_inference, score, {answer}, {std::move(probs)}};
}

nlohmann::json to_json(const BaselineScore& s, bool audit) {
  nlohmann::json j = {{"method", to_string(s.method)}, {"score", s.score}};
  if (audit) {
    j["responses"] = s.responses;
    j["probability_sequences"] = s.probability_sequences;
  }
  return j;
}

}  // namespace famguard
