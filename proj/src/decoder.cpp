#include "famguard/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "famguard/errors.hpp"
#include "famguard/log.hpp"

namespace famguard {
namespace {

TokenId argmax(const LogProbs& row) {
  // max_element returns the first maximum, i.e. the lowest id.
  return static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
}

TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  TokenSeq out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void push_step(DecodedResponse& r, TokenId token, double logprob) {
  r.tokens.push_back(token);
  r.token_logprobs.push_back(logprob);
  r.token_probs.push_back(std::exp(logprob));
}

double unit_interval(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

std::size_t update_progress(const TokenSeq& tokens, const TokenSeq& variant) {
  for (std::size_t k = std::min(variant.size(), tokens.size()); k > 0; --k) {
    if (std::equal(variant.begin(), variant.begin() + static_cast<std::ptrdiff_t>(k),
                   tokens.end() - static_cast<std::ptrdiff_t>(k))) {
      return k;
    }
  }
  return 0;
}

bool better_hypothesis(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.cumulative_logprob != b.cumulative_logprob) return a.cumulative_logprob > b.cumulative_logprob;
  return a.tokens < b.tokens;
}

bool better_scored(const ScoredResponse& a, const ScoredResponse& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.response.tokens < b.response.tokens;
}

/// Candidate tokens for one hypothesis: top-k by log probability, then constraint tokens.
std::vector<TokenId> expansion_tokens(const LogProbs& row, const BeamHypothesis& hyp,
                                      const ConstraintSet& constraints, std::size_t k) {
  std::vector<TokenId> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](TokenId a, TokenId b) {
                      if (row[a] != row[b]) return row[a] > row[b];
                      return a < b;
                    });
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < take; ++i) {
    if (std::isfinite(row[order[i]])) out.push_back(order[i]);
  }
  if (!hyp.satisfied) {
    const auto& variants = constraints.variants();
    for (std::size_t v = 0; v < variants.size(); ++v) {
      for (TokenId t : {variants[v][hyp.constraint_progress[v]], variants[v][0]}) {
        if (std::isfinite(row[t]) && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
      }
    }
  }
  return out;
}

}  // namespace

std::string to_string(ScoreMode mode) { return mode == ScoreMode::joint ? "joint" : "mean_logprob"; }

ScoreMode parse_score_mode(std::string_view name) {
  if (name == "mean_logprob") return ScoreMode::mean_logprob;
  if (name == "joint") return ScoreMode::joint;
  throw UsageError("unknown score mode \"" + std::string(name) + "\" (expected mean_logprob|joint)");
}

double sequence_score(std::span<const double> logprobs, ScoreMode mode) {
  if (logprobs.empty()) throw ContractViolation("cannot score an empty token sequence");
  const double sum = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  return mode == ScoreMode::joint ? std::exp(sum) : std::exp(sum / static_cast<double>(logprobs.size()));
}

std::span<const double> DecodedResponse::content_logprobs() const {
  std::span<const double> all(token_logprobs);
  return finished ? all.first(all.size() - 1) : all;
}

TokenSeq DecodedResponse::content_tokens() const {
  return finished ? TokenSeq(tokens.begin(), tokens.end() - 1) : tokens;
}

DecodedResponse greedy_search(const LanguageModel& model, std::span<const TokenId> context, std::size_t max_len) {
  if (max_len < 1) throw ContractViolation("greedy_search: max_len must be >= 1");
  DecodedResponse out;
  TokenSeq ctx(context.begin(), context.end());
  while (out.tokens.size() < max_len) {
    const LogProbs row = model.next_logprobs(ctx);
    const TokenId next = argmax(row);
    push_step(out, next, row[next]);
    if (next == model.eos_id()) {
      out.finished = true;
      break;
    }
    ctx.push_back(next);
  }
  return out;
}

std::vector<DecodedResponse> sample_k(const LanguageModel& model, std::span<const TokenId> context,
                                      std::size_t max_len, std::size_t k, double temperature, std::uint64_t seed) {
  if (k < 1) throw ContractViolation("sample_k: k must be >= 1");
  if (max_len < 1) throw ContractViolation("sample_k: max_len must be >= 1");
  if (!(temperature > 0.0)) throw ValidationError("sample_k: temperature must be > 0");

  std::vector<DecodedResponse> samples;
  samples.reserve(k);
  std::vector<double> weights(model.vocab_size());
  for (std::size_t i = 0; i < k; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::mt19937_64 engine(seq);
    DecodedResponse out;
    TokenSeq ctx(context.begin(), context.end());
    while (out.tokens.size() < max_len) {
      const LogProbs row = model.next_logprobs(ctx);
      const double peak = *std::max_element(row.begin(), row.end());
      double total = 0.0;
      for (std::size_t t = 0; t < row.size(); ++t) {
        weights[t] = std::isfinite(row[t]) ? std::exp((row[t] - peak) / temperature) : 0.0;
        total += weights[t];
      }
      const double target = unit_interval(engine) * total;
      TokenId next = -1;
      double acc = 0.0;
      for (std::size_t t = 0; t < row.size(); ++t) {
        if (weights[t] == 0.0) continue;
        next = static_cast<TokenId>(t);
        acc += weights[t];
        if (target < acc) break;
      }
      push_step(out, next, row[next]);
      if (next == model.eos_id()) {
        out.finished = true;
        break;
      }
      ctx.push_back(next);
    }
    samples.push_back(std::move(out));
  }
  return samples;
}

ForcedDecode force_decode(const LanguageModel& model, std::span<const TokenId> context,
                          std::span<const TokenId> target, bool capture_full) {
  if (target.empty()) throw ContractViolation("force_decode: target must be non-empty");
  model.check_context(target);
  ForcedDecode out;
  TokenSeq ctx(context.begin(), context.end());
  for (TokenId t : target) {
    LogProbs row = model.next_logprobs(ctx);
    out.token_logprobs.push_back(row[t]);
    out.token_probs.push_back(std::exp(row[t]));
    if (capture_full) out.distributions.push_back(std::move(row));
    ctx.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constrained beam search

ConstraintSet::ConstraintSet(std::vector<TokenSeq> variants) {
  for (auto& v : variants) {
    if (!v.empty() && std::find(variants_.begin(), variants_.end(), v) == variants_.end()) {
      variants_.push_back(std::move(v));
    }
  }
  if (variants_.empty() || variants_.size() > 3) {
    throw ContractViolation("constraint set needs 1-3 distinct non-empty variants, got " +
                            std::to_string(variants_.size()));
  }
}

std::size_t ConstraintSet::max_length() const {
  std::size_t n = 0;
  for (const auto& v : variants_) n = std::max(n, v.size());
  return n;
}

std::size_t ConstraintSet::min_length() const {
  std::size_t n = variants_.front().size();
  for (const auto& v : variants_) n = std::min(n, v.size());
  return n;
}

ConstrainedSearchResult constrained_beam_search(const LanguageModel& model, std::span<const TokenId> context,
                                                const ConstraintSet& constraints,
                                                const ConstrainedSearchOptions& options) {
  if (options.beam_size < 1) throw ContractViolation("constrained_beam_search: beam_size must be >= 1");
  if (options.max_len < 1) throw ContractViolation("constrained_beam_search: max_len must be >= 1");
  model.check_context(context);
  const auto& variants = constraints.variants();
  for (const auto& v : variants) model.check_context(v);

  ConstrainedSearchResult result;
  result.effective_max_len = options.max_len;
  if (constraints.min_length() >= options.max_len) {
    result.effective_max_len = constraints.min_length() + 2;
    result.warnings.push_back("max_len " + std::to_string(options.max_len) + " cannot fit the shortest constraint (" +
                              std::to_string(constraints.min_length()) + " tokens); raised to " +
                              std::to_string(result.effective_max_len));
    log::warn("constrained_search_max_len_raised", {{"requested", options.max_len},
                                                    {"effective", result.effective_max_len},
                                                    {"shortest_constraint", constraints.min_length()}});
  }

  const std::size_t satisfied_bank = constraints.max_length();
  std::vector<std::vector<BeamHypothesis>> banks(satisfied_bank + 1);
  banks[0].push_back(BeamHypothesis{{}, {}, 0.0, std::vector<std::size_t>(variants.size(), 0), false, false});
  std::vector<BeamHypothesis> completed;
  const TokenId eos = model.eos_id();

  for (std::size_t step = 0; step < result.effective_max_len; ++step) {
    std::vector<BeamHypothesis> live;
    for (auto& bank : banks) {
      std::move(bank.begin(), bank.end(), std::back_inserter(live));
      bank.clear();
    }
    if (live.empty()) break;

    std::vector<TokenSeq> contexts;
    contexts.reserve(live.size());
    for (const auto& h : live) contexts.push_back(concat(context, h.tokens));
    const std::vector<LogProbs> rows = model.next_logprobs_batch(contexts);

    for (std::size_t i = 0; i < live.size(); ++i) {
      const BeamHypothesis& parent = live[i];
      for (TokenId t : expansion_tokens(rows[i], parent, constraints, options.beam_size)) {
        BeamHypothesis child = parent;
        const double lp = rows[i][t];
        child.tokens.push_back(t);
        child.token_logprobs.push_back(lp);
        child.finished = t == eos || child.tokens.size() == result.effective_max_len;
        if (t != eos) {
          child.cumulative_logprob += lp;
          for (std::size_t v = 0; v < variants.size(); ++v) {
            child.constraint_progress[v] = update_progress(child.tokens, variants[v]);
            if (child.constraint_progress[v] == variants[v].size()) child.satisfied = true;
          }
        }
        if (child.finished) {
          if (child.satisfied) completed.push_back(std::move(child));
          continue;
        }
        std::size_t bank = satisfied_bank;
        if (!child.satisfied) {
          bank = *std::max_element(child.constraint_progress.begin(), child.constraint_progress.end());
        }
        banks[bank].push_back(std::move(child));
      }
    }

    for (auto& bank : banks) {
      if (bank.size() > options.beam_size) {
        std::partial_sort(bank.begin(), bank.begin() + static_cast<std::ptrdiff_t>(options.beam_size), bank.end(),
                          better_hypothesis);
        bank.resize(options.beam_size);
      } else {
        std::sort(bank.begin(), bank.end(), better_hypothesis);
      }
    }
  }

  std::vector<ScoredResponse> ranked;
  ranked.reserve(completed.size());
  for (auto& h : completed) {
    DecodedResponse r;
    r.tokens = std::move(h.tokens);
    r.token_logprobs = std::move(h.token_logprobs);
    r.token_probs.resize(r.token_logprobs.size());
    std::transform(r.token_logprobs.begin(), r.token_logprobs.end(), r.token_probs.begin(),
                   [](double x) { return std::exp(x); });
    r.finished = r.tokens.back() == eos;
    const double score = sequence_score(r.content_logprobs(), options.score);
    ranked.push_back(ScoredResponse{std::move(r), score});
  }
  std::sort(ranked.begin(), ranked.end(), better_scored);

  // Token-level matches must also show up in the decoded text.
  std::vector<std::string> variant_texts;
  for (const auto& v : variants) variant_texts.push_back(model.detokenize(v));
  for (auto& candidate : ranked) {
    if (result.hypotheses.size() == options.beam_size) break;
    const std::string text = model.detokenize(candidate.response.tokens);
    const bool text_match = std::any_of(variant_texts.begin(), variant_texts.end(), [&](const std::string& vt) {
      return !vt.empty() && text.find(vt) != std::string::npos;
    });
    if (text_match) result.hypotheses.push_back(std::move(candidate));
  }
  return result;
}

}  // namespace famguard
