#include "famguard/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "famguard/errors.hpp"

namespace famguard {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

std::string describe_context(const TokenSeq& context, const Vocab& vocab) {
  std::string out = "[";
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (i) out += ", ";
    out += '"' + vocab.surface(context[i]) + '"';
  }
  return out + "]";
}

LogProbs to_log(const NextTokenDistribution& dist) {
  LogProbs out(dist.probs.size());
  std::transform(dist.probs.begin(), dist.probs.end(), out.begin(),
                 [](double p) { return p > 0.0 ? std::log(p) : kNegInf; });
  return out;
}

TokenSeq resolve_words(const nlohmann::json& words, const Vocab& vocab, const std::string& where) {
  TokenSeq seq;
  for (const auto& w : words) {
    auto id = vocab.find(w.get<std::string>());
    if (!id) throw ValidationError(where + ": unknown token \"" + w.get<std::string>() + "\"");
    seq.push_back(*id);
  }
  return seq;
}

NextTokenDistribution resolve_dist(const nlohmann::json& obj, const Vocab& vocab, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + ": distribution must be an object");
  NextTokenDistribution dist{std::vector<double>(vocab.size(), 0.0)};
  for (const auto& [surface, p] : obj.items()) {
    auto id = vocab.find(surface);
    if (!id) throw ValidationError(where + ": unknown token \"" + surface + "\"");
    dist.probs[static_cast<std::size_t>(*id)] = p.get<double>();
  }
  return dist;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens, std::string_view eos) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw ValidationError("vocabulary needs at least 2 tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary token \"" + tokens_[i] + "\"");
    }
  }
  auto it = index_.find(std::string(eos));
  if (it == index_.end()) throw ValidationError("eos token \"" + std::string(eos) + "\" not in vocabulary");
  eos_id_ = it->second;
}

std::optional<TokenId> Vocab::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string NextTokenDistribution::validate(std::size_t vocab_size, double tolerance) const {
  if (probs.size() != vocab_size) {
    return "distribution has " + std::to_string(probs.size()) + " entries, vocabulary has " +
           std::to_string(vocab_size);
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return "distribution has a negative or non-finite entry";
    sum += p;
  }
  if (std::abs(sum - 1.0) > tolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "distribution sums to " << sum;
    return msg.str();
  }
  return {};
}

// ---------------------------------------------------------------------------
// LanguageModel

void LanguageModel::check_context(std::span<const TokenId> context) const {
  const auto n = static_cast<TokenId>(vocab_size());
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (context[i] < 0 || context[i] >= n) {
      throw ContractViolation("token id " + std::to_string(context[i]) + " at position " + std::to_string(i) +
                              " is outside the vocabulary (size " + std::to_string(n) + ")");
    }
  }
}

LogProbs LanguageModel::next_logprobs(std::span<const TokenId> context) const {
  check_context(context);
  return do_next_logprobs(context);
}

std::vector<LogProbs> LanguageModel::next_logprobs_batch(std::span<const TokenSeq> contexts) const {
  for (const auto& c : contexts) check_context(c);
  return do_next_logprobs_batch(contexts);
}

NextTokenDistribution LanguageModel::next_distribution(std::span<const TokenId> context) const {
  check_context(context);
  return do_next_distribution(context);
}

std::vector<LogProbs> LanguageModel::do_next_logprobs_batch(std::span<const TokenSeq> contexts) const {
  std::vector<LogProbs> rows;
  rows.reserve(contexts.size());
  for (const auto& c : contexts) rows.push_back(do_next_logprobs(c));
  return rows;
}

NextTokenDistribution LanguageModel::do_next_distribution(std::span<const TokenId> context) const {
  LogProbs lp = do_next_logprobs(context);
  NextTokenDistribution dist{std::vector<double>(lp.size())};
  std::transform(lp.begin(), lp.end(), dist.probs.begin(), [](double x) { return std::exp(x); });
  return dist;
}

// ---------------------------------------------------------------------------
// Toy tokenization

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      current += c;
    }
  }
  flush();
  return words;
}

std::string join_words(std::span<const std::string> words) {
  static constexpr std::string_view kGlueLeft = ".,;:!?)]}%";
  static constexpr std::string_view kGlueRight = "([{$";
  static constexpr std::string_view kGlueBoth = "-/'";

  std::string out;
  bool glue_next = true;  // no space before the first word
  bool quote_open = false;
  for (const auto& w : words) {
    bool glue_left = false;
    bool glue_right = false;
    if (w.size() == 1 && is_ascii_punct(w[0])) {
      const char c = w[0];
      if (c == '"') {
        glue_right = !quote_open;
        glue_left = quote_open;
        quote_open = !quote_open;
      } else {
        glue_left = kGlueLeft.find(c) != std::string_view::npos || kGlueBoth.find(c) != std::string_view::npos;
        glue_right = kGlueRight.find(c) != std::string_view::npos || kGlueBoth.find(c) != std::string_view::npos;
      }
    }
    if (!glue_next && !glue_left) out += ' ';
    out += w;
    glue_next = glue_right;
  }
  return out;
}

TokenSeq ToyModel::tokenize(std::string_view text) const {
  TokenSeq seq;
  for (auto& w : split_words(text)) {
    auto id = vocab_.find(w);
    if (!id) throw OovError(std::move(w));
    seq.push_back(*id);
  }
  return seq;
}

std::string ToyModel::detokenize(std::span<const TokenId> seq) const {
  check_context(seq);
  std::vector<std::string> words;
  words.reserve(seq.size());
  for (TokenId id : seq) {
    if (id != vocab_.eos_id()) words.push_back(vocab_.surface(id));
  }
  return join_words(words);
}

// ---------------------------------------------------------------------------
// TableLm

TableLm::TableLm(TableLmSpec spec) : ToyModel(std::move(spec.vocab)) {
  const std::size_t n = vocab_size();
  if (auto why = spec.fallback.validate(n); !why.empty()) {
    throw ValidationError("table model fallback: " + why);
  }
  fallback_ = Row{spec.fallback, to_log(spec.fallback)};
  for (auto& [context, dist] : spec.rows) {
    check_context(context);
    if (auto why = dist.validate(n); !why.empty()) {
      throw ValidationError("table model row for context " + describe_context(context, vocab()) + ": " + why);
    }
    LogProbs log = to_log(dist);
    rows_.emplace(context, Row{std::move(dist), std::move(log)});
  }
}

const TableLm::Row& TableLm::lookup(std::span<const TokenId> context) const {
  auto it = rows_.find(TokenSeq(context.begin(), context.end()));
  return it == rows_.end() ? fallback_ : it->second;
}

LogProbs TableLm::do_next_logprobs(std::span<const TokenId> context) const { return lookup(context).log; }

NextTokenDistribution TableLm::do_next_distribution(std::span<const TokenId> context) const {
  return lookup(context).linear;
}

ModelPtr build_table_lm(TableLmSpec spec) { return std::make_shared<TableLm>(std::move(spec)); }

TableLmSpec parse_table_lm_spec(const nlohmann::json& doc) {
  try {
    Vocab vocab(doc.at("vocab").get<std::vector<std::string>>(), doc.at("eos").get<std::string>());
    TableLmSpec spec{std::move(vocab), {}, {}};
    if (!doc.contains("fallback")) throw ValidationError("table model: missing \"fallback\"");
    spec.fallback = resolve_dist(doc.at("fallback"), spec.vocab, "fallback");
    if (doc.contains("rows")) {
      std::size_t i = 0;
      for (const auto& row : doc.at("rows")) {
        const std::string where = "rows[" + std::to_string(i++) + "]";
        TokenSeq context = resolve_words(row.at("context"), spec.vocab, where);
        NextTokenDistribution dist = resolve_dist(row.at("dist"), spec.vocab, where);
        if (!spec.rows.emplace(std::move(context), std::move(dist)).second) {
          throw ValidationError(where + ": duplicate context");
        }
      }
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("table model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// NgramLm

NgramLm::NgramLm(NgramLmSpec spec)
    : ToyModel(std::move(spec.vocab)),
      order_(spec.order),
      alpha_(spec.smoothing_alpha),
      begin_marker_(static_cast<TokenId>(vocab_size())) {
  if (order_ < 1) throw ValidationError("n-gram order must be >= 1");
  if (!(alpha_ > 0.0)) throw ValidationError("n-gram smoothing alpha must be > 0");
  if (spec.corpus.empty()) throw ValidationError("n-gram corpus is empty");
  const std::size_t n = vocab_size();
  for (const auto& sentence : spec.corpus) {
    check_context(sentence);
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      TokenSeq history = history_of(std::span(sentence).first(i));
      auto& row = counts_[history];
      if (row.empty()) row.assign(n, 0.0);
      row[static_cast<std::size_t>(sentence[i])] += 1.0;
      totals_[history] += 1.0;
    }
  }
}

TokenSeq NgramLm::history_of(std::span<const TokenId> context) const {
  const auto width = static_cast<std::size_t>(order_ - 1);
  TokenSeq history(width, begin_marker_);
  const std::size_t take = std::min(width, context.size());
  std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(),
            history.end() - static_cast<std::ptrdiff_t>(take));
  return history;
}

LogProbs NgramLm::do_next_logprobs(std::span<const TokenId> context) const {
  const TokenSeq history = history_of(context);
  const double v = static_cast<double>(vocab_size());
  const auto row = counts_.find(history);
  const auto total = totals_.find(history);
  const double denom = (total == totals_.end() ? 0.0 : total->second) + alpha_ * v;
  LogProbs out(vocab_size());
  for (std::size_t w = 0; w < out.size(); ++w) {
    const double c = row == counts_.end() ? 0.0 : row->second[w];
    out[w] = std::log(c + alpha_) - std::log(denom);
  }
  return out;
}

ModelPtr build_ngram_lm(NgramLmSpec spec) { return std::make_shared<NgramLm>(std::move(spec)); }

NgramLmSpec parse_ngram_lm_spec(const nlohmann::json& doc) {
  try {
    const std::string eos = doc.value("eos", std::string("<eos>"));
    std::vector<std::vector<std::string>> lines;
    for (const auto& line : doc.at("corpus")) lines.push_back(split_words(line.get<std::string>()));

    std::vector<std::string> surfaces;
    if (doc.contains("vocab")) {
      surfaces = doc.at("vocab").get<std::vector<std::string>>();
    } else {
      std::set<std::string> seen;
      for (const auto& words : lines) {
        for (const auto& w : words) {
          if (w != eos && seen.insert(w).second) surfaces.push_back(w);
        }
      }
      surfaces.push_back(eos);
    }
    NgramLmSpec spec{Vocab(std::move(surfaces), eos), doc.value("order", 1), {}, doc.value("alpha", 1.0)};
    for (const auto& words : lines) {
      TokenSeq seq;
      for (const auto& w : words) {
        auto id = spec.vocab.find(w);
        if (!id) throw ValidationError("n-gram corpus word \"" + w + "\" not in vocabulary");
        seq.push_back(*id);
      }
      seq.push_back(spec.vocab.eos_id());
      spec.corpus.push_back(std::move(seq));
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("n-gram model: ") + e.what());
  }
}

ModelPtr load_toy_lm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open toy model file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("toy model file " + path.string() + ": " + e.what());
  }
  const std::string type = doc.value("type", std::string("table"));
  if (type == "table") return build_table_lm(parse_table_lm_spec(doc));
  if (type == "ngram") return build_ngram_lm(parse_ngram_lm_spec(doc));
  throw ValidationError("toy model file " + path.string() + ": unknown type \"" + type + "\"");
}

}  // namespace famguard
