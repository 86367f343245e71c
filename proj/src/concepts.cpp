#include "famguard/concepts.hpp"

#include <algorithm>
#include <fstream>

#include "famguard/errors.hpp"
#include "famguard/text.hpp"

namespace famguard {
namespace {

struct Word {
  std::size_t start;  // byte offset of the punctuation-stripped core
  std::size_t end;
  bool leading_punct;
  bool trailing_punct;
  bool sentence_final;  // raw chunk ends with . ! or ?
};

std::vector<Word> scan_words(std::string_view s) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && text::is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !text::is_space(s[j])) ++j;
    if (j == i) break;
    std::size_t a = i;
    std::size_t b = j;
    while (a < b && text::is_ascii_punct(s[a])) ++a;
    while (b > a && text::is_ascii_punct(s[b - 1])) --b;
    if (b > a) {
      const char last = s[j - 1];
      words.push_back(Word{a, b, a > i, b < j, last == '.' || last == '!' || last == '?'});
    } else if (!words.empty()) {
      // A bare punctuation chunk separates the previous word from the next one.
      words.back().trailing_punct = true;
      const char last = s[j - 1];
      if (last == '.' || last == '!' || last == '?') words.back().sentence_final = true;
    }
    i = j;
  }
  return words;
}

std::string phrase_key(std::string_view phrase) {
  std::string key;
  for (const auto& w : scan_words(phrase)) {
    if (!key.empty()) key += ' ';
    key += text::ascii_lower(phrase.substr(w.start, w.end - w.start));
  }
  return key;
}

bool starts_upper(std::string_view w) { return !w.empty() && w[0] >= 'A' && w[0] <= 'Z'; }

bool joinable(const Word& prev, const Word& next) { return !prev.trailing_punct && !next.leading_punct; }

ConceptSpan make_span(std::string_view text_in, std::size_t start, std::size_t end, SpanOrigin origin) {
  return ConceptSpan{std::string(text_in.substr(start, end - start)), start, end, origin};
}

}  // namespace

std::string to_string(SpanOrigin origin) {
  switch (origin) {
    case SpanOrigin::extracted: return "extracted";
    case SpanOrigin::merged: return "merged";
    case SpanOrigin::provided: return "provided";
  }
  return "extracted";
}

// ---------------------------------------------------------------------------
// FrequencyDictionary

FrequencyDictionary::FrequencyDictionary(const std::vector<std::string>& ranked_words, std::size_t common_cutoff) {
  for (std::size_t i = 0; i < ranked_words.size(); ++i) {
    const auto w = text::ascii_lower(ranked_words[i]);
    if (!w.empty()) ranks_.emplace(w, i + 1);
  }
  size_ = ranked_words.size();
  common_cutoff_ = std::min(common_cutoff, size_);
}

FrequencyDictionary FrequencyDictionary::load(const std::filesystem::path& path, std::size_t common_cutoff) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open frequency dictionary " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto w = std::string_view(line);
    while (!w.empty() && text::is_space(w.back())) w.remove_suffix(1);
    while (!w.empty() && text::is_space(w.front())) w.remove_prefix(1);
    words.emplace_back(w);
  }
  while (!words.empty() && words.back().empty()) words.pop_back();
  return FrequencyDictionary(words, common_cutoff);
}

std::optional<std::size_t> FrequencyDictionary::rank(std::string_view lowercase_word) const {
  auto it = ranks_.find(std::string(lowercase_word));
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

std::size_t word_rank(std::string_view word, const FrequencyDictionary& dict) {
  const auto core = text::strip_punct(word);
  if (core.empty()) throw ContractViolation("word_rank: word must contain a non-punctuation character");
  if (starts_upper(core)) return dict.size();
  return dict.rank(text::ascii_lower(core)).value_or(dict.size());
}

double log_frequency_score(std::string_view concept_text, const FrequencyDictionary& dict, double h_norm) {
  if (!(h_norm > 0.0)) throw ContractViolation("log_frequency_score: H must be > 0");
  double log_f = 0.0;
  for (const auto& w : text::words_of(concept_text)) log_f -= static_cast<double>(word_rank(w, dict)) / h_norm;
  return log_f;
}

// ---------------------------------------------------------------------------
// Extractors

GazetteerExtractor::GazetteerExtractor(const std::vector<std::string>& phrases) {
  for (const auto& p : phrases) {
    const auto key = phrase_key(p);
    if (key.empty()) continue;
    phrases_.emplace(key, true);
    max_words_ = std::max<std::size_t>(max_words_, std::count(key.begin(), key.end(), ' ') + 1);
  }
}

GazetteerExtractor GazetteerExtractor::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gazetteer " + path.string());
  std::vector<std::string> phrases;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    phrases.push_back(line);
  }
  return GazetteerExtractor(phrases);
}

std::vector<ConceptSpan> GazetteerExtractor::extract(std::string_view s, std::string_view /*domain*/) const {
  std::vector<ConceptSpan> out;
  const auto words = scan_words(s);

  // Gazetteer: longest whole-word match starting at each word.
  for (std::size_t i = 0; i < words.size();) {
    std::size_t matched = 0;
    const std::size_t longest = std::min(max_words_, words.size() - i);
    for (std::size_t len = longest; len >= 1 && matched == 0; --len) {
      bool contiguous = true;
      std::string key;
      for (std::size_t k = i; k < i + len; ++k) {
        if (k > i && !joinable(words[k - 1], words[k])) {
          contiguous = false;
          break;
        }
        if (k > i) key += ' ';
        key += text::ascii_lower(s.substr(words[k].start, words[k].end - words[k].start));
      }
      if (contiguous && phrases_.count(key)) matched = len;
    }
    if (matched) {
      out.push_back(make_span(s, words[i].start, words[i + matched - 1].end, SpanOrigin::extracted));
      i += matched;
    } else {
      ++i;
    }
  }

  // Capitalized runs, skipping the word that opens a sentence.
  for (std::size_t i = 0; i < words.size();) {
    auto is_cap = [&](std::size_t k) {
      const bool opens_sentence = k == 0 || words[k - 1].sentence_final;
      const auto w = s.substr(words[k].start, words[k].end - words[k].start);
      return !opens_sentence && starts_upper(w) && w != "I";
    };
    if (!is_cap(i)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < words.size() && is_cap(j) && joinable(words[j - 1], words[j])) ++j;
    out.push_back(make_span(s, words[i].start, words[j - 1].end, SpanOrigin::extracted));
    i = j;
  }

  // Double-quoted spans, ASCII or curly quotes.
  static constexpr std::string_view kOpenCurly = "\xE2\x80\x9C";
  static constexpr std::string_view kCloseCurly = "\xE2\x80\x9D";
  for (std::size_t i = 0; i < s.size();) {
    std::size_t open_len = 0;
    std::string_view closer;
    if (s[i] == '"') {
      open_len = 1;
      closer = "\"";
    } else if (s.substr(i, kOpenCurly.size()) == kOpenCurly) {
      open_len = kOpenCurly.size();
      closer = kCloseCurly;
    }
    if (!open_len) {
      ++i;
      continue;
    }
    const auto close = s.find(closer, i + open_len);
    if (close == std::string_view::npos) break;
    std::size_t a = i + open_len;
    std::size_t b = close;
    while (a < b && text::is_space(s[a])) ++a;
    while (b > a && text::is_space(s[b - 1])) --b;
    if (b > a) out.push_back(make_span(s, a, b, SpanOrigin::extracted));
    i = close + closer.size();
  }
  return out;
}

std::vector<ConceptSpan> RemoteExtractor::extract(std::string_view s, std::string_view domain) const {
  const auto doc = client_.post("/v1/extract", {{"text", s}, {"domain", domain}});
  if (!doc.contains("entities") || !doc["entities"].is_array()) {
    throw ProtocolError("/v1/extract: missing \"entities\" array");
  }
  std::vector<ConceptSpan> out;
  for (const auto& e : doc["entities"]) {
    try {
      const auto start_char = e.at("start").get<std::size_t>();
      const auto end_char = e.at("end").get<std::size_t>();
      const auto span_text = e.at("text").get<std::string>();
      const auto start = text::utf8_byte_offset(s, start_char);
      const auto end = text::utf8_byte_offset(s, end_char);
      if (start >= end || s.substr(start, end - start) != span_text) {
        throw ProtocolError("/v1/extract: entity \"" + span_text + "\" does not match its offsets");
      }
      out.push_back(ConceptSpan{span_text, start, end, SpanOrigin::extracted});
    } catch (const nlohmann::json::exception& ex) {
      throw ProtocolError(std::string("/v1/extract: malformed entity: ") + ex.what());
    } catch (const ContractViolation& ex) {
      throw ProtocolError(std::string("/v1/extract: ") + ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline stages

std::vector<ConceptSpan> extract_entities(const Extractor& extractor, std::string_view instruction,
                                          std::string_view domain) {
  if (instruction.empty()) throw ContractViolation("extract_entities: instruction must be non-empty");
  auto candidates = extractor.extract(instruction, domain);
  std::erase_if(candidates, [&](const ConceptSpan& c) {
    return c.start >= c.end || c.end > instruction.size() ||
           instruction.substr(c.start, c.end - c.start) != c.text;
  });
  std::stable_sort(candidates.begin(), candidates.end(), [](const ConceptSpan& a, const ConceptSpan& b) {
    if (a.end - a.start != b.end - b.start) return a.end - a.start > b.end - b.start;
    return a.start < b.start;
  });
  std::vector<ConceptSpan> accepted;
  for (auto& c : candidates) {
    const bool overlaps = std::any_of(accepted.begin(), accepted.end(), [&](const ConceptSpan& a) {
      return c.start < a.end && a.start < c.end;
    });
    if (!overlaps) accepted.push_back(std::move(c));
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const ConceptSpan& a, const ConceptSpan& b) { return a.start < b.start; });
  return accepted;
}

std::vector<ConceptSpan> group_concepts(std::vector<ConceptSpan> spans, std::string_view instruction) {
  auto separators_only = [&](std::size_t from, std::size_t to) {
    for (std::size_t k = from; k < to; ++k) {
      if (!text::is_space(instruction[k]) && instruction[k] != '-') return false;
    }
    return true;
  };
  bool changed = true;
  while (changed && spans.size() > 1) {
    changed = false;
    std::vector<ConceptSpan> out;
    out.push_back(std::move(spans.front()));
    for (std::size_t i = 1; i < spans.size(); ++i) {
      ConceptSpan& last = out.back();
      if (last.end <= spans[i].start && separators_only(last.end, spans[i].start)) {
        last = make_span(instruction, last.start, spans[i].end, SpanOrigin::merged);
        changed = true;
      } else {
        out.push_back(std::move(spans[i]));
      }
    }
    spans = std::move(out);
  }
  return spans;
}

FilterResult filter_concepts(std::vector<ConceptSpan> spans, const FrequencyDictionary& dict) {
  auto is_common = [&](const std::string& w) {
    if (starts_upper(w)) return false;
    auto r = dict.rank(text::ascii_lower(w));
    return r && *r <= dict.common_cutoff();
  };
  FilterResult result;
  for (auto& span : spans) {
    const auto words = text::words_of(span.text);
    if (std::all_of(words.begin(), words.end(), is_common)) {
      result.dropped.push_back(std::move(span));
    } else {
      result.kept.push_back(std::move(span));
    }
  }
  return result;
}

}  // namespace famguard
