#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "famguard/http.hpp"

namespace famguard {

enum class SpanOrigin { extracted, merged, provided };

std::string to_string(SpanOrigin origin);

/// A concept found in an instruction. Offsets are byte offsets into the UTF-8 instruction
/// and satisfy instruction.substr(start, end - start) == text.
struct ConceptSpan {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;
  SpanOrigin origin = SpanOrigin::extracted;

  bool operator==(const ConceptSpan&) const = default;
};

/// Word list ranked by frequency: rank = 1-based position in the list.
class FrequencyDictionary {
 public:
  static constexpr std::size_t kDefaultCommonCutoff = 10000;

  FrequencyDictionary() = default;
  /// Words are stored lowercased; a repeated word keeps its first rank. The cutoff is clamped
  /// to the dictionary size.
  FrequencyDictionary(const std::vector<std::string>& ranked_words, std::size_t common_cutoff);

  /// One word per line, rank = line number. Blank lines consume a rank but add no entry.
  static FrequencyDictionary load(const std::filesystem::path& path,
                                  std::size_t common_cutoff = kDefaultCommonCutoff);

  std::optional<std::size_t> rank(std::string_view lowercase_word) const;
  std::size_t size() const noexcept { return size_; }
  std::size_t common_cutoff() const noexcept { return common_cutoff_; }

 private:
  std::unordered_map<std::string, std::size_t> ranks_;
  std::size_t size_ = 0;
  std::size_t common_cutoff_ = 0;
};

/// Pluggable concept extractor.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::vector<ConceptSpan> extract(std::string_view text, std::string_view domain) const = 0;
};

/// Built-in extractor: longest gazetteer match (case-insensitive, whole words), unioned with
/// maximal runs of capitalized words that do not open a sentence, and double-quoted spans.
class GazetteerExtractor final : public Extractor {
 public:
  explicit GazetteerExtractor(const std::vector<std::string>& phrases = {});
  /// One phrase per line; blank lines ignored.
  static GazetteerExtractor load(const std::filesystem::path& path);

  std::vector<ConceptSpan> extract(std::string_view text, std::string_view domain) const override;

 private:
  std::unordered_map<std::string, bool> phrases_;
  std::size_t max_words_ = 0;
};

/// POST /v1/extract {"text": s, "domain": s} -> {"entities": [{"text": s, "start": int, "end": int}]}
/// with start/end counted in characters (code points) of the request text.
class RemoteExtractor final : public Extractor {
 public:
  explicit RemoteExtractor(HttpJsonClient client) : client_(std::move(client)) {}

  /// Throws TransportError on network failure and ProtocolError on a malformed payload.
  std::vector<ConceptSpan> extract(std::string_view text, std::string_view domain) const override;

 private:
  HttpJsonClient client_;
};

/// Runs the extractor, drops out-of-bounds or overlapping spans (longer spans win), and
/// returns the rest sorted by start. Throws ContractViolation on an empty instruction.
std::vector<ConceptSpan> extract_entities(const Extractor& extractor, std::string_view instruction,
                                          std::string_view domain);

/// Fuses position-sorted spans separated only by whitespace or hyphens into merged spans.
std::vector<ConceptSpan> group_concepts(std::vector<ConceptSpan> spans, std::string_view instruction);

struct FilterResult {
  std::vector<ConceptSpan> kept;
  std::vector<ConceptSpan> dropped;
};

/// Drops a span iff every word is common: lowercase as written, in the dictionary, and ranked
/// within the common cutoff.
FilterResult filter_concepts(std::vector<ConceptSpan> spans, const FrequencyDictionary& dict);

/// Frequency rank of a word. Capitalized and unknown words rank at dict.size().
std::size_t word_rank(std::string_view word, const FrequencyDictionary& dict);

/// log f = -sum_j rank_j / H over the concept's words.
double log_frequency_score(std::string_view concept_text, const FrequencyDictionary& dict, double h_norm);
inline double log_frequency_score(const ConceptSpan& concept_span, const FrequencyDictionary& dict, double h_norm) {
  return log_frequency_score(concept_span.text, dict, h_norm);
}

}  // namespace famguard
