#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "famguard/concepts.hpp"
#include "famguard/errors.hpp"
#include "support.hpp"

using namespace famguard;
using testing_support::fixture;

namespace {

std::vector<std::string> texts(const std::vector<ConceptSpan>& spans) {
  std::vector<std::string> out;
  for (const auto& s : spans) out.push_back(s.text);
  return out;
}

ConceptSpan span_of(std::string_view instruction, std::string_view text) {
  const auto pos = instruction.find(text);
  REQUIRE(pos != std::string_view::npos);
  return ConceptSpan{std::string(text), pos, pos + text.size(), SpanOrigin::extracted};
}

FrequencyDictionary ranked(std::vector<std::pair<std::string, std::size_t>> words, std::size_t size,
                           std::size_t cutoff) {
  std::vector<std::string> lines(size);
  for (auto& [w, r] : words) lines[r - 1] = w;
  for (std::size_t i = 0; i < size; ++i) {
    if (lines[i].empty()) lines[i] = "filler" + std::to_string(i);
  }
  return FrequencyDictionary(lines, cutoff);
}

}  // namespace

TEST_CASE("gazetteer hit") {
  GazetteerExtractor g({"Pepsi"});
  const auto spans = extract_entities(g, "Explain Pepsi.", "");
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == ConceptSpan{"Pepsi", 8, 13, SpanOrigin::extracted});
}

TEST_CASE("extraction preconditions and empty results") {
  GazetteerExtractor g;
  CHECK_THROWS_AS(extract_entities(g, "", ""), ContractViolation);
  CHECK(extract_entities(g, "the cat sat", "").empty());
}

TEST_CASE("gazetteer is case-insensitive and longest-first") {
  GazetteerExtractor g({"united states", "united", "debt-ceiling crisis"});
  const std::string s = "the United States faces a debt-ceiling crisis";
  CHECK(texts(extract_entities(g, s, "")) == std::vector<std::string>{"United States", "debt-ceiling crisis"});
}

TEST_CASE("capitalized runs skip sentence starts and quoted spans are kept") {
  GazetteerExtractor g;
  CHECK(texts(extract_entities(g, "Where is New York City? Tell me.", "")) == std::vector<std::string>{"New York City"});
  CHECK(texts(extract_entities(g, "what does \"zero shot\" mean", "")) == std::vector<std::string>{"zero shot"});
  CHECK(extract_entities(g, "Yes I know.", "").empty());
}

TEST_CASE("grouping fuses the split debt-ceiling example") {
  const std::string s = "Tell me about the 2023 United States debt-ceiling crisis today.";
  std::vector<ConceptSpan> spans{span_of(s, "2023"), span_of(s, "United States"), span_of(s, "debt-ceiling crisis")};
  const auto g = group_concepts(spans, s);
  REQUIRE(g.size() == 1);
  CHECK(g[0].text == "2023 United States debt-ceiling crisis");
  CHECK(g[0].origin == SpanOrigin::merged);
  CHECK(s.substr(g[0].start, g[0].end - g[0].start) == g[0].text);
}

TEST_CASE("grouping leaves singletons and non-adjacent spans alone") {
  const std::string s = "Pepsi and Cola";
  std::vector<ConceptSpan> one{span_of(s, "Pepsi")};
  CHECK(group_concepts(one, s) == one);
  std::vector<ConceptSpan> two{span_of(s, "Pepsi"), span_of(s, "Cola")};
  CHECK(group_concepts(two, s) == two);
}

TEST_CASE("filtering drops all-common spans only") {
  const auto dict = ranked({{"year", 120}, {"tax", 900}, {"age", 300}}, 20000, 10000);
  const std::string s = "year Beyfortus tax year";
  auto result = filter_concepts({span_of(s, "year"), span_of(s, "Beyfortus"), span_of(s, "tax year")}, dict);
  CHECK(texts(result.kept) == std::vector<std::string>{"Beyfortus"});
  CHECK(texts(result.dropped) == std::vector<std::string>{"year", "tax year"});
}

TEST_CASE("word ranks") {
  const auto dict = FrequencyDictionary::load(fixture("freq_dict.txt"), 10000);
  CHECK(dict.rank("a") == 5u);
  CHECK(word_rank("a", dict) == 5u);
  CHECK(word_rank("Paris", dict) == dict.size());
  CHECK(word_rank("zqxv", dict) == dict.size());
  CHECK(word_rank("the,", dict) == 1u);
  CHECK(dict.common_cutoff() == dict.size());
  CHECK_THROWS_AS(FrequencyDictionary::load(fixture("missing.txt")), IoError);
}

TEST_CASE("log frequency scores") {
  const auto dict = ranked({{"alpha", 200}, {"beta", 300}}, 50000, 10000);
  CHECK(log_frequency_score("alpha", dict, 100.0) == -2.0);
  CHECK(std::exp(log_frequency_score("alpha", dict, 100.0)) == doctest::Approx(0.1353).epsilon(1e-4));
  CHECK(log_frequency_score("alpha beta", dict, 100.0) == -5.0);
  CHECK(log_frequency_score("zqxv", dict, 100.0) == -500.0);
  CHECK(log_frequency_score("alpha-beta", dict, 100.0) == -5.0);
  CHECK_THROWS_AS(log_frequency_score("alpha", dict, 0.0), ContractViolation);
}

TEST_CASE("property: grouping is idempotent and verbatim") {
  std::mt19937_64 rng(1);
  const std::vector<std::string> words{"Alpha", "beta", "Gamma", "delta", "-", "and", "Epsilon", "zeta", ","};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(1, 12);
  GazetteerExtractor g({"beta", "delta zeta", "zeta"});
  for (int i = 0; i < 1000; ++i) {
    std::string s = "Start";
    for (int k = len(rng); k > 0; --k) s += " " + words[pick(rng)];
    const auto spans = extract_entities(g, s, "");
    const auto once = group_concepts(spans, s);
    CHECK(group_concepts(once, s) == once);
    for (const auto& c : once) CHECK(s.substr(c.start, c.end - c.start) == c.text);
  }
}

TEST_CASE("property: filtering never drops a span holding a rare word") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> rank(1, 3000);
  std::uniform_int_distribution<int> nwords(1, 4);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::pair<std::string, std::size_t>> lex;
    std::string text;
    bool has_rare = false;
    const std::size_t cutoff = 1500;
    for (int k = nwords(rng); k > 0; --k) {
      const std::string w = "w" + std::to_string(i) + "x" + std::to_string(k);
      const std::size_t r = rank(rng);
      lex.emplace_back(w, r);
      has_rare = has_rare || r > cutoff;
      text += (text.empty() ? "" : " ") + w;
    }
    // Ranks must be unique for the synthetic dictionary.
    std::sort(lex.begin(), lex.end(), [](auto& a, auto& b) { return a.second < b.second; });
    for (std::size_t k = 1; k < lex.size(); ++k) {
      if (lex[k].second <= lex[k - 1].second) lex[k].second = lex[k - 1].second + 1;
    }
    has_rare = std::any_of(lex.begin(), lex.end(), [&](auto& p) { return p.second > cutoff; });
    const auto dict = ranked(lex, 5000, cutoff);
    const auto result = filter_concepts({ConceptSpan{text, 0, text.size(), SpanOrigin::extracted}}, dict);
    CHECK(result.kept.size() == (has_rare ? 1u : 0u));
  }
}

TEST_CASE("property: log frequency strictly decreases with rank and length") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> rank(1, 999);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t r = rank(rng);
    const auto dict = ranked({{"lo", r}, {"hi", r + 1}, {"x", 1000}}, 2000, 10);
    CHECK(log_frequency_score("hi", dict, 100.0) < log_frequency_score("lo", dict, 100.0));
    CHECK(log_frequency_score("lo x", dict, 100.0) < log_frequency_score("lo", dict, 100.0));
  }
}

TEST_CASE("property: pipeline output is sorted and non-overlapping") {
  std::mt19937_64 rng(4);
  const std::vector<std::string> words{"Pepsi", "cola", "United", "States", "the", "\"quoted", "text\"", "crisis", "."};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(1, 10);
  GazetteerExtractor g({"pepsi cola", "cola", "states crisis", "the"});
  const auto dict = ranked({{"the", 1}, {"cola", 2}}, 100, 10);
  for (int i = 0; i < 1000; ++i) {
    std::string s = "Go";
    for (int k = len(rng); k > 0; --k) s += " " + words[pick(rng)];
    const auto out = filter_concepts(group_concepts(extract_entities(g, s, ""), s), dict).kept;
    for (std::size_t k = 1; k < out.size(); ++k) CHECK(out[k - 1].end <= out[k].start);
  }
}
