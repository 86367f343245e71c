#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "famguard/errors.hpp"
#include "famguard/lm.hpp"
#include "support.hpp"

using namespace famguard;
using nlohmann::json;
using testing_support::fixture;
using testing_support::table;

namespace {

json abc_table() {
  return {{"vocab", {"A", "B", "C", "<eos>"}},
          {"eos", "<eos>"},
          {"rows", {{{"context", json::array()}, {"dist", {{"A", 0.7}, {"B", 0.2}, {"C", 0.05}, {"<eos>", 0.05}}}}}},
          {"fallback", {{"<eos>", 1.0}}}};
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("table row is returned verbatim") {
  auto m = table(abc_table());
  const auto d = m->next_distribution(TokenSeq{});
  CHECK(d.probs == std::vector<double>{0.7, 0.2, 0.05, 0.05});
}

TEST_CASE("table falls back for unknown contexts") {
  auto m = table(abc_table());
  CHECK(m->next_distribution(TokenSeq{0, 1}).probs == std::vector<double>{0, 0, 0, 1});
  auto doc = abc_table();
  doc["rows"] = json::array();
  auto empty = table(doc);
  CHECK(empty->next_distribution(TokenSeq{}).probs == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("table row not summing to one is rejected with its context") {
  auto doc = abc_table();
  doc["rows"].push_back({{"context", {"A", "B"}}, {"dist", {{"A", 0.5}, {"B", 0.4}}}});
  try {
    table(doc);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find("A") != std::string::npos);
    CHECK(what.find("B") != std::string::npos);
  }
}

TEST_CASE("zero probabilities become -inf log probabilities") {
  auto doc = abc_table();
  doc["fallback"] = {{"A", 0.5}, {"<eos>", 0.5}};
  auto m = table(doc);
  const auto lp = m->next_logprobs(TokenSeq{2});
  CHECK(lp[0] == doctest::Approx(std::log(0.5)));
  CHECK(std::isinf(lp[1]));
  CHECK(lp[1] < 0);
}

TEST_CASE("invalid token ids violate the contract") {
  auto m = table(abc_table());
  CHECK_THROWS_AS(m->next_distribution(TokenSeq{4}), ContractViolation);
  CHECK_THROWS_AS(m->next_distribution(TokenSeq{-1}), ContractViolation);
}

TEST_CASE("toy tokenizer") {
  auto m = table({{"vocab", {"alpha", "beta", "<eos>", ".", "\""}}, {"eos", "<eos>"}, {"fallback", {{"<eos>", 1.0}}}});
  CHECK(m->tokenize("alpha beta") == TokenSeq{0, 1});
  CHECK(m->detokenize(TokenSeq{}) == "");
  CHECK(m->tokenize("alpha. \"beta\"") == TokenSeq{0, 3, 4, 1, 4});
  CHECK(m->detokenize(m->tokenize("alpha. \"beta\"")) == "alpha. \"beta\"");
  CHECK(m->detokenize(m->tokenize("  alpha\t\tbeta ")) == "alpha beta");
  try {
    m->tokenize("alpha gamma");
    FAIL("expected OovError");
  } catch (const OovError& e) {
    CHECK(e.word() == "gamma");
    CHECK(std::string(e.what()).find("gamma") != std::string::npos);
  }
}

TEST_CASE("split and join words") {
  CHECK(split_words("Hello, world!") == std::vector<std::string>{"Hello", ",", "world", "!"});
  CHECK(split_words("debt-ceiling") == std::vector<std::string>{"debt", "-", "ceiling"});
  const std::vector<std::string> w{"It", "costs", "$", "5", "(", "roughly", ")", "."};
  CHECK(join_words(w) == "It costs $5 (roughly).");
  CHECK(join_words(split_words("a debt-ceiling crisis, \"quoted\" text.")) == "a debt-ceiling crisis, \"quoted\" text.");
}

TEST_CASE("unigram counts with additive smoothing") {
  // Independent count: A appears 2 times, B once, eos never, 3 tokens, |V| = 3, alpha = 1.
  Vocab v({"A", "B", "<eos>"}, "<eos>");
  auto m = build_ngram_lm(NgramLmSpec{v, 1, {{0, 0, 1}}, 1.0});
  const auto d = m->next_distribution(TokenSeq{});
  CHECK(d.probs[0] == doctest::Approx(3.0 / 6.0).epsilon(1e-15));
  CHECK(d.probs[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
  CHECK(d.probs[2] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("bigram approaches the empirical estimate as alpha shrinks") {
  Vocab v({"A", "B", "<eos>"}, "<eos>");
  auto m = build_ngram_lm(NgramLmSpec{v, 2, {{0, 1, 2}}, 1e-9});
  CHECK(m->next_distribution(TokenSeq{0}).probs[1] > 1.0 - 1e-8);
  // History padded with the begin marker: after nothing, A follows.
  CHECK(m->next_distribution(TokenSeq{}).probs[0] > 1.0 - 1e-8);
}

TEST_CASE("n-gram spec validation") {
  Vocab v({"A", "<eos>"}, "<eos>");
  CHECK_THROWS_AS(build_ngram_lm(NgramLmSpec{v, 1, {}, 1.0}), ValidationError);
  CHECK_THROWS_AS(build_ngram_lm(NgramLmSpec{v, 0, {{0}}, 1.0}), ValidationError);
  CHECK_THROWS_AS(build_ngram_lm(NgramLmSpec{v, 1, {{0}}, 0.0}), ValidationError);
}

TEST_CASE("property: n-gram distributions are normalized, deterministic, and order-1 context free") {
  std::mt19937_64 rng(7);
  Vocab v({"a", "b", "c", "d", "<eos>"}, "<eos>");
  std::vector<TokenSeq> corpus;
  std::uniform_int_distribution<int> tok(0, 4);
  for (int i = 0; i < 20; ++i) {
    TokenSeq s;
    for (int j = 0; j < 6; ++j) s.push_back(tok(rng));
    corpus.push_back(s);
  }
  auto uni = build_ngram_lm(NgramLmSpec{v, 1, corpus, 0.5});
  auto tri = build_ngram_lm(NgramLmSpec{v, 3, corpus, 0.5});
  const auto base = uni->next_distribution(TokenSeq{}).probs;
  for (int i = 0; i < 1000; ++i) {
    TokenSeq ctx;
    const int len = tok(rng) + tok(rng);
    for (int j = 0; j < len; ++j) ctx.push_back(tok(rng));
    const auto u = uni->next_distribution(ctx).probs;
    CHECK(u == base);
    const auto t1 = tri->next_distribution(ctx).probs;
    const auto t2 = tri->next_distribution(ctx).probs;
    CHECK(t1 == t2);
    CHECK(std::abs(sum(t1) - 1.0) < 1e-9);
  }
}

TEST_CASE("toy model files load by type") {
  auto toy = load_toy_lm(fixture("toy_lm.json"));
  CHECK(toy->tokenize("Tell me about Pepsi.").size() == 5);
  CHECK_THROWS_AS(load_toy_lm(fixture("does_not_exist.json")), IoError);

  const json ngram = {{"type", "ngram"}, {"order", 2}, {"alpha", 0.1}, {"eos", "<eos>"}, {"corpus", {"a b", "b a"}}};
  auto spec = parse_ngram_lm_spec(ngram);
  CHECK(spec.vocab.tokens() == std::vector<std::string>{"a", "b", "<eos>"});
  // Each corpus line is terminated with eos.
  CHECK(spec.corpus.front() == TokenSeq{0, 1, 2});
}
