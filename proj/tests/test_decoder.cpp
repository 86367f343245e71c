#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "famguard/decoder.hpp"
#include "famguard/errors.hpp"
#include "famguard/log.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace famguard;
using nlohmann::json;
using testing_support::table;

namespace {

// A=0 B=1 C=2 eos=3
json chain_table() {
  return {{"vocab", {"A", "B", "C", "<eos>"}},
          {"eos", "<eos>"},
          {"rows",
           {{{"context", json::array()}, {"dist", {{"A", 0.7}, {"B", 0.2}, {"<eos>", 0.1}}}},
            {{"context", {"A"}}, {"dist", {{"B", 0.6}, {"C", 0.3}, {"<eos>", 0.1}}}},
            {{"context", {"A", "B"}}, {"dist", {{"<eos>", 0.9}, {"C", 0.1}}}}}},
          {"fallback", {{"<eos>", 0.5}, {"A", 0.25}, {"C", 0.25}}}};
}

struct SilenceLog {
  log::Sink prev = log::set_sink([](const json&) {});
  ~SilenceLog() { log::set_sink(prev); }
};

}  // namespace

TEST_CASE("sequence scores") {
  const std::vector<double> lp{std::log(0.9), std::log(0.9)};
  CHECK(sequence_score(lp, ScoreMode::mean_logprob) == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(sequence_score(lp, ScoreMode::joint) == doctest::Approx(0.81).epsilon(1e-14));
  CHECK_THROWS_AS(sequence_score(std::vector<double>{}, ScoreMode::joint), ContractViolation);
  CHECK(parse_score_mode("joint") == ScoreMode::joint);
  CHECK_THROWS_AS(parse_score_mode("sum"), UsageError);
}

TEST_CASE("greedy follows the argmax chain") {
  auto m = table(chain_table());
  const auto r = greedy_search(*m, TokenSeq{}, 10);
  CHECK(r.tokens == TokenSeq{0, 1, 3});
  REQUIRE(r.token_probs.size() == 3);
  CHECK(r.token_probs[0] == doctest::Approx(0.7));
  CHECK(r.token_probs[1] == doctest::Approx(0.6));
  CHECK(r.token_probs[2] == doctest::Approx(0.9));
  CHECK(r.finished);
  CHECK(r.content_tokens() == TokenSeq{0, 1});
  CHECK(r.content_logprobs().size() == 2);
}

TEST_CASE("greedy max_len and tie-break") {
  auto m = table(chain_table());
  const auto one = greedy_search(*m, TokenSeq{}, 1);
  CHECK(one.tokens.size() == 1);
  CHECK_FALSE(one.finished);
  auto tie = table({{"vocab", {"A", "B", "<eos>"}}, {"eos", "<eos>"}, {"fallback", {{"A", 0.5}, {"B", 0.5}}}});
  CHECK(greedy_search(*tie, TokenSeq{}, 1).tokens == TokenSeq{0});
}

TEST_CASE("force decoding reproduces greedy probabilities exactly") {
  auto m = table(chain_table());
  const auto g = greedy_search(*m, TokenSeq{}, 10);
  const auto f = force_decode(*m, TokenSeq{}, g.tokens, true);
  CHECK(f.token_probs == g.token_probs);
  CHECK(f.token_logprobs == g.token_logprobs);
  REQUIRE(f.distributions.size() == 3);
  CHECK(f.distributions[0] == m->next_logprobs(TokenSeq{}));

  const auto single = force_decode(*m, TokenSeq{0}, TokenSeq{2}, false);
  CHECK(single.token_probs == std::vector<double>{m->next_distribution(TokenSeq{0}).probs[2]});
  CHECK(single.distributions.empty());
  const auto be = force_decode(*m, TokenSeq{0}, TokenSeq{1, 3}, false);
  CHECK(be.token_probs[0] == doctest::Approx(0.6));
  CHECK(be.token_probs[1] == doctest::Approx(0.9));
  CHECK_THROWS_AS(force_decode(*m, TokenSeq{}, TokenSeq{}, false), ContractViolation);
}

TEST_CASE("sampling is reproducible and seeded per call") {
  auto m = table(chain_table());
  const auto a = sample_k(*m, TokenSeq{}, 8, 10, 1.0, 42);
  const auto b = sample_k(*m, TokenSeq{}, 8, 10, 1.0, 42);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].token_probs == b[i].token_probs);
  }
  CHECK_THROWS_AS(sample_k(*m, TokenSeq{}, 8, 2, 0.0, 42), ValidationError);
  CHECK_THROWS_AS(sample_k(*m, TokenSeq{}, 8, 0, 1.0, 42), ContractViolation);
}

TEST_CASE("sampling a deterministic model equals greedy") {
  auto m = table({{"vocab", {"A", "B", "<eos>"}},
                  {"eos", "<eos>"},
                  {"rows",
                   {{{"context", json::array()}, {"dist", {{"B", 1.0}}}},
                    {{"context", {"B"}}, {"dist", {{"A", 1.0}}}}}},
                  {"fallback", {{"<eos>", 1.0}}}});
  const auto g = greedy_search(*m, TokenSeq{}, 10);
  for (const auto& s : sample_k(*m, TokenSeq{}, 10, 5, 0.7, 3)) CHECK(s.tokens == g.tokens);
}

TEST_CASE("fair first step is sampled fairly") {
  // 10000 Bernoulli(0.5) draws have standard deviation 0.005; 0.49-0.51 is a 2-sigma band.
  auto m = table({{"vocab", {"A", "B", "<eos>"}},
                  {"eos", "<eos>"},
                  {"rows", {{{"context", json::array()}, {"dist", {{"A", 0.5}, {"B", 0.5}}}}}},
                  {"fallback", {{"<eos>", 1.0}}}});
  const auto samples = sample_k(*m, TokenSeq{}, 1, 10000, 1.0, 42);
  double a = 0;
  for (const auto& s : samples) a += s.tokens[0] == 0;
  CHECK(a / 10000.0 >= 0.49);
  CHECK(a / 10000.0 <= 0.51);
}

TEST_CASE("constraint sets") {
  CHECK(ConstraintSet(std::vector<TokenSeq>{{1, 2}, {1, 2}, {3}}).variants().size() == 2);
  CHECK(ConstraintSet(std::vector<TokenSeq>{{1, 2}, {3}}).min_length() == 1);
  CHECK(ConstraintSet(std::vector<TokenSeq>{{1, 2}, {3}}).max_length() == 2);
  CHECK_THROWS_AS(ConstraintSet({}), ContractViolation);
  CHECK_THROWS_AS(ConstraintSet(std::vector<TokenSeq>{{}}), ContractViolation);
  CHECK_THROWS_AS(ConstraintSet(std::vector<TokenSeq>{{1}, {2}, {3}, {4}}), ContractViolation);
}

TEST_CASE("an unbinding constraint returns the greedy score") {
  // A is the most probable token in every context.
  auto m = table({{"vocab", {"A", "B", "<eos>"}}, {"eos", "<eos>"}, {"fallback", {{"A", 0.6}, {"B", 0.1}, {"<eos>", 0.3}}}});
  const auto g = greedy_search(*m, TokenSeq{}, 4);
  const auto r = constrained_beam_search(*m, TokenSeq{}, ConstraintSet(std::vector<TokenSeq>{{0}}), {5, 4, ScoreMode::mean_logprob});
  REQUIRE_FALSE(r.hypotheses.empty());
  CHECK(r.best_score() == doctest::Approx(sequence_score(g.content_logprobs(), ScoreMode::mean_logprob)));
}

TEST_CASE("an impossible constraint yields nothing") {
  auto never = table({{"vocab", {"A", "B", "Z", "<eos>"}},
                      {"eos", "<eos>"},
                      {"fallback", {{"A", 0.5}, {"B", 0.3}, {"<eos>", 0.2}}}});
  const auto r = constrained_beam_search(*never, TokenSeq{}, ConstraintSet(std::vector<TokenSeq>{{2}}), {30, 6, ScoreMode::mean_logprob});
  CHECK(r.hypotheses.empty());
  CHECK(r.best_score() == 0.0);
}

TEST_CASE("short max_len is raised with a warning") {
  SilenceLog quiet;
  auto m = table(chain_table());
  const auto r = constrained_beam_search(*m, TokenSeq{}, ConstraintSet(std::vector<TokenSeq>{{0, 1, 2}}), {5, 2, ScoreMode::mean_logprob});
  CHECK(r.effective_max_len == 5);
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("returned hypotheses contain a variant and are sorted") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = oracle::random_table_lm(rng, 5, 4);
    const ConstraintSet cs({{1}, {2, 0}});
    const auto r = constrained_beam_search(*m, TokenSeq{}, cs, {8, 4, ScoreMode::mean_logprob});
    for (std::size_t i = 0; i < r.hypotheses.size(); ++i) {
      const auto content = r.hypotheses[i].response.content_tokens();
      CHECK((oracle::contains_run(content, {1}) || oracle::contains_run(content, {2, 0})));
      const auto text = m->detokenize(content);
      CHECK((text.find("b") != std::string::npos || text.find("c a") != std::string::npos));
      if (i > 0) CHECK(r.hypotheses[i - 1].score >= r.hypotheses[i].score);
    }
    CHECK(r.hypotheses.size() <= 8);
  }
}

TEST_CASE("property: exhaustive beam matches brute-force enumeration") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick_vocab(3, 6);
  std::uniform_int_distribution<int> pick_len(2, 4);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t v = static_cast<std::size_t>(pick_vocab(rng));
    const std::size_t len = static_cast<std::size_t>(pick_len(rng));
    auto m = oracle::random_table_lm(rng, v, len);
    std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(v) - 2);
    std::vector<TokenSeq> variants{{tok(rng)}};
    if (len > 2) variants.push_back({tok(rng), tok(rng)});
    std::size_t beam = 1;
    for (std::size_t i = 0; i < len; ++i) beam *= v;
    const auto mode = trial % 2 ? ScoreMode::joint : ScoreMode::mean_logprob;

    const auto r = constrained_beam_search(*m, TokenSeq{}, ConstraintSet(variants), {beam, len, mode});
    const auto all = oracle::enumerate_constrained(*m, TokenSeq{}, variants, len, mode == ScoreMode::joint);
    const double expect = oracle::best_score(all);
    CHECK(r.best_score() == doctest::Approx(expect).epsilon(1e-12));

    std::set<TokenSeq> got, want;
    for (const auto& h : r.hypotheses) got.insert(h.response.tokens);
    for (const auto& e : all) want.insert(e.tokens);
    CHECK(got == want);
  }
}

TEST_CASE("property: raising probabilities along the optimal path never lowers the top score") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto base = oracle::random_table_lm(rng, 4, 3, 0.0);
    const std::vector<TokenSeq> variants{{1}};
    const auto all = oracle::enumerate_constrained(*base, TokenSeq{}, variants, 3);
    const auto best = *std::max_element(all.begin(), all.end(),
                                        [](const auto& a, const auto& b) { return a.score < b.score; });
    // Rebuild the table, boosting every token on the optimal path.
    auto table_model = std::dynamic_pointer_cast<const TableLm>(base);
    REQUIRE(table_model);
    TableLmSpec spec{table_model->vocab(), {}, NextTokenDistribution{std::vector<double>(4, 0.25)}};
    std::vector<TokenSeq> contexts{{}};
    for (int d = 0; d < 3; ++d) {
      std::vector<TokenSeq> next;
      for (const auto& c : contexts) {
        auto probs = base->next_distribution(c).probs;
        TokenSeq prefix(best.tokens.begin(), best.tokens.begin() + std::min<std::size_t>(c.size(), best.tokens.size()));
        if (c.size() < best.tokens.size() && c == prefix) {
          const auto t = static_cast<std::size_t>(best.tokens[c.size()]);
          const double boosted = probs[t] + 0.5 * (1.0 - probs[t]);
          const double scale = (1.0 - boosted) / (1.0 - probs[t]);
          for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = k == t ? boosted : probs[k] * scale;
        }
        spec.rows.emplace(c, NextTokenDistribution{probs});
        for (TokenId t = 0; t < 3; ++t) {
          auto n = c;
          n.push_back(t);
          next.push_back(n);
        }
      }
      contexts = std::move(next);
    }
    auto boosted = build_table_lm(spec);
    const auto before = constrained_beam_search(*base, TokenSeq{}, ConstraintSet(variants), {64, 3, ScoreMode::mean_logprob});
    const auto after = constrained_beam_search(*boosted, TokenSeq{}, ConstraintSet(variants), {64, 3, ScoreMode::mean_logprob});
    CHECK(after.best_score() >= before.best_score() - 1e-15);
  }
}

TEST_CASE("padding the context with inert tokens leaves scores unchanged") {
  // Every row depends only on the last token, so a leading pad token changes nothing.
  Vocab v({"P", "A", "B", "<eos>"}, "<eos>");
  auto last_token_model = [&](bool padded) {
    TableLmSpec spec{v, {}, NextTokenDistribution{{0.0, 0.3, 0.3, 0.4}}};
    const TokenSeq pad = padded ? TokenSeq{0} : TokenSeq{};
    auto with = [&](TokenSeq tail) {
      TokenSeq c = pad;
      c.insert(c.end(), tail.begin(), tail.end());
      return c;
    };
    spec.rows.emplace(with({}), NextTokenDistribution{{0.0, 0.6, 0.3, 0.1}});
    spec.rows.emplace(with({1}), NextTokenDistribution{{0.0, 0.1, 0.7, 0.2}});
    return build_table_lm(spec);
  };
  auto plain = last_token_model(false);
  auto padded = last_token_model(true);
  const auto a = constrained_beam_search(*plain, TokenSeq{}, ConstraintSet(std::vector<TokenSeq>{{2}}), {16, 4, ScoreMode::mean_logprob});
  const auto b = constrained_beam_search(*padded, TokenSeq{0}, ConstraintSet(std::vector<TokenSeq>{{2}}), {16, 4, ScoreMode::mean_logprob});
  CHECK(a.best_score() == b.best_score());
}
