#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include "famguard/baselines.hpp"
#include "famguard/concepts.hpp"
#include "famguard/decoder.hpp"
#include "famguard/errors.hpp"
#include "famguard/remote_lm.hpp"
#include "support.hpp"

using namespace famguard;
using nlohmann::json;

namespace {

/// In-process server on an ephemeral port, stopped on destruction.
class TestServer {
 public:
  TestServer() = default;
  ~TestServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  void get(const std::string& path, std::function<json()> f) {
    server_.Get(path, [f](const httplib::Request&, httplib::Response& res) {
      res.set_content(f().dump(), "application/json");
    });
  }
  void post(const std::string& path, std::function<json(const json&)> f) {
    server_.Post(path, [f](const httplib::Request& req, httplib::Response& res) {
      res.set_content(f(json::parse(req.body)).dump(), "application/json");
    });
  }
  void raw_post(const std::string& path, int status, const std::string& body) {
    server_.Post(path, [status, body](const httplib::Request&, httplib::Response& res) {
      res.status = status;
      res.set_content(body, "application/json");
    });
  }

  std::string start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return "http://127.0.0.1:" + std::to_string(port_);
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

// Vocab: A=0, B=1, <eos>=2. After any context: A .6, B impossible (null), eos .4,
// except after a trailing A: A .1, B .2, eos .7.
json row_for(const json& ctx) {
  if (!ctx.empty() && ctx.back() == 0) return json::array({std::log(0.1), std::log(0.2), std::log(0.7)});
  return json::array({std::log(0.6), nullptr, std::log(0.4)});
}

void serve_word_model(TestServer& s, std::atomic<int>* logprob_calls = nullptr) {
  s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 2}}; });
  s.post("/v1/tokenize", [](const json& body) {
    json toks = json::array();
    const auto text = body.at("text").get<std::string>();
    for (char ch : text) {
      if (ch == 'A') toks.push_back(0);
      if (ch == 'B') toks.push_back(1);
    }
    return json{{"tokens", toks}};
  });
  s.post("/v1/detokenize", [](const json& body) {
    std::string out;
    for (int t : body.at("tokens")) {
      if (!out.empty()) out += ' ';
      out += t == 0 ? "A" : t == 1 ? "B" : "<eos>";
    }
    return json{{"text", out}};
  });
  s.post("/v1/logprobs", [logprob_calls](const json& body) {
    if (logprob_calls) ++*logprob_calls;
    json rows = json::array();
    for (const auto& ctx : body.at("batch")) rows.push_back(row_for(ctx));
    return json{{"logprobs", rows}};
  });
}

}  // namespace

TEST_CASE("remote model speaks the inference protocol") {
  TestServer s;
  std::atomic<int> calls{0};
  serve_word_model(s, &calls);
  auto m = connect_remote_lm(s.start());
  CHECK(m->vocab_size() == 3);
  CHECK(m->eos_id() == 2);
  CHECK(m->tokenize("A B A") == TokenSeq{0, 1, 0});
  CHECK(m->detokenize(TokenSeq{0, 1}) == "A B");

  const auto row = m->next_logprobs(TokenSeq{1});
  CHECK(row[0] == doctest::Approx(std::log(0.6)));
  CHECK(std::isinf(row[1]));
  CHECK(row[1] < 0);

  const auto batch = m->next_logprobs_batch(std::vector<TokenSeq>{{0}, {1}});
  REQUIRE(batch.size() == 2);
  CHECK(batch[0][2] == doctest::Approx(std::log(0.7)));
  CHECK(batch[1][0] == doctest::Approx(std::log(0.6)));
}

TEST_CASE("remote greedy decoding matches the equivalent table model") {
  TestServer s;
  serve_word_model(s);
  auto remote = connect_remote_lm(s.start());
  auto local = testing_support::table({{"vocab", {"A", "B", "<eos>"}},
                                       {"eos", "<eos>"},
                                       {"rows", {{{"context", {"B", "A"}}, {"dist", {{"A", 0.1}, {"B", 0.2}, {"<eos>", 0.7}}}}}},
                                       {"fallback", {{"A", 0.6}, {"<eos>", 0.4}}}});
  const auto r = greedy_search(*remote, TokenSeq{1}, 5);
  const auto l = greedy_search(*local, TokenSeq{1}, 5);
  CHECK(r.tokens == l.tokens);
  REQUIRE(r.token_logprobs.size() == l.token_logprobs.size());
  for (std::size_t i = 0; i < r.token_logprobs.size(); ++i) CHECK(r.token_logprobs[i] == doctest::Approx(l.token_logprobs[i]).epsilon(1e-12));
}

TEST_CASE("remote model protocol errors") {
  SUBCASE("bad vocabulary descriptor") {
    TestServer s;
    s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 7}}; });
    CHECK_THROWS_AS(connect_remote_lm(s.start()), ProtocolError);
  }
  SUBCASE("wrong row length") {
    TestServer s;
    s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 2}}; });
    s.post("/v1/logprobs", [](const json&) { return json{{"logprobs", {{0.0, 0.0}}}}; });
    auto m = connect_remote_lm(s.start());
    CHECK_THROWS_WITH_AS(m->next_logprobs(TokenSeq{0}), doctest::Contains("row length"), ProtocolError);
  }
  SUBCASE("wrong batch size") {
    TestServer s;
    s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 2}}; });
    s.post("/v1/logprobs", [](const json&) { return json{{"logprobs", json::array()}}; });
    auto m = connect_remote_lm(s.start());
    CHECK_THROWS_AS(m->next_logprobs(TokenSeq{0}), ProtocolError);
  }
  SUBCASE("non-JSON body") {
    TestServer s;
    s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 2}}; });
    s.raw_post("/v1/logprobs", 200, "not json");
    auto m = connect_remote_lm(s.start());
    CHECK_THROWS_AS(m->next_logprobs(TokenSeq{0}), ProtocolError);
  }
  SUBCASE("server error status") {
    TestServer s;
    s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 2}}; });
    s.raw_post("/v1/tokenize", 500, "{}");
    auto m = connect_remote_lm(s.start());
    CHECK_THROWS_AS(m->tokenize("A"), TransportError);
  }
}

TEST_CASE("transport failures") {
  // Grab a free port, then release it so nothing is listening.
  std::string url;
  {
    TestServer s;
    s.get("/v1/vocab", [] { return json{{"size", 3}, {"eos_id", 2}}; });
    url = s.start();
  }
  CHECK_THROWS_AS(connect_remote_lm(url), TransportError);
  CHECK_THROWS_AS(HttpJsonClient("ftp://example.org"), UsageError);
}

TEST_CASE("remote extractor maps character offsets to bytes") {
  TestServer s;
  s.post("/v1/extract", [](const json& body) {
    CHECK(body.at("domain") == "drinks");
    // "Café Pepsi": Pepsi starts at character 5 and byte 6.
    return json{{"entities", {{{"text", "Pepsi"}, {"start", 5}, {"end", 10}}}}};
  });
  RemoteExtractor ex{HttpJsonClient(s.start())};
  const auto spans = ex.extract("Café Pepsi", "drinks");
  REQUIRE(spans.size() == 1);
  CHECK(spans[0].text == "Pepsi");
  CHECK(spans[0].start == 6);
  CHECK(spans[0].end == 11);
}

TEST_CASE("remote extractor rejects inconsistent entities") {
  TestServer s;
  s.post("/v1/extract", [](const json&) { return json{{"entities", {{{"text", "Coke"}, {"start", 0}, {"end", 4}}}}}; });
  CHECK_THROWS_WITH_AS(RemoteExtractor{HttpJsonClient(s.start())}.extract("Pepsi", "general"),
                       doctest::Contains("does not match"), ProtocolError);

  TestServer other;
  other.post("/v1/extract", [](const json&) { return json{{"spans", json::array()}}; });
  CHECK_THROWS_WITH_AS(RemoteExtractor{HttpJsonClient(other.start())}.extract("Pepsi", "general"),
                       doctest::Contains("entities"), ProtocolError);
}

TEST_CASE("remote embeddings") {
  TestServer s;
  std::atomic<int> calls{0};
  s.post("/v1/embed", [&calls](const json& body) {
    ++calls;
    json vecs = json::array();
    for (const auto& t : body.at("texts")) {
      const auto str = t.get<std::string>();
      vecs.push_back(str == "x" ? json::array({1.0, 0.0}) : str == "y" ? json::array({0.0, 1.0}) : json::array({1.0, 1.0}));
    }
    return json{{"vectors", vecs}};
  });
  RemoteEmbeddingSimilarity sim{HttpJsonClient(s.start())};
  CHECK(sim.pairwise("x", "x") == doctest::Approx(1.0));
  CHECK(sim.pairwise("x", "y") == 0.0);
  CHECK(sim.pairwise("x", "z") == doctest::Approx(std::sqrt(0.5)));
  calls = 0;
  const std::vector<std::string> texts{"x", "y", "z"};
  const auto m = sim.matrix(texts, 4);
  CHECK(calls == 1);
  CHECK(m[0][1] == 0.0);
  CHECK(m[2][0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(m[1][1] == doctest::Approx(1.0));
}

TEST_CASE("remote embeddings protocol errors") {
  TestServer s;
  s.post("/v1/embed", [](const json&) { return json{{"vectors", {{1.0, 0.0}}}}; });
  RemoteEmbeddingSimilarity sim{HttpJsonClient(s.start())};
  CHECK_THROWS_AS(sim.pairwise("a", "b"), ProtocolError);
}
