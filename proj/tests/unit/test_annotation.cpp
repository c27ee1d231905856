#include <doctest.h>

#include <cmath>
#include <fstream>

#include "karl/annotation.hpp"
#include "support/fixtures.hpp"
#include "support/stub_server.hpp"

using namespace karl;
using karl::testing::make_item;
using karl::testing::StubServer;

namespace {

/// Replays a fixed list of labels, one per draw.
class ScriptedAnnotator : public Annotator {
public:
  explicit ScriptedAnnotator(std::vector<FBL9> labels, bool cacheable = false)
      : labels_(std::move(labels)), cacheable_(cacheable) {}
  std::string id() const override { return "scripted"; }
  FBL9 draw(const Item&, const Item&, std::uint64_t) override { return labels_.at(calls++ % labels_.size()); }
  bool cacheable() const override { return cacheable_; }
  std::size_t calls = 0;

private:
  std::vector<FBL9> labels_;
  bool cacheable_;
};

LlmClientConfig fast_config(const std::string& endpoint, int attempts) {
  LlmClientConfig c;
  c.endpoint = endpoint;
  c.max_attempts = attempts;
  c.backoff_initial_ms = 1;
  c.timeout_s = 5;
  return c;
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("parse_label") {
  CHECK(parse_label("The answer is C-1.") == FBL9::C1);
  CHECK(parse_label("c1") == FBL9::C1);
  CHECK(parse_label("B2") == FBL9::B2);
  CHECK(parse_label("**D**") == FBL9::D);
  CHECK(parse_label("a") == FBL9::A);
  CHECK(parse_label("Label: E") == FBL9::E);
  CHECK(parse_label("C-4. Because A is different") == FBL9::C4);
  CHECK(parse_label("C-2, i.e. C2") == FBL9::C2);
  CHECK_THROWS_AS(parse_label("either A or D"), UnparseableResponse);
  CHECK_THROWS_AS(parse_label("no idea"), UnparseableResponse);
  CHECK_THROWS_AS(parse_label(""), UnparseableResponse);
  CHECK_THROWS_AS(parse_label("C-5"), UnparseableResponse);
  CHECK_THROWS_AS(parse_label("send an E-mail"), UnparseableResponse);
}

TEST_CASE("prompt template") {
  auto x = make_item("x1", "pens", "Office", "Blue pen", "fine tip");
  auto y = make_item("y1", "refills", "Office", "Ink refill", "");
  const auto p = build_prompt(x, y);
  CHECK(p == build_prompt(x, y));
  for (FBL9 l : kAllFBL9) CHECK(count_occurrences(p, "(" + std::string(code(l)) + ")") == 1);
  CHECK(p.find("Blue pen") < p.find("Ink refill"));
  const auto q = build_prompt(y, x);
  CHECK(q != p);
  CHECK(q.find("Ink refill") < q.find("Blue pen"));
  CHECK(q.size() == p.size());
}

TEST_CASE("consistency protocol") {
  auto x = make_item("x", "f", "b"), y = make_item("y", "f", "b");
  ScriptedAnnotator same({FBL9::C1});
  auto r = annotate_consistent(same, x, y, 0);
  CHECK(same.calls == 3);
  CHECK(r.draws.size() == 3);
  CHECK(r.adopted == FBL9::C1);

  ScriptedAnnotator mixed({FBL9::C1, FBL9::C2, FBL9::C1});
  CHECK_FALSE(annotate_consistent(mixed, x, y, 0).adopted.has_value());
  ScriptedAnnotator mixed3({FBL9::C1, FBL9::C2, FBL9::C1});
  CHECK(annotate_consistent(mixed3, x, y, 0, {3, true}).adopted == FBL9::C1);

  ScriptedAnnotator d({FBL9::D});
  auto rd = annotate_consistent(d, x, y, 0);
  REQUIRE(rd.adopted.has_value());
  CHECK(map_to_rel3(*rd.adopted) == Rel3::Unrelated);

  ScriptedAnnotator five({FBL9::E});
  CHECK(annotate_consistent(five, x, y, 0, {5, false}).draws.size() == 5);
}

TEST_CASE("unanimity rate of a noisy oracle") {
  // One tag, two items: the rule label is A. P(adopt) = (1-e)^3 + 8 (e/8)^3.
  RelationOracle o({{"x", 0}, {"y", 0}}, {{"f", false}}, {}, 0.3);
  OracleAnnotator a(o);
  auto x = make_item("x", "f", "b"), y = make_item("y", "f", "b");
  const int trials = 20000;
  int adopted = 0;
  for (int t = 0; t < trials; ++t) {
    if (annotate_consistent(a, x, y, derive_seed(77, t)).adopted) ++adopted;
  }
  const double e = 0.3;
  const double p = std::pow(1 - e, 3) + std::pow(e, 3) / 64.0;
  const double se = std::sqrt(p * (1 - p) / trials);
  CHECK(std::abs(adopted / static_cast<double>(trials) - p) < 3 * se);

  RelationOracle clean({{"x", 0}, {"y", 0}}, {{"f", false}}, {}, 0.0);
  OracleAnnotator c(clean);
  for (int t = 0; t < 100; ++t) CHECK(annotate_consistent(c, x, y, t).adopted == FBL9::A);
  CHECK(c.id() == "oracle(noise=0)");
}

TEST_CASE("annotation cache") {
  auto dir = karl::testing::temp_dir("cache");
  auto x = make_item("x", "f", "b"), y = make_item("y", "f", "b");
  {
    AnnotationCache cache(dir / "cache.jsonl");
    ScriptedAnnotator a({FBL9::B1}, true);
    auto r = annotate_consistent(a, x, y, 0, {}, &cache);
    CHECK_FALSE(r.from_cache);
    CHECK(cache.size() == 1);
  }
  {
    std::ofstream(dir / "cache.jsonl", std::ios::app) << "not json\n";
    AnnotationCache cache(dir / "cache.jsonl");
    CHECK(cache.size() == 1);
    ScriptedAnnotator a({FBL9::D}, true);
    auto r = annotate_consistent(a, x, y, 0, {}, &cache);
    CHECK(r.from_cache);
    CHECK(a.calls == 0);
    CHECK(r.adopted == FBL9::B1);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("batch annotation is order-stable under parallelism") {
  auto world = generate_synthetic_world(karl::testing::tiny_world_config(), 4);
  OracleAnnotator a(world.oracle);
  std::vector<ItemPair> pairs;
  const auto items = world.catalog.items();
  for (std::size_t i = 0; i + 1 < items.size(); i += 2) pairs.push_back({items[i].id, items[i + 1].id});
  auto serial = annotate_batch(a, world.catalog, pairs, 3, {}, nullptr, 1);
  auto parallel = annotate_batch(a, world.catalog, pairs, 3, {}, nullptr, 4);
  REQUIRE(serial.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(serial[i].pair == pairs[i]);
    CHECK(serial[i].draws == parallel[i].draws);
  }
}

TEST_CASE("llm client against a stub") {
  SUBCASE("plain reply and request shape") {
    StubServer stub([](int, const nlohmann::json&) { return StubServer::Reply{200, StubServer::completion("A")}; });
    LlmAnnotator a(fast_config(stub.endpoint(), 3));
    auto x = make_item("x", "f", "b"), y = make_item("y", "f", "b");
    CHECK(a.draw(x, y, 0) == FBL9::A);
    auto req = stub.requests().at(0);
    CHECK(req["model"] == "gpt-4o-mini");
    CHECK(req["temperature"] == 1.0);
    CHECK(req["messages"][0]["role"] == "system");
    CHECK(req["messages"][1]["content"] == build_prompt(x, y));
  }
  SUBCASE("retries 5xx then succeeds, logging every attempt") {
    auto dir = karl::testing::temp_dir("llmlog");
    StubServer stub([](int call, const nlohmann::json&) {
      return call < 2 ? StubServer::Reply{500, "oops"} : StubServer::Reply{200, StubServer::completion("D")};
    });
    auto cfg = fast_config(stub.endpoint(), 3);
    cfg.log_path = dir / "log.jsonl";
    LlmClient client(cfg);
    CHECK(parse_label(client.complete(kSystemMessage, "p")) == FBL9::D);
    CHECK(client.attempts() == 3);
    std::ifstream in(cfg.log_path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("ts"));
      CHECK(j["attempt"] == ++lines);
    }
    CHECK(lines == 3);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("exhausted retries skip the pair") {
    StubServer stub([](int, const nlohmann::json&) { return StubServer::Reply{500, "down"}; });
    LlmAnnotator a(fast_config(stub.endpoint(), 2));
    auto r = annotate_consistent(a, make_item("x", "f", "b"), make_item("y", "f", "b"), 0);
    CHECK(r.skipped);
    CHECK_FALSE(r.adopted.has_value());
    CHECK(stub.calls() == 2);
  }
  SUBCASE("client errors are not retried") {
    StubServer stub([](int, const nlohmann::json&) { return StubServer::Reply{400, "bad"}; });
    LlmClient client(fast_config(stub.endpoint(), 3));
    CHECK_THROWS_AS(client.complete("s", "u"), TransportError);
    CHECK(stub.calls() == 1);
  }
  SUBCASE("unparseable bodies") {
    CHECK_THROWS_AS(LlmClient::extract_content(""), UnparseableResponse);
    CHECK_THROWS_AS(LlmClient::extract_content("<html>"), UnparseableResponse);
    CHECK_THROWS_AS(LlmClient::extract_content(R"({"choices":[]})"), UnparseableResponse);
    CHECK(LlmClient::extract_content(StubServer::completion("B-2")) == "B-2");
  }
  SUBCASE("bearer credential from the environment") {
    StubServer stub([](int, const nlohmann::json&) { return StubServer::Reply{200, StubServer::completion("E")}; });
    auto cfg = fast_config(stub.endpoint(), 1);
    cfg.api_key_env = "KARL_TEST_KEY_VAR";
    ::setenv("KARL_TEST_KEY_VAR", "sekrit", 1);
    LlmClient(cfg).complete("s", "u");
    ::unsetenv("KARL_TEST_KEY_VAR");
    CHECK(stub.authorization().at(0) == "Bearer sekrit");
  }
}
