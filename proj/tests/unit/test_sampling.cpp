#include <doctest.h>

#include <map>
#include <set>

#include "karl/sampling.hpp"
#include "support/fixtures.hpp"

using namespace karl;
using karl::testing::grid_catalog;
using karl::testing::make_item;

TEST_CASE("strategy names") {
  CHECK(strategy_from_name("MARGIN") == Strategy::Margin);
  CHECK(strategy_from_name("qbc") == Strategy::QBC);
  CHECK(name(Strategy::Random) == "random");
  try {
    strategy_from_name("qcb");
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("random, qbc, margin") != std::string::npos);
  }
}

TEST_CASE("candidate batch caps and invariants") {
  auto cat = grid_catalog(2, 3, 150);
  auto batch = sample_candidates(cat, {}, 10, 100, 1, 4);
  CHECK(batch.size() == 6u * 10 * 100);
  CHECK(batch.round == 4);
  std::set<PairKey> keys;
  std::map<std::string, std::set<ItemId>> queries;
  for (const auto& p : batch.pairs) {
    CHECK(p.query != p.candidate);
    CHECK(cat.at(p.query).broad_category == cat.at(p.candidate).broad_category);
    CHECK(cat.at(p.query).fine_category == p.fine_category);
    keys.insert(p.key());
    queries[p.fine_category].insert(p.query);
  }
  CHECK(keys.size() == batch.size());
  for (const auto& [f, q] : queries) CHECK(q.size() == 10);

  auto again = sample_candidates(cat, {}, 10, 100, 1, 4);
  CHECK(again.item_pairs() == batch.item_pairs());
  CHECK(sample_candidates(cat, {}, 10, 100, 2, 4).item_pairs() != batch.item_pairs());
}

TEST_CASE("singleton category yields nothing") {
  ItemCatalog cat({make_item("solo", "lonely", "Alone"), make_item("a", "f", "B"), make_item("b", "f", "B")});
  auto batch = sample_candidates(cat, {}, 10, 100, 0);
  for (const auto& p : batch.pairs) CHECK(p.fine_category != "lonely");
  CHECK(batch.size() == 1);
}

TEST_CASE("excluded pairs are never drawn") {
  auto cat = grid_catalog(1, 2, 4);
  PairKeySet excluded;
  const auto& fine0 = cat.items_in_fine(cat.fine_categories()[0]);
  for (auto i : fine0) {
    for (const Item& other : cat.items()) {
      if (other.id != cat.items()[i].id) excluded.insert(PairKey(cat.items()[i].id, other.id));
    }
  }
  auto batch = sample_candidates(cat, excluded, 10, 100, 3);
  for (const auto& p : batch.pairs) {
    CHECK(p.fine_category != cat.fine_categories()[0]);
    CHECK(excluded.count(p.key()) == 0);
  }
}

TEST_CASE("random scores") {
  CandidateBatch b;
  b.pairs.resize(100000);
  auto s1 = score_random(b, 9);
  CHECK(score_random(b, 9) == s1);
  CHECK(score_random(b, 10) != s1);
  double mean = 0;
  for (double v : s1) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    mean += v;
  }
  mean /= static_cast<double>(s1.size());
  CHECK(mean >= 0.49);
  CHECK(mean <= 0.51);
}

TEST_CASE("qbc scores") {
  const Proba a{1, 0, 0}, b{0, 1, 0};
  CHECK(qbc_score(std::vector<Proba>{a, b}) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(qbc_score(std::vector<Proba>{b, a}) == qbc_score(std::vector<Proba>{a, b}));
  const Proba c{0.2, 0.5, 0.3};
  CHECK(qbc_score(std::vector<Proba>{c, c, c}) == 0.0);

  Eigen::MatrixXd m1(2, 3), m2(2, 3);
  m1 << 1, 0, 0, 0.2, 0.5, 0.3;
  m2 << 0, 1, 0, 0.2, 0.5, 0.3;
  auto s = score_qbc(std::vector<Eigen::MatrixXd>{m1, m2});
  CHECK(s[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(s[1] == 0.0);
}

TEST_CASE("margin scores") {
  CHECK(margin_score({0.5, 0.3, 0.2}) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(margin_score({1.0 / 3, 1.0 / 3, 1.0 / 3}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(margin_score({0.98, 0.01, 0.01}) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(margin_score({0.2, 0.3, 0.5}) == doctest::Approx(0.8).epsilon(1e-15));
  Eigen::MatrixXd p(2, 3);
  p << 0.5, 0.3, 0.2, 0.98, 0.01, 0.01;
  auto s = score_margin(p);
  CHECK(s[0] > s[1]);
}

TEST_CASE("selection per category") {
  CandidateBatch b;
  b.pairs = {{"q1", "c1", "f"}, {"q1", "c2", "f"}, {"q2", "c3", "f"}};
  auto sel = select_per_category(b, std::vector<double>{0.2, 0.9, 0.4});
  REQUIRE(sel.pairs.size() == 1);
  CHECK(sel.pairs[0].pair.candidate == "c2");
  CHECK(sel.pairs[0].batch_index == 1);

  CandidateBatch t;
  t.pairs = {{"q2", "a", "f"}, {"q1", "z", "f"}, {"q1", "b", "f"}, {"q0", "x", "g"}};
  auto tie = select_per_category(t, std::vector<double>{0.9, 0.9, 0.9, 0.1});
  REQUIRE(tie.pairs.size() == 2);
  CHECK(tie.pairs[0].pair.query == "q1");
  CHECK(tie.pairs[0].pair.candidate == "b");
  CHECK(tie.pairs[1].pair.fine_category == "g");

  CHECK_THROWS_AS(select_per_category(t, std::vector<double>{0.1}), InvalidArgument);
  CHECK_THROWS_AS(select_per_category(t, std::vector<double>{0.1, NAN, 0.2, 0.3}), InvalidArgument);
  CHECK(select_per_category(CandidateBatch{}, std::vector<double>{}).pairs.empty());
}
