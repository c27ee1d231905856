#include "karl/sampling.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace karl {

std::string_view name(Strategy s) {
  switch (s) {
    case Strategy::Random: return "random";
    case Strategy::QBC: return "qbc";
    case Strategy::Margin: return "margin";
  }
  return "?";
}

Strategy strategy_from_name(std::string_view text) {
  std::string t(text);
  for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (t == "random") return Strategy::Random;
  if (t == "qbc") return Strategy::QBC;
  if (t == "margin") return Strategy::Margin;
  throw InvalidArgument("unknown strategy '" + std::string(text) + "'; valid strategies: " +
                        std::string(kStrategyChoices));
}

std::vector<ItemPair> CandidateBatch::item_pairs() const {
  std::vector<ItemPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.pair());
  return out;
}

CandidateBatch sample_candidates(const ItemCatalog& catalog, const PairKeySet& excluded, int q, int c,
                                 std::uint64_t seed, int round) {
  if (catalog.empty()) throw InvalidArgument("sample_candidates: empty catalog");
  if (q < 0 || c < 0) throw InvalidArgument("sample_candidates: negative caps");
  CandidateBatch batch;
  batch.round = round;
  PairKeySet taken;
  const auto items = catalog.items();

  for (std::size_t f = 0; f < catalog.fine_categories().size(); ++f) {
    const auto& fine = catalog.fine_categories()[f];
    const auto& pool = catalog.items_in_broad(catalog.broad_of(fine));
    Rng qrng(derive_seed(seed, "queries", f));
    const auto queries = qrng.sample(catalog.items_in_fine(fine), static_cast<std::size_t>(q));
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const Item& query = items[queries[qi]];
      std::vector<std::size_t> eligible;
      eligible.reserve(pool.size());
      for (std::size_t idx : pool) {
        if (idx == queries[qi]) continue;
        const PairKey key(query.id, items[idx].id);
        if (excluded.count(key) || taken.count(key)) continue;
        eligible.push_back(idx);
      }
      Rng crng(derive_seed(seed, "candidates", f, qi));
      for (std::size_t idx : crng.sample(std::move(eligible), static_cast<std::size_t>(c))) {
        const Item& cand = items[idx];
        taken.insert(PairKey(query.id, cand.id));
        batch.pairs.push_back({query.id, cand.id, fine});
      }
    }
  }
  return batch;
}

std::vector<double> score_random(const CandidateBatch& batch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "score_random"));
  std::vector<double> out(batch.size());
  for (auto& v : out) v = rng.uniform01();
  return out;
}

double qbc_score(std::span<const Proba> member_probs) {
  if (member_probs.empty()) throw InvalidArgument("qbc_score: empty committee");
  const double k = static_cast<double>(member_probs.size());
  double total = 0.0;
  for (std::size_t c = 0; c < kNumRel3; ++c) {
    const double origin = member_probs.front()[c];
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& p : member_probs) {
      const double d = p[c] - origin;
      sum += d;
      sum_sq += d * d;
    }
    const double mean = sum / k;
    total += std::max(0.0, sum_sq / k - mean * mean);
  }
  return total / static_cast<double>(kNumRel3);
}

double margin_score(const Proba& p) {
  std::array<double, kNumRel3> s = p;
  std::sort(s.begin(), s.end(), std::greater<>());
  return std::clamp(1.0 - (s[0] - s[1]), 0.0, 1.0);
}

std::vector<double> score_qbc(const std::vector<Eigen::MatrixXd>& member_probs) {
  if (member_probs.empty()) throw InvalidArgument("score_qbc: empty committee");
  const auto n = member_probs.front().rows();
  std::vector<double> out(static_cast<std::size_t>(n));
  std::vector<Proba> row(member_probs.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < member_probs.size(); ++m) {
      for (std::size_t c = 0; c < kNumRel3; ++c) row[m][c] = member_probs[m](i, static_cast<Eigen::Index>(c));
    }
    out[static_cast<std::size_t>(i)] = qbc_score(row);
  }
  return out;
}

std::vector<double> score_qbc(const Ensemble& e, const FeatureMatrix& X) {
  if (X.schema_id != e.schema_id) throw SchemaMismatch("score_qbc: features and ensemble disagree on schema");
  return score_qbc(member_probas(e, X));
}

std::vector<double> score_margin(const Eigen::MatrixXd& probs) {
  std::vector<double> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = margin_score({probs(i, 0), probs(i, 1), probs(i, 2)});
  }
  return out;
}

std::vector<double> score_margin(const Ensemble& e, const FeatureMatrix& X) {
  if (X.schema_id != e.schema_id) throw SchemaMismatch("score_margin: features and ensemble disagree on schema");
  return score_margin(ensemble_proba(e, X));
}

SelectedBatch select_per_category(const CandidateBatch& batch, std::span<const double> scores, Strategy strategy) {
  if (scores.size() != batch.size()) throw InvalidArgument("select_per_category: score count does not match batch");
  SelectedBatch out;
  out.strategy = strategy;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!std::isfinite(scores[i])) throw InvalidArgument("select_per_category: non-finite score");
    const auto& p = batch.pairs[i];
    auto [it, fresh] = slot.try_emplace(p.fine_category, out.pairs.size());
    if (fresh) {
      out.pairs.push_back({p, scores[i], i});
      continue;
    }
    auto& best = out.pairs[it->second];
    const bool better =
        scores[i] > best.score ||
        (scores[i] == best.score &&
         std::tie(p.query, p.candidate) < std::tie(best.pair.query, best.pair.candidate));
    if (better) best = {p, scores[i], i};
  }
  return out;
}

std::vector<double> score_batch(Strategy strategy, const CandidateBatch& batch, const Ensemble& e,
                                const Featurizer& featurizer, const ItemCatalog& catalog, std::uint64_t seed) {
  if (strategy == Strategy::Random) return score_random(batch, seed);
  const auto pairs = batch.item_pairs();
  const FeatureMatrix X = featurizer.featurize_batch(catalog, pairs);
  return strategy == Strategy::QBC ? score_qbc(e, X) : score_margin(e, X);
}

}  // namespace karl
