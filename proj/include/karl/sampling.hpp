#pragma once

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "karl/catalog.hpp"
#include "karl/classifier.hpp"
#include "karl/features.hpp"

namespace karl {

enum class Strategy { Random, QBC, Margin };

std::string_view name(Strategy s);
/// Accepts random, qbc, margin (case-insensitive). Throws InvalidArgument
/// listing the valid choices.
Strategy strategy_from_name(std::string_view text);
inline constexpr std::string_view kStrategyChoices = "random, qbc, margin";

struct CandidatePair {
  ItemId query;
  ItemId candidate;
  std::string fine_category;  // of the query

  ItemPair pair() const { return {query, candidate}; }
  PairKey key() const { return PairKey(query, candidate); }
};

struct CandidateBatch {
  std::vector<CandidatePair> pairs;
  int round = 0;

  std::size_t size() const { return pairs.size(); }
  std::vector<ItemPair> item_pairs() const;
};

using PairKeySet = std::unordered_set<PairKey>;

/// For every fine category (catalog order) up to q query items, and for every
/// query up to c candidates from the query's broad category. Excluded keys,
/// self pairs and keys already in the batch are never drawn.
CandidateBatch sample_candidates(const ItemCatalog& catalog, const PairKeySet& excluded, int q = 10, int c = 100,
                                 std::uint64_t seed = 0, int round = 0);

/// Higher = more uncertain for every scorer.
std::vector<double> score_random(const CandidateBatch& batch, std::uint64_t seed);
/// Mean over classes of the population variance of member probabilities.
std::vector<double> score_qbc(const std::vector<Eigen::MatrixXd>& member_probs);
std::vector<double> score_qbc(const Ensemble& e, const FeatureMatrix& X);
/// 1 - (p_top1 - p_top2) of the ensemble mean.
std::vector<double> score_margin(const Eigen::MatrixXd& probs);
std::vector<double> score_margin(const Ensemble& e, const FeatureMatrix& X);

double qbc_score(std::span<const Proba> member_probs);
double margin_score(const Proba& p);

struct ScoredPair {
  CandidatePair pair;
  double score = 0.0;
  std::size_t batch_index = 0;
};

struct SelectedBatch {
  std::vector<ScoredPair> pairs;  // in order of first appearance of the fine category
  Strategy strategy = Strategy::Random;
};

/// Per query fine category, the highest-scoring pair; ties go to the
/// lexicographically smallest (query, candidate). Throws InvalidArgument on a
/// length mismatch or a non-finite score.
SelectedBatch select_per_category(const CandidateBatch& batch, std::span<const double> scores,
                                  Strategy strategy = Strategy::Random);

/// Scores with the chosen strategy. Only QBC and Margin featurize the batch.
std::vector<double> score_batch(Strategy strategy, const CandidateBatch& batch, const Ensemble& e,
                                const Featurizer& featurizer, const ItemCatalog& catalog, std::uint64_t seed);

}  // namespace karl
