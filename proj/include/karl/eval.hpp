#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "karl/classifier.hpp"
#include "karl/labels.hpp"

namespace karl {

/// Unweighted mean of the three per-class F1 scores. A class whose F1
/// denominator is zero scores 0. Throws InvalidArgument on empty or
/// misaligned input.
double macro_f1(std::span<const Rel3> preds, std::span<const Rel3> golds);

/// Per-class F1 in Rel3 order.
std::array<double, kNumRel3> per_class_f1(std::span<const Rel3> preds, std::span<const Rel3> golds);

/// Sample Pearson correlation. Returns 0 when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct DiversityResult {
  double value = 0.0;
  std::size_t rows_used = 0;
  bool subsampled = false;
  std::size_t zero_variance_rows = 0;
};

/// 1 - mean |rho| over all ordered pairs of distinct rows. Rows with zero
/// variance have rho = 0 against everything. Above n_max rows a seeded uniform
/// row subsample of size n_max is used.
DiversityResult diversity(const Eigen::MatrixXd& X, std::size_t n_max = 2000, std::uint64_t seed = 0);

/// diversity() of [base; extra] for many extra blocks sharing one base; the
/// base block's pairwise sum is computed once.
class DiversityBase {
public:
  explicit DiversityBase(const Eigen::MatrixXd& base);
  DiversityResult with(const Eigen::MatrixXd& extra, std::size_t n_max = 2000, std::uint64_t seed = 0) const;

private:
  Eigen::MatrixXd raw_;
  Eigen::MatrixXd z_;
  double base_sum_ = 0.0;
  std::size_t zero_rows_ = 0;
};

/// FoldPlan: stratified outer folds plus an 80/20 stratified inner split of each
/// outer training portion (used for hyperparameter tuning).
struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> outer;        // test indices per fold, ascending
  std::vector<std::vector<std::size_t>> inner_train;  // per fold
  std::vector<std::vector<std::size_t>> inner_val;    // per fold
  std::vector<std::string> warnings;

  /// Every index not in outer[fold], ascending.
  std::vector<std::size_t> training_indices(int fold) const;
};

FoldPlan make_fold_plan(std::span<const Rel3> labels, int k = 5, std::uint64_t seed = 0);

struct EvalResult {
  double id_macro_f1 = 0.0;
  double ood_macro_f1 = 0.0;
};

/// Argmax of ensemble_proba (ties to the lower class index) scored against
/// both test sets. Throws LeakageError when an ID test key was used for training.
EvalResult evaluate_run(const Ensemble& ensemble, const TrainingSet& id_test, const TrainingSet& ood_test);

double evaluate_model(const LogRegModel& model, const TrainingSet& test);

enum class Setting { ID, OOD };
std::string_view name(Setting s);

struct BagMetrics {
  double id_macro_f1 = 0.0;
  double ood_macro_f1 = 0.0;
  double diversity = 0.0;
};

struct RoundBagMetrics {
  int round = 0;
  std::vector<BagMetrics> bags;
};

struct GainRecord {
  int fold = 0;
  int round = 0;
  int bag = 0;
  double f1_gain = 0.0;
  double diversity_gain = 0.0;
  Setting setting = Setting::ID;
};

struct GainSummary {
  std::vector<GainRecord> records;
  /// Pearson(diversity_gain, f1_gain) over records with round >= 1.
  double correlation_id = 0.0;
  double correlation_ood = 0.0;
};

/// Gains of every (round, bag) relative to the round-0 metrics of the same
/// bag. `rounds` must contain round 0.
GainSummary emit_gain_records(std::span<const RoundBagMetrics> rounds, int fold);

/// Correlations recomputed over an arbitrary record collection (e.g. several folds).
void summarize_correlations(GainSummary& summary);

std::string format_gain_csv(std::span<const GainRecord> records);

}  // namespace karl
