#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "karl/common.hpp"
#include "karl/features.hpp"
#include "karl/labeled_sets.hpp"
#include "karl/labels.hpp"

namespace karl {

using Proba = std::array<double, kNumRel3>;

struct Hyperparams {
  double l2_lambda = 1e-2;
  int max_iters = 500;
  double tol = 1e-5;

  bool operator==(const Hyperparams&) const = default;
};

/// Feature rows with aligned 3-class labels. `keys` is either empty or aligned
/// with the rows; it is what leakage checks and diversity de-duplication use.
struct TrainingSet {
  FeatureMatrix features;
  std::vector<Rel3> labels;
  std::vector<PairKey> keys;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  TrainingSet subset(std::span<const std::size_t> rows) const;
  /// Throws SchemaMismatch when the two sets come from different featurizers.
  static TrainingSet concat(const TrainingSet& a, const TrainingSet& b);
};

struct LogRegModel {
  Eigen::MatrixXd weights;  // kNumRel3 x D
  Eigen::VectorXd bias;     // kNumRel3
  SchemaId schema_id;
  Hyperparams hyperparams;
  int iterations = 0;
  bool converged = false;  // false: stopped at max_iters or line search stalled

  /// Untrained model: zero weights, uniform predictions.
  static LogRegModel zeros(int dim, SchemaId schema);
  int dim() const { return static_cast<int>(weights.cols()); }
};

struct TrainTrace {
  std::vector<double> loss;  // objective after each accepted step, starting at the initial point
};

/// Mean cross-entropy + l2_lambda * ||W||_F^2 (bias unpenalized). Fills the
/// gradient when the output pointers are non-null.
double regularized_loss(const Eigen::MatrixXd& X, std::span<const Rel3> labels, const Eigen::MatrixXd& W,
                        const Eigen::VectorXd& b, double l2_lambda, Eigen::MatrixXd* grad_w = nullptr,
                        Eigen::VectorXd* grad_b = nullptr);

/// Full-batch gradient descent with Armijo backtracking; Barzilai-Borwein
/// step sizes seed each line search. Training rows are put into a canonical
/// order first, so the result does not depend on row order.
///
/// Throws InvalidArgument for fewer than two distinct classes or misaligned input.
LogRegModel train_logreg(const TrainingSet& train, const Hyperparams& hp, std::uint64_t seed = 0,
                         TrainTrace* trace = nullptr);

Proba predict_proba(const LogRegModel& model, const FeatureVector& fv);
/// n x 3 probabilities.
Eigen::MatrixXd predict_proba(const LogRegModel& model, const FeatureMatrix& X);

/// Index of the largest probability; ties go to the lower class index.
Rel3 argmax(const Proba& p);
std::vector<Rel3> argmax_rows(const Eigen::MatrixXd& probs);

/// Row indices giving m examples of every non-empty class, m being the size
/// of the smallest non-empty class. Sorted ascending.
std::vector<std::size_t> undersample_balance(std::span<const Rel3> labels, std::uint64_t seed);
std::vector<LlmRecord> undersample_balance(const LlmLabeledSet& set, std::uint64_t seed);

struct Ensemble {
  std::vector<LogRegModel> models;
  std::vector<std::uint64_t> bag_seeds;
  /// Keys of the LLM-labeled rows each bag drew (human rows are in every bag).
  std::vector<std::vector<PairKey>> bag_llm_keys;
  /// Sorted union of every training pair key, human and LLM.
  std::vector<PairKey> training_keys;
  SchemaId schema_id;

  std::size_t size() const { return models.size(); }
};

/// Bag j trains on human + undersample_balance(llm, derive_seed(seed, j)).
/// With an empty llm set every bag sees identical data.
Ensemble train_ensemble(const TrainingSet& human, const TrainingSet& llm, int k, std::uint64_t seed,
                        const Hyperparams& hp, int parallelism = 1);

Proba ensemble_proba(const Ensemble& e, const FeatureVector& fv);
Eigen::MatrixXd ensemble_proba(const Ensemble& e, const FeatureMatrix& X);
/// One n x 3 matrix per member, in member order.
std::vector<Eigen::MatrixXd> member_probas(const Ensemble& e, const FeatureMatrix& X);

inline const std::vector<double> kDefaultLambdaGrid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};

struct TuneResult {
  Hyperparams best;
  std::vector<double> grid;
  std::vector<double> val_macro_f1;  // aligned with grid
};

/// Picks l2_lambda from the grid maximizing validation macro-F1 of a single
/// model; exact ties go to the larger lambda.
TuneResult tune_hyperparams(const TrainingSet& train, const TrainingSet& val,
                            const std::vector<double>& grid = kDefaultLambdaGrid, Hyperparams base = {});

nlohmann::json model_to_json(const LogRegModel& m);
LogRegModel model_from_json(const nlohmann::json& j);
nlohmann::json ensemble_to_json(const Ensemble& e);
Ensemble ensemble_from_json(const nlohmann::json& j);
nlohmann::json hyperparams_to_json(const Hyperparams& hp);
Hyperparams hyperparams_from_json(const nlohmann::json& j);

}  // namespace karl
