#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include "karl/annotation.hpp"
#include "karl/catalog.hpp"
#include "karl/classifier.hpp"
#include "karl/config.hpp"
#include "karl/eval.hpp"
#include "karl/features.hpp"
#include "karl/labeled_sets.hpp"
#include "karl/sampling.hpp"

namespace karl {

/// Catalog plus human-labeled sets, and the oracle when the data is synthetic.
struct Dataset {
  ItemCatalog catalog;
  HumanLabeledSet human_id;
  HumanLabeledSet human_ood;
  std::optional<RelationOracle> oracle;
  /// git-style blob hashes of the input files, by file name.
  std::map<std::string, std::string> input_hashes;
};

/// From config.world_dir, or from the explicit catalog and label paths.
Dataset load_dataset(const RunConfig& config);
Dataset dataset_from_world(const SyntheticWorld& world);

/// SHA-1 of "blob <size>\0<content>", as git hash-object prints it.
std::string git_blob_hash(std::string_view content);

struct RoundReport {
  int round = 0;
  std::size_t candidates = 0;
  std::size_t selected = 0;
  std::size_t adopted = 0;
  std::size_t non_unanimous = 0;
  std::size_t skipped = 0;
  std::size_t llm_size = 0;
  bool evaluated = false;
  double id_macro_f1 = 0.0;
  double ood_macro_f1 = 0.0;
  double diversity = 0.0;
  bool diversity_subsampled = false;
  std::vector<BagMetrics> bags;
  double wall_seconds = 0.0;  // not part of any persisted report
};

/// State of one outer fold after `round` completed rounds.
struct FoldState {
  int fold = 0;
  int round = -1;  // -1: nothing trained yet
  Hyperparams hyperparams;
  Ensemble ensemble;
  LlmLabeledSet llm;
  /// Every pair ever selected for annotation (adopted, non-unanimous or skipped).
  std::set<PairKey> annotated;
  std::vector<RoundReport> reports;
};

/// Fold-level context shared by every round of a fold.
class FoldRunner {
public:
  FoldRunner(const RunConfig& config, const Dataset& data, const Featurizer& featurizer, const FoldPlan& plan,
             int fold, Annotator& annotator, AnnotationCache* cache);

  /// Round 0: hyperparameter tuning on the inner split and the human-only ensemble.
  FoldState initial_state() const;
  /// One full round: sample, score, select, annotate, retrain, evaluate.
  void run_round(FoldState& state) const;

  const TrainingSet& human_train() const { return human_train_; }
  const TrainingSet& id_test() const { return id_test_; }
  const TrainingSet& ood_test() const { return ood_test_; }
  /// Excluded keys for the next sampling step.
  PairKeySet excluded(const FoldState& state) const;

private:
  TrainingSet llm_training_set(const LlmLabeledSet& llm) const;
  void evaluate(FoldState& state, RoundReport& report) const;

  const RunConfig& config_;
  const Dataset& data_;
  const Featurizer& featurizer_;
  int fold_;
  Annotator& annotator_;
  AnnotationCache* cache_;
  TrainingSet human_train_;
  TrainingSet inner_train_;
  TrainingSet inner_val_;
  TrainingSet id_test_;
  TrainingSet ood_test_;
  std::vector<PairKey> human_keys_;
  std::shared_ptr<const DiversityBase> diversity_base_;
};

struct RunOptions {
  /// Stop every fold after this round, as if the process had been killed.
  std::optional<int> halt_after_round;
};

struct RunResult {
  bool complete = false;
  std::vector<FoldState> folds;
  std::vector<RoundReport> mean_reports;  // across folds, per round
  GainSummary gains;
  std::filesystem::path dir;
};

/// Runs (or continues) the loop in `out_dir`. Round directories are written
/// atomically; an existing directory is resumed from its last checkpoint.
RunResult run(const RunConfig& config, const std::filesystem::path& out_dir, const RunOptions& options = {});

/// Reloads config.json from the run directory and continues. Throws
/// CorruptCheckpoint for a missing or damaged checkpoint.
RunResult resume(const std::filesystem::path& run_dir, const RunOptions& options = {});

/// The fold state stored in a round directory.
FoldState load_checkpoint(const std::filesystem::path& round_dir);
/// Latest committed round directory of a fold, if any.
std::optional<std::filesystem::path> latest_round_dir(const std::filesystem::path& fold_dir);

std::string format_reports_csv(const std::vector<RoundReport>& reports, Strategy strategy);
/// Per-round means of the metrics and sums of the counts across folds.
std::vector<RoundReport> combine_fold_reports(const std::vector<FoldState>& folds);

/// First round whose OOD macro-F1 reaches `level`, if any.
std::optional<int> first_round_reaching(const std::vector<RoundReport>& reports, double level);

}  // namespace karl
