#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "karl/catalog.hpp"
#include "karl/classifier.hpp"
#include "karl/features.hpp"
#include "karl/llm_client.hpp"
#include "karl/sampling.hpp"

namespace karl {

enum class AnnotatorKind { Oracle, Llm };
std::string_view name(AnnotatorKind k);
AnnotatorKind annotator_from_name(std::string_view text);

/// Everything a run needs. Loaded from an INI file with sections [world],
/// [features], [classifier], [sampling], [annotation], [llm], [loop], [eval]
/// and [data]; command-line flags are applied on top.
struct RunConfig {
  WorldConfig world;
  std::uint64_t world_seed = 7;

  FeaturizerConfig features;

  Hyperparams classifier;
  int ensemble_size = 10;
  std::vector<double> lambda_grid = kDefaultLambdaGrid;
  bool retune_each_round = false;

  Strategy strategy = Strategy::Margin;
  int per_category_queries = 10;
  int per_query_candidates = 100;

  AnnotatorKind annotator = AnnotatorKind::Oracle;
  int draws = 3;
  bool rel3_unanimity = false;
  double oracle_noise = -1.0;  // < 0: the world's own noise rate
  int parse_attempts = 2;
  bool cache = true;
  LlmClientConfig llm;

  int rounds = 20;
  std::uint64_t seed = 0;
  int parallelism = 1;
  int eval_stride = 1;

  int folds = 5;
  int fold = -1;  // -1: every outer fold
  std::size_t diversity_n_max = 2000;

  std::string world_dir;  // synthetic world directory
  std::string catalog_path;  // or explicit files
  std::string human_id_path;
  std::string human_ood_path;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// INI text -> config. Unknown sections or keys and malformed values throw ConfigError.
RunConfig parse_config(std::string_view ini_text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Applies one "section.key" = value override.
void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value);
/// Every known "section.key".
std::vector<std::string> config_keys();

nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
/// Hash of the canonical JSON form, ignoring loop.parallelism.
std::string config_hash(const RunConfig& config);

}  // namespace karl
