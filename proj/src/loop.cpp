#include "karl/loop.hpp"

#include <chrono>
#include <cstdio>
#include <regex>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

namespace karl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kWorldFiles[] = {"world.json", "items.jsonl", "oracle.json", "human_id.csv", "human_ood.csv"};

TrainingSet make_training_set(const Featurizer& featurizer, const ItemCatalog& catalog,
                              const std::vector<ItemPair>& pairs, std::vector<Rel3> labels) {
  TrainingSet ts;
  ts.features = featurizer.featurize_batch(catalog, pairs);
  ts.labels = std::move(labels);
  for (const auto& p : pairs) ts.keys.push_back(p.key());
  return ts;
}

TrainingSet human_training_set(const Featurizer& featurizer, const ItemCatalog& catalog, const HumanLabeledSet& set) {
  std::vector<ItemPair> pairs;
  std::vector<Rel3> labels;
  for (const auto& row : set.rows()) {
    pairs.push_back(row.pair);
    labels.push_back(row.label);
  }
  return make_training_set(featurizer, catalog, pairs, std::move(labels));
}

std::string round_dir_name(int round) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "round_%04d", round);
  return buf;
}

std::string fold_dir_name(int fold) { return "fold_" + std::to_string(fold); }

json report_to_json(const RoundReport& r) {
  json bags = json::array();
  for (const auto& b : r.bags) bags.push_back({b.id_macro_f1, b.ood_macro_f1, b.diversity});
  return {{"round", r.round},
          {"candidates", r.candidates},
          {"selected", r.selected},
          {"adopted", r.adopted},
          {"non_unanimous", r.non_unanimous},
          {"skipped", r.skipped},
          {"llm_size", r.llm_size},
          {"evaluated", r.evaluated},
          {"id_macro_f1", r.id_macro_f1},
          {"ood_macro_f1", r.ood_macro_f1},
          {"diversity", r.diversity},
          {"diversity_subsampled", r.diversity_subsampled},
          {"bags", std::move(bags)}};
}

RoundReport report_from_json(const json& j) {
  RoundReport r;
  r.round = j.at("round").get<int>();
  r.candidates = j.at("candidates").get<std::size_t>();
  r.selected = j.at("selected").get<std::size_t>();
  r.adopted = j.at("adopted").get<std::size_t>();
  r.non_unanimous = j.at("non_unanimous").get<std::size_t>();
  r.skipped = j.at("skipped").get<std::size_t>();
  r.llm_size = j.at("llm_size").get<std::size_t>();
  r.evaluated = j.at("evaluated").get<bool>();
  r.id_macro_f1 = j.at("id_macro_f1").get<double>();
  r.ood_macro_f1 = j.at("ood_macro_f1").get<double>();
  r.diversity = j.at("diversity").get<double>();
  r.diversity_subsampled = j.at("diversity_subsampled").get<bool>();
  for (const auto& b : j.at("bags")) r.bags.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()});
  return r;
}

void write_plain(const fs::path& path, std::string_view content) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot write " + path.string());
  const bool ok = std::fwrite(content.data(), 1, content.size(), f) == content.size();
  if (std::fclose(f) != 0 || !ok) throw Error("cannot write " + path.string());
}

void save_checkpoint(const fs::path& fold_dir, const FoldState& state, const std::string& cfg_hash,
                     const std::string& adopted_csv) {
  const fs::path final_dir = fold_dir / round_dir_name(state.round);
  const fs::path tmp_dir = fold_dir / (round_dir_name(state.round) + ".tmp");
  fs::remove_all(tmp_dir);
  fs::create_directories(tmp_dir);

  const std::string models = ensemble_to_json(state.ensemble).dump();
  json annotated = json::array();
  for (const auto& k : state.annotated) annotated.push_back({k.lo, k.hi});
  json reports = json::array();
  for (const auto& r : state.reports) reports.push_back(report_to_json(r));
  json payload = {{"format", "karl-checkpoint"},
                  {"version", 1},
                  {"fold", state.fold},
                  {"round", state.round},
                  {"config_hash", cfg_hash},
                  {"hyperparams", hyperparams_to_json(state.hyperparams)},
                  {"llm", format_llm_labels(state.llm)},
                  {"annotated", std::move(annotated)},
                  {"reports", std::move(reports)},
                  {"models_digest", to_hex(hash64(models))}};
  const std::string body = payload.dump();
  const json checkpoint = {{"payload", std::move(payload)}, {"digest", to_hex(hash64(body))}};

  write_plain(tmp_dir / "models.json", models);
  write_plain(tmp_dir / "adopted.csv", adopted_csv);
  write_plain(tmp_dir / "checkpoint.json", checkpoint.dump(1) + "\n");
  if (fs::exists(final_dir)) fs::remove_all(final_dir);
  fs::rename(tmp_dir, final_dir);
}

std::string adopted_csv(const LlmLabeledSet& llm, int round) {
  LlmLabeledSet only;
  for (const auto& [k, r] : llm.records()) {
    if (r.round == round) only.add(r);
  }
  return format_llm_labels(only);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: out of memory");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1 failed");
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

Dataset dataset_from_world(const SyntheticWorld& world) {
  Dataset d;
  d.catalog = world.catalog;
  d.human_id = world.human_id;
  d.human_ood = world.human_ood;
  d.oracle = world.oracle;
  d.input_hashes["world"] = git_blob_hash(serialize_world(world));
  return d;
}

Dataset load_dataset(const RunConfig& config) {
  Dataset d;
  if (!config.world_dir.empty()) {
    const fs::path dir(config.world_dir);
    SyntheticWorld world = load_world(dir);
    d.catalog = std::move(world.catalog);
    d.human_id = std::move(world.human_id);
    d.human_ood = std::move(world.human_ood);
    d.oracle = std::move(world.oracle);
    for (const char* f : kWorldFiles) d.input_hashes[f] = git_blob_hash(read_file(dir / f));
    return d;
  }
  if (config.catalog_path.empty() || config.human_id_path.empty() || config.human_ood_path.empty()) {
    throw ConfigError("data: set data.world, or data.catalog with data.human_id and data.human_ood");
  }
  d.catalog = load_catalog(config.catalog_path);
  d.human_id = load_human_labels(config.human_id_path, &d.catalog, "id-dataset");
  d.human_ood = load_human_labels(config.human_ood_path, &d.catalog, "ood-dataset");
  d.input_hashes["catalog"] = git_blob_hash(read_file(config.catalog_path));
  d.input_hashes["human_id"] = git_blob_hash(read_file(config.human_id_path));
  d.input_hashes["human_ood"] = git_blob_hash(read_file(config.human_ood_path));
  return d;
}

FoldRunner::FoldRunner(const RunConfig& config, const Dataset& data, const Featurizer& featurizer,
                       const FoldPlan& plan, int fold, Annotator& annotator, AnnotationCache* cache)
    : config_(config), data_(data), featurizer_(featurizer), fold_(fold), annotator_(annotator), cache_(cache) {
  const TrainingSet id_all = human_training_set(featurizer, data.catalog, data.human_id);
  const auto f = static_cast<std::size_t>(fold);
  human_train_ = id_all.subset(plan.training_indices(fold));
  inner_train_ = id_all.subset(plan.inner_train.at(f));
  inner_val_ = id_all.subset(plan.inner_val.at(f));
  id_test_ = id_all.subset(plan.outer.at(f));
  ood_test_ = human_training_set(featurizer, data.catalog, data.human_ood);
  human_keys_ = id_all.keys;
  human_keys_.insert(human_keys_.end(), ood_test_.keys.begin(), ood_test_.keys.end());
  diversity_base_ = std::make_shared<DiversityBase>(human_train_.features.values);
}

PairKeySet FoldRunner::excluded(const FoldState& state) const {
  PairKeySet out(human_keys_.begin(), human_keys_.end());
  out.insert(state.annotated.begin(), state.annotated.end());
  for (const auto& [k, r] : state.llm.records()) out.insert(k);
  return out;
}

TrainingSet FoldRunner::llm_training_set(const LlmLabeledSet& llm) const {
  std::vector<ItemPair> pairs;
  std::vector<Rel3> labels;
  for (const auto& [k, r] : llm.records()) {
    pairs.push_back(r.pair);
    labels.push_back(r.rel3);
  }
  if (pairs.empty()) return {};
  return make_training_set(featurizer_, data_.catalog, pairs, std::move(labels));
}

FoldState FoldRunner::initial_state() const {
  const auto start = std::chrono::steady_clock::now();
  FoldState s;
  s.fold = fold_;
  s.round = 0;
  s.hyperparams = config_.classifier;
  if (config_.lambda_grid.size() > 1) {
    s.hyperparams = tune_hyperparams(inner_train_, inner_val_, config_.lambda_grid, config_.classifier).best;
  } else if (config_.lambda_grid.size() == 1) {
    s.hyperparams.l2_lambda = config_.lambda_grid.front();
  }
  s.ensemble = train_ensemble(human_train_, TrainingSet{}, config_.ensemble_size,
                              derive_seed(config_.seed, "ensemble", fold_, 0), s.hyperparams, config_.parallelism);
  RoundReport report;
  report.round = 0;
  evaluate(s, report);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  s.reports.push_back(report);
  spdlog::info("fold {} round 0: lambda={} id={:.4f} ood={:.4f} diversity={:.4f}", fold_, s.hyperparams.l2_lambda,
               report.id_macro_f1, report.ood_macro_f1, report.diversity);
  return s;
}

void FoldRunner::run_round(FoldState& state) const {
  const auto start = std::chrono::steady_clock::now();
  const int t = state.round + 1;
  const std::uint64_t seed = config_.seed;
  RoundReport report;
  report.round = t;

  const CandidateBatch batch =
      sample_candidates(data_.catalog, excluded(state), config_.per_category_queries, config_.per_query_candidates,
                        derive_seed(seed, "sample", fold_, t), t);
  report.candidates = batch.size();
  const auto scores = score_batch(config_.strategy, batch, state.ensemble, featurizer_, data_.catalog,
                                  derive_seed(seed, "score", fold_, t));
  const SelectedBatch selected = select_per_category(batch, scores, config_.strategy);
  report.selected = selected.pairs.size();

  std::vector<ItemPair> pairs;
  for (const auto& p : selected.pairs) pairs.push_back(p.pair.pair());
  ConsistencyOptions opts;
  opts.draws = config_.draws;
  opts.rel3_unanimity = config_.rel3_unanimity;
  auto results = annotate_batch(annotator_, data_.catalog, pairs, derive_seed(seed, "annotate", fold_, t), opts, cache_,
                                config_.parallelism);
  std::sort(results.begin(), results.end(),
            [](const ConsistencyResult& a, const ConsistencyResult& b) { return a.key() < b.key(); });

  FoldState next = state;
  for (const auto& r : results) {
    next.annotated.insert(r.key());
    if (r.skipped) {
      ++report.skipped;
    } else if (r.adopted) {
      next.llm.add({r.pair, *r.adopted, map_to_rel3(*r.adopted), t, r.annotator});
      ++report.adopted;
    } else {
      ++report.non_unanimous;
    }
  }
  report.llm_size = next.llm.size();

  const TrainingSet llm = llm_training_set(next.llm);
  if (config_.retune_each_round && config_.lambda_grid.size() > 1) {
    next.hyperparams =
        tune_hyperparams(TrainingSet::concat(inner_train_, llm), inner_val_, config_.lambda_grid, config_.classifier)
            .best;
  }
  next.ensemble = train_ensemble(human_train_, llm, config_.ensemble_size, derive_seed(seed, "ensemble", fold_, t),
                                 next.hyperparams, config_.parallelism);
  next.round = t;
  if (t % config_.eval_stride == 0 || t == config_.rounds) evaluate(next, report);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  next.reports.push_back(report);
  state = std::move(next);
  spdlog::info("fold {} round {}: candidates={} selected={} adopted={} id={:.4f} ood={:.4f} diversity={:.4f} ({:.1f}s)",
               fold_, t, report.candidates, report.selected, report.adopted, report.id_macro_f1,
               report.ood_macro_f1, report.diversity, report.wall_seconds);
}

void FoldRunner::evaluate(FoldState& state, RoundReport& report) const {
  const EvalResult r = evaluate_run(state.ensemble, id_test_, ood_test_);
  report.evaluated = true;
  report.id_macro_f1 = r.id_macro_f1;
  report.ood_macro_f1 = r.ood_macro_f1;

  const TrainingSet llm = llm_training_set(state.llm);
  std::map<PairKey, Eigen::Index> row_of;
  for (std::size_t i = 0; i < llm.keys.size(); ++i) row_of[llm.keys[i]] = static_cast<Eigen::Index>(i);
  auto rows_for = [&](const std::vector<PairKey>& keys) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(keys.size()), human_train_.features.cols());
    for (std::size_t i = 0; i < keys.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = llm.features.values.row(row_of.at(keys[i]));
    return m;
  };

  const std::uint64_t div_seed = derive_seed(config_.seed, "diversity", fold_, state.round);
  std::set<PairKey> union_keys;
  report.bags.clear();
  for (std::size_t b = 0; b < state.ensemble.size(); ++b) {
    const auto& keys = state.ensemble.bag_llm_keys[b];
    union_keys.insert(keys.begin(), keys.end());
    BagMetrics m;
    m.id_macro_f1 = evaluate_model(state.ensemble.models[b], id_test_);
    m.ood_macro_f1 = evaluate_model(state.ensemble.models[b], ood_test_);
    const auto d = diversity_base_->with(rows_for(keys), config_.diversity_n_max, derive_seed(div_seed, b));
    m.diversity = d.value;
    report.diversity_subsampled = report.diversity_subsampled || d.subsampled;
    report.bags.push_back(m);
  }
  const auto d = diversity_base_->with(rows_for({union_keys.begin(), union_keys.end()}), config_.diversity_n_max,
                                       div_seed);
  report.diversity = d.value;
  report.diversity_subsampled = report.diversity_subsampled || d.subsampled;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

std::optional<fs::path> latest_round_dir(const fs::path& fold_dir) {
  if (!fs::is_directory(fold_dir)) return std::nullopt;
  static const std::regex pattern("round_([0-9]{4})");
  std::optional<fs::path> best;
  int best_round = -1;
  for (const auto& entry : fs::directory_iterator(fold_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || !std::regex_match(name, m, pattern)) continue;
    const int r = std::stoi(m[1].str());
    if (r > best_round) {
      best_round = r;
      best = entry.path();
    }
  }
  return best;
}

FoldState load_checkpoint(const fs::path& round_dir) {
  const fs::path cp = round_dir / "checkpoint.json";
  const fs::path models = round_dir / "models.json";
  if (!fs::exists(cp)) throw CorruptCheckpoint("missing checkpoint: " + cp.string());
  if (!fs::exists(models)) throw CorruptCheckpoint("missing models: " + models.string());
  json j = json::parse(read_file(cp), nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("payload") || !j.contains("digest")) {
    throw CorruptCheckpoint("unreadable checkpoint: " + cp.string());
  }
  const json& payload = j["payload"];
  if (to_hex(hash64(payload.dump())) != j["digest"]) throw CorruptCheckpoint("checkpoint digest mismatch: " + cp.string());
  const std::string models_text = read_file(models);
  if (to_hex(hash64(models_text)) != payload.value("models_digest", "")) {
    throw CorruptCheckpoint("models digest mismatch: " + models.string());
  }
  try {
    FoldState s;
    s.fold = payload.at("fold").get<int>();
    s.round = payload.at("round").get<int>();
    s.hyperparams = hyperparams_from_json(payload.at("hyperparams"));
    s.llm = parse_llm_labels(payload.at("llm").get<std::string>());
    for (const auto& k : payload.at("annotated")) s.annotated.insert(PairKey(k.at(0).get<std::string>(), k.at(1).get<std::string>()));
    for (const auto& r : payload.at("reports")) s.reports.push_back(report_from_json(r));
    s.ensemble = ensemble_from_json(json::parse(models_text));
    return s;
  } catch (const CorruptCheckpoint&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptCheckpoint("invalid checkpoint " + cp.string() + ": " + e.what());
  }
}

std::vector<RoundReport> combine_fold_reports(const std::vector<FoldState>& folds) {
  std::vector<RoundReport> out;
  if (folds.empty()) return out;
  const std::size_t n = folds.front().reports.size();
  for (std::size_t r = 0; r < n; ++r) {
    RoundReport c;
    c.round = folds.front().reports[r].round;
    std::vector<double> id, ood, div;
    for (const auto& f : folds) {
      const auto& x = f.reports.at(r);
      c.candidates += x.candidates;
      c.selected += x.selected;
      c.adopted += x.adopted;
      c.non_unanimous += x.non_unanimous;
      c.skipped += x.skipped;
      c.llm_size += x.llm_size;
      c.diversity_subsampled = c.diversity_subsampled || x.diversity_subsampled;
      if (!x.evaluated) continue;
      id.push_back(x.id_macro_f1);
      ood.push_back(x.ood_macro_f1);
      div.push_back(x.diversity);
    }
    c.evaluated = !id.empty();
    c.id_macro_f1 = mean(id);
    c.ood_macro_f1 = mean(ood);
    c.diversity = mean(div);
    out.push_back(c);
  }
  return out;
}

std::string format_reports_csv(const std::vector<RoundReport>& reports, Strategy strategy) {
  std::string out =
      "round,strategy,id_macro_f1,ood_macro_f1,diversity,adopted,skipped,candidates,selected,non_unanimous,llm_size\n";
  for (const auto& r : reports) {
    out += std::to_string(r.round) + "," + std::string(name(strategy)) + ",";
    if (r.evaluated) {
      out += fmt_metric(r.id_macro_f1) + "," + fmt_metric(r.ood_macro_f1) + "," + fmt_metric(r.diversity);
    } else {
      out += ",,";
    }
    out += "," + std::to_string(r.adopted) + "," + std::to_string(r.skipped) + "," + std::to_string(r.candidates) +
           "," + std::to_string(r.selected) + "," + std::to_string(r.non_unanimous) + "," +
           std::to_string(r.llm_size) + "\n";
  }
  return out;
}

std::optional<int> first_round_reaching(const std::vector<RoundReport>& reports, double level) {
  for (const auto& r : reports) {
    if (r.evaluated && r.ood_macro_f1 >= level) return r.round;
  }
  return std::nullopt;
}

namespace {

std::unique_ptr<Annotator> make_annotator(const RunConfig& config, const Dataset& data, const fs::path& out_dir,
                                          std::optional<RelationOracle>& oracle_storage) {
  if (config.annotator == AnnotatorKind::Oracle) {
    if (!data.oracle) throw ConfigError("the oracle annotator needs a synthetic world (data.world)");
    oracle_storage = config.oracle_noise >= 0.0 ? data.oracle->with_noise(config.oracle_noise) : *data.oracle;
    return std::make_unique<OracleAnnotator>(*oracle_storage);
  }
  LlmClientConfig llm = config.llm;
  if (llm.log_path.empty()) llm.log_path = out_dir / "annotation_log.jsonl";
  return std::make_unique<LlmAnnotator>(llm, config.parse_attempts);
}

std::optional<int> plateau_round(const std::vector<RoundReport>& reports) {
  const RoundReport* last = nullptr;
  for (const auto& r : reports) {
    if (r.evaluated) last = &r;
  }
  if (!last) return std::nullopt;
  std::optional<int> start;
  for (const auto& r : reports) {
    if (!r.evaluated) continue;
    if (std::abs(r.ood_macro_f1 - last->ood_macro_f1) <= 0.01) {
      if (!start) start = r.round;
    } else {
      start.reset();
    }
  }
  return start;
}

void write_outputs(const RunConfig& config, const Dataset& data, const Featurizer& featurizer,
                   const Annotator& annotator, const fs::path& out_dir, RunResult& result) {
  for (const auto& f : result.folds) {
    write_file_atomic(out_dir / fold_dir_name(f.fold) / "reports.csv", format_reports_csv(f.reports, config.strategy));
  }
  result.mean_reports = combine_fold_reports(result.folds);
  const std::string reports_csv = format_reports_csv(result.mean_reports, config.strategy);
  write_file_atomic(out_dir / "reports.csv", reports_csv);

  for (const auto& f : result.folds) {
    std::vector<RoundBagMetrics> rounds;
    for (const auto& r : f.reports) {
      if (r.evaluated) rounds.push_back({r.round, r.bags});
    }
    auto g = emit_gain_records(rounds, f.fold);
    result.gains.records.insert(result.gains.records.end(), g.records.begin(), g.records.end());
  }
  summarize_correlations(result.gains);
  const std::string gains_csv = format_gain_csv(result.gains.records);
  write_file_atomic(out_dir / "gains.csv", gains_csv);

  json folds = json::array();
  for (const auto& f : result.folds) {
    folds.push_back({{"fold", f.fold}, {"l2_lambda", f.hyperparams.l2_lambda}, {"llm_size", f.llm.size()}});
  }
  const auto& first = result.mean_reports.front();
  const auto& last = result.mean_reports.back();
  const auto plateau = plateau_round(result.mean_reports);
  bool subsampled = false;
  for (const auto& r : result.mean_reports) subsampled = subsampled || r.diversity_subsampled;
  json manifest = {
      {"format", "karl-run-manifest"},
      {"version", 1},
      {"config_hash", config_hash(config)},
      {"schema_id", featurizer.schema_id().hex()},
      {"seeds",
       {{"master", config.seed},
        {"world", config.world_seed},
        {"derivation", "derive_seed(master, component, fold, round[, bag]) with splitmix64 mixing"}}},
      {"strategy", std::string(name(config.strategy))},
      {"annotator", annotator.id()},
      {"rounds", config.rounds},
      {"folds", std::move(folds)},
      {"inputs", data.input_hashes},
      {"outputs", {{"reports.csv", git_blob_hash(reports_csv)}, {"gains.csv", git_blob_hash(gains_csv)}}},
      {"choices",
       {{"qbc_score", "mean over classes of the population variance across members"},
        {"margin_score", "1 - (p1 - p2)"},
        {"unanimity", config.rel3_unanimity ? "3-class" : "9-class"},
        {"diversity_rows", "human training rows plus the bagged LLM rows, unique by pair key"},
        {"diversity_zero_variance", "rho = 0"},
        {"f1_zero_denominator", 0},
        {"argmax_ties", "lower class index"},
        {"excluded_pairs", "all human ID and OOD pairs plus every pair selected in an earlier round"},
        {"tuning", config.retune_each_round ? "every round" : "round 0, inner split"}}},
      {"baseline", {{"id_macro_f1", first.id_macro_f1}, {"ood_macro_f1", first.ood_macro_f1}, {"diversity", first.diversity}}},
      {"final",
       {{"round", last.round},
        {"id_macro_f1", last.id_macro_f1},
        {"ood_macro_f1", last.ood_macro_f1},
        {"diversity", last.diversity}}},
      {"plateau_round", plateau ? json(*plateau) : json(nullptr)},
      {"diversity_subsampled", subsampled},
      {"correlation", {{"id", result.gains.correlation_id}, {"ood", result.gains.correlation_ood}}},
  };
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  spdlog::info("run complete: ood {:.4f} -> {:.4f}; corr(diversity gain, f1 gain) id={:.3f} ood={:.3f}",
               first.ood_macro_f1, last.ood_macro_f1, result.gains.correlation_id, result.gains.correlation_ood);
}

}  // namespace

RunResult run(const RunConfig& config, const fs::path& out_dir, const RunOptions& options) {
  config.validate();
  fs::create_directories(out_dir);
  const fs::path cfg_path = out_dir / "config.json";
  const std::string cfg_hash = config_hash(config);
  if (fs::exists(cfg_path)) {
    json existing = json::parse(read_file(cfg_path), nullptr, false);
    if (existing.is_discarded()) throw CorruptCheckpoint("unreadable " + cfg_path.string());
    if (config_hash(config_from_json(existing)) != cfg_hash) {
      throw ConfigError("run directory " + out_dir.string() + " holds a run with a different config");
    }
  } else {
    write_file_atomic(cfg_path, config_to_json(config).dump(2) + "\n");
  }

  const Dataset data = load_dataset(config);
  const Featurizer featurizer(config.features, data.catalog);
  std::vector<Rel3> id_labels;
  for (const auto& r : data.human_id.rows()) id_labels.push_back(r.label);
  const FoldPlan plan = make_fold_plan(id_labels, config.folds, derive_seed(config.seed, "folds"));

  std::optional<RelationOracle> oracle_storage;
  auto annotator = make_annotator(config, data, out_dir, oracle_storage);
  std::unique_ptr<AnnotationCache> cache;
  if (config.cache && annotator->cacheable()) {
    cache = std::make_unique<AnnotationCache>(out_dir / "annotation_cache.jsonl");
  }

  std::vector<int> fold_ids;
  if (config.fold >= 0) {
    fold_ids.push_back(config.fold);
  } else {
    for (int f = 0; f < config.folds; ++f) fold_ids.push_back(f);
  }

  RunResult result;
  result.dir = out_dir;
  bool complete = true;
  for (int f : fold_ids) {
    const fs::path fold_dir = out_dir / fold_dir_name(f);
    fs::create_directories(fold_dir);
    const FoldRunner runner(config, data, featurizer, plan, f, *annotator, cache.get());
    FoldState state;
    if (auto latest = latest_round_dir(fold_dir)) {
      state = load_checkpoint(*latest);
      if (state.fold != f) throw CorruptCheckpoint("checkpoint in " + latest->string() + " belongs to another fold");
      spdlog::info("fold {}: resuming after round {}", f, state.round);
    } else {
      state = runner.initial_state();
      save_checkpoint(fold_dir, state, cfg_hash, adopted_csv(state.llm, 0));
    }
    while (state.round < config.rounds) {
      if (options.halt_after_round && state.round >= *options.halt_after_round) break;
      runner.run_round(state);
      save_checkpoint(fold_dir, state, cfg_hash, adopted_csv(state.llm, state.round));
    }
    complete = complete && state.round >= config.rounds;
    result.folds.push_back(std::move(state));
  }
  result.complete = complete;
  if (complete) write_outputs(config, data, featurizer, *annotator, out_dir, result);
  return result;
}

RunResult resume(const fs::path& run_dir, const RunOptions& options) {
  const fs::path cfg_path = run_dir / "config.json";
  if (!fs::exists(cfg_path)) throw CorruptCheckpoint("no config.json in " + run_dir.string());
  json j = json::parse(read_file(cfg_path), nullptr, false);
  if (j.is_discarded()) throw CorruptCheckpoint("unreadable " + cfg_path.string());
  bool any = false;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.is_directory() && latest_round_dir(entry.path())) any = true;
  }
  if (!any) throw CorruptCheckpoint("no round checkpoint in " + run_dir.string());
  return run(config_from_json(j), run_dir, options);
}

}  // namespace karl
