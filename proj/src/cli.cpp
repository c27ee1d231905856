#include "karl/cli.hpp"

#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "karl/annotation.hpp"
#include "karl/config.hpp"
#include "karl/loop.hpp"

namespace karl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

/// Flags shared by the commands that build a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string strategy;
  int rounds = 20;
  std::string annotator;
  std::string llm_endpoint;
  int parallelism = 1;
  std::string world;
  int fold = -1;
  std::vector<std::string> overrides;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* strategy_opt = nullptr;
  CLI::Option* rounds_opt = nullptr;
  CLI::Option* annotator_opt = nullptr;
  CLI::Option* endpoint_opt = nullptr;
  CLI::Option* parallelism_opt = nullptr;
  CLI::Option* world_opt = nullptr;
  CLI::Option* fold_opt = nullptr;

  void add_to(CLI::App& app, bool loop_flags) {
    app.add_option("--config", config_path, "INI config file; flags override its values");
    seed_opt = app.add_option("--seed", seed, "Master seed");
    if (loop_flags) {
      strategy_opt = app.add_option("--strategy", strategy, "Sampling strategy")
                         ->check(CLI::IsMember({"random", "qbc", "margin"}))
                         ->default_str("margin");
      rounds_opt = app.add_option("--rounds", rounds, "Active-learning rounds after round 0");
      fold_opt = app.add_option("--fold", fold, "Outer fold to run (-1: all)");
    }
    annotator_opt = app.add_option("--annotator", annotator, "Annotator")
                        ->check(CLI::IsMember({"llm", "oracle"}))
                        ->default_str("oracle");
    endpoint_opt = app.add_option("--llm-endpoint", llm_endpoint, "Chat-completion URL (key read from $KARL_LLM_API_KEY)")
                       ->default_str(RunConfig{}.llm.endpoint);
    parallelism_opt = app.add_option("--parallelism", parallelism, "Worker threads");
    world_opt = app.add_option("--world", world, "Synthetic world directory");
    app.add_option("--set", overrides, "Extra config override section.key=value (repeatable)")->default_str("");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) c = load_config(config_path);
    if (seed_opt && seed_opt->count()) c.seed = seed;
    if (strategy_opt && strategy_opt->count()) c.strategy = strategy_from_name(strategy);
    if (rounds_opt && rounds_opt->count()) c.rounds = rounds;
    if (fold_opt && fold_opt->count()) c.fold = fold;
    if (annotator_opt && annotator_opt->count()) c.annotator = annotator_from_name(annotator);
    if (endpoint_opt && endpoint_opt->count()) c.llm.endpoint = llm_endpoint;
    if (parallelism_opt && parallelism_opt->count()) c.parallelism = parallelism;
    if (world_opt && world_opt->count()) c.world_dir = world;
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + o + "'");
      set_config_value(c, o.substr(0, eq), o.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

void print_counts(std::ostream& out, const std::string& label, const std::array<std::size_t, kNumRel3>& counts) {
  out << label << ":";
  for (Rel3 r : kAllRel3) out << " " << name(r) << "=" << counts[static_cast<std::size_t>(index_of(r))];
  out << "\n";
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_genworld(const ConfigFlags& flags, const std::string& out_dir, std::ostream& out) {
  RunConfig c = flags.resolve();
  const std::uint64_t seed = flags.seed_opt->count() ? flags.seed : c.world_seed;
  const SyntheticWorld world = generate_synthetic_world(c.world, seed);
  save_world(world, out_dir);
  out << "world written to " << out_dir << " (" << world.catalog.size() << " items, "
      << world.catalog.fine_categories().size() << " fine categories, " << world.seen_fines.size() << " seen)\n";
  print_counts(out, "human_id", world.human_id.class_counts());
  print_counts(out, "human_ood", world.human_ood.class_counts());
  return kExitOk;
}

int cmd_importlabels(const std::string& in, const std::string& catalog_path, const std::string& world,
                     const std::string& source, const std::string& out_path, std::ostream& out) {
  ItemCatalog catalog;
  if (!world.empty()) {
    catalog = load_world(world).catalog;
  } else if (!catalog_path.empty()) {
    catalog = load_catalog(catalog_path);
  } else {
    throw UsageError("importlabels needs --catalog or --world");
  }
  const HumanLabeledSet set = load_human_labels(in, &catalog, source);
  out << "imported " << set.size() << " pairs from " << in << "\n";
  print_counts(out, "classes", set.class_counts());
  if (!out_path.empty()) {
    save_human_labels(set, out_path);
    out << "written to " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_runloop(const ConfigFlags& flags, const std::string& out_dir, std::ostream& out) {
  const RunConfig c = flags.resolve();
  const RunResult r = run(c, out_dir);
  out << format_reports_csv(r.mean_reports, c.strategy);
  out << "correlation(diversity_gain, f1_gain): id=" << fixed4(r.gains.correlation_id)
      << " ood=" << fixed4(r.gains.correlation_ood) << "\n";
  return kExitOk;
}

int cmd_resume(const std::string& run_dir, std::ostream& out) {
  const RunResult r = resume(run_dir);
  const RunConfig c = config_from_json(json::parse(read_file(fs::path(run_dir) / "config.json")));
  out << format_reports_csv(r.mean_reports, c.strategy);
  return kExitOk;
}

int cmd_evaluate(const std::string& run_dir, int round, std::ostream& out) {
  const RunConfig c = config_from_json(json::parse(read_file(fs::path(run_dir) / "config.json")));
  const Dataset data = load_dataset(c);
  const Featurizer featurizer(c.features, data.catalog);
  std::vector<Rel3> labels;
  for (const auto& r : data.human_id.rows()) labels.push_back(r.label);
  const FoldPlan plan = make_fold_plan(labels, c.folds, derive_seed(c.seed, "folds"));
  const RelationOracle oracle = data.oracle ? *data.oracle : RelationOracle{};
  OracleAnnotator unused(oracle);

  out << "fold,round,id_macro_f1,ood_macro_f1\n";
  double id_sum = 0.0, ood_sum = 0.0;
  int n = 0;
  for (int f = 0; f < c.folds; ++f) {
    const fs::path fold_dir = fs::path(run_dir) / ("fold_" + std::to_string(f));
    std::optional<fs::path> dir;
    if (round >= 0) {
      char name[32];
      std::snprintf(name, sizeof name, "round_%04d", round);
      if (fs::is_directory(fold_dir / name)) dir = fold_dir / name;
    } else {
      dir = latest_round_dir(fold_dir);
    }
    if (!dir) continue;
    const FoldState s = load_checkpoint(*dir);
    const FoldRunner runner(c, data, featurizer, plan, f, unused, nullptr);
    const EvalResult r = evaluate_run(s.ensemble, runner.id_test(), runner.ood_test());
    out << f << "," << s.round << "," << fixed4(r.id_macro_f1) << "," << fixed4(r.ood_macro_f1) << "\n";
    id_sum += r.id_macro_f1;
    ood_sum += r.ood_macro_f1;
    ++n;
  }
  if (n == 0) throw CorruptCheckpoint("no checkpoint to evaluate in " + run_dir);
  out << "mean,," << fixed4(id_sum / n) << "," << fixed4(ood_sum / n) << "\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir, std::ostream& out) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "reports.csv") || !fs::exists(dir / "manifest.json")) {
    throw CorruptCheckpoint("run in " + run_dir + " is not complete; use resume");
  }
  out << read_file(dir / "reports.csv");
  const json m = json::parse(read_file(dir / "manifest.json"));
  out << "strategy: " << m.at("strategy").get<std::string>() << "\n";
  out << "baseline ood_macro_f1: " << fixed4(m.at("baseline").at("ood_macro_f1").get<double>()) << "\n";
  out << "final ood_macro_f1: " << fixed4(m.at("final").at("ood_macro_f1").get<double>()) << "\n";
  const auto& p = m.at("plateau_round");
  out << "plateau from round: " << (p.is_null() ? std::string("none") : std::to_string(p.get<int>())) << "\n";
  out << "correlation(diversity_gain, f1_gain): id=" << fixed4(m.at("correlation").at("id").get<double>())
      << " ood=" << fixed4(m.at("correlation").at("ood").get<double>()) << "\n";
  return kExitOk;
}

int cmd_annotate(const ConfigFlags& flags, const std::string& x_id, const std::string& y_id, int draws,
                 std::ostream& out) {
  RunConfig c = flags.resolve();
  Dataset data = load_dataset(c);
  const Item& x = data.catalog.at(x_id);
  const Item& y = data.catalog.at(y_id);
  std::optional<RelationOracle> oracle;
  std::unique_ptr<Annotator> annotator;
  if (c.annotator == AnnotatorKind::Oracle) {
    if (!data.oracle) throw ConfigError("the oracle annotator needs a synthetic world (--world)");
    oracle = c.oracle_noise >= 0.0 ? data.oracle->with_noise(c.oracle_noise) : *data.oracle;
    annotator = std::make_unique<OracleAnnotator>(*oracle);
  } else {
    annotator = std::make_unique<LlmAnnotator>(c.llm, c.parse_attempts);
  }
  ConsistencyOptions opts;
  opts.draws = draws;
  opts.rel3_unanimity = c.rel3_unanimity;
  const auto r = annotate_consistent(*annotator, x, y, derive_seed(derive_seed(c.seed, "annotate_once"), ItemPair{x_id, y_id}.key().str()),
                                     opts, nullptr);
  out << "pair: " << x_id << " " << y_id << "\n";
  out << "annotator: " << r.annotator << "\n";
  out << "draws:";
  for (std::size_t i = 0; i < r.draws.size(); ++i) out << (i ? ", " : " ") << code(r.draws[i]);
  out << "\n";
  if (r.skipped) {
    out << "skipped: " << r.error << "\n";
  } else if (r.adopted) {
    out << "adopted: " << code(*r.adopted) << " -> " << name(map_to_rel3(*r.adopted)) << "\n";
  } else {
    out << "not adopted\n";
  }
  return kExitOk;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("karl");
  if (!logger) logger = spdlog::stderr_color_mt("karl");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"karl: active learning for item relation labels", "karl"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  auto* genworld = app.add_subcommand("genworld", "Generate a synthetic world");
  ConfigFlags gw_flags;
  genworld->add_option("--config", gw_flags.config_path, "INI config file ([world] section)");
  gw_flags.seed_opt = genworld->add_option("--seed", gw_flags.seed, "World seed (default: world.seed)")->default_str("");
  genworld->add_option("--set", gw_flags.overrides, "Extra config override section.key=value (repeatable)")->default_str("");
  std::string gw_out;
  genworld->add_option("--out", gw_out, "Output directory")->required();

  auto* importlabels = app.add_subcommand("importlabels", "Validate and import a label CSV");
  std::string il_in, il_catalog, il_world, il_out, il_source = "custom";
  importlabels->add_option("--in", il_in, "Label CSV (item_x_id,item_y_id,label)")->required();
  importlabels->add_option("--catalog", il_catalog, "Catalog JSONL");
  importlabels->add_option("--world", il_world, "Synthetic world directory (its catalog is used)");
  importlabels->add_option("--source", il_source, "Source tag")
      ->check(CLI::IsMember({"id-dataset", "ood-dataset", "custom"}));
  importlabels->add_option("--out", il_out, "Normalized CSV to write");

  auto* runloop = app.add_subcommand("runloop", "Run the active-learning loop");
  ConfigFlags rl_flags;
  rl_flags.add_to(*runloop, true);
  std::string rl_out;
  runloop->add_option("--out", rl_out, "Run directory")->required();

  auto* resume_cmd = app.add_subcommand("resume", "Continue an interrupted run");
  std::string rs_run;
  resume_cmd->add_option("--run", rs_run, "Run directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a run's ensembles on the ID and OOD sets");
  std::string ev_run;
  int ev_round = -1;
  evaluate->add_option("--run", ev_run, "Run directory")->required();
  evaluate->add_option("--round", ev_round, "Round to evaluate (-1: latest)");

  auto* report = app.add_subcommand("report", "Print the reports and correlation summary of a run");
  std::string rp_run;
  report->add_option("--run", rp_run, "Run directory")->required();

  auto* annotate = app.add_subcommand("annotate", "Run the consistency protocol on one pair");
  ConfigFlags an_flags;
  an_flags.add_to(*annotate, false);
  std::string an_x, an_y;
  int an_draws = 3;
  annotate->add_option("--x", an_x, "First item id")->required();
  annotate->add_option("--y", an_y, "Second item id")->required();
  annotate->add_option("--draws", an_draws, "Draws per pair")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }
  setup_logging(log_level);

  try {
    if (genworld->parsed()) return cmd_genworld(gw_flags, gw_out, out);
    if (importlabels->parsed()) return cmd_importlabels(il_in, il_catalog, il_world, il_source, il_out, out);
    if (runloop->parsed()) return cmd_runloop(rl_flags, rl_out, out);
    if (resume_cmd->parsed()) return cmd_resume(rs_run, out);
    if (evaluate->parsed()) return cmd_evaluate(ev_run, ev_round, out);
    if (report->parsed()) return cmd_report(rp_run, out);
    if (annotate->parsed()) return cmd_annotate(an_flags, an_x, an_y, an_draws, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_run(args, std::cout, std::cerr);
}

}  // namespace karl
