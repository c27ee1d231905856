#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "karl/annotation.hpp"
#include "karl/catalog.hpp"
#include "karl/cli.hpp"
#include "karl/config.hpp"
#include "karl/eval.hpp"
#include "karl/loop.hpp"
#include "karl/sampling.hpp"

namespace py = pybind11;
using namespace karl;

namespace {

using Overrides = std::map<std::string, std::string>;

FBL9 to_fbl9(const std::string& s) {
  auto l = fbl9_from_code(s);
  if (!l) throw InvalidArgument("unknown label code '" + s + "'");
  return *l;
}

Rel3 to_rel3(const std::string& s) {
  auto r = rel3_from_name(s);
  if (!r) throw InvalidArgument("unknown relation '" + s + "'");
  return *r;
}

std::vector<Rel3> to_rel3s(const std::vector<std::string>& v) {
  std::vector<Rel3> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(to_rel3(s));
  return out;
}

Proba to_proba(const std::vector<double>& p) {
  if (p.size() != kNumRel3) throw InvalidArgument("expected 3 probabilities");
  return {p[0], p[1], p[2]};
}

py::dict report_dict(const RoundReport& r) {
  py::dict d;
  d["round"] = r.round;
  d["candidates"] = r.candidates;
  d["selected"] = r.selected;
  d["adopted"] = r.adopted;
  d["non_unanimous"] = r.non_unanimous;
  d["skipped"] = r.skipped;
  d["llm_size"] = r.llm_size;
  d["id_macro_f1"] = r.id_macro_f1;
  d["ood_macro_f1"] = r.ood_macro_f1;
  d["diversity"] = r.diversity;
  return d;
}

py::dict result_dict(const RunResult& r) {
  py::dict d;
  d["complete"] = r.complete;
  d["dir"] = r.dir;
  py::list reports;
  for (const auto& rep : r.mean_reports) reports.append(report_dict(rep));
  d["reports"] = reports;
  py::list folds;
  for (const auto& f : r.folds) {
    py::dict fd;
    fd["fold"] = f.fold;
    fd["round"] = f.round;
    fd["l2_lambda"] = f.hyperparams.l2_lambda;
    fd["llm_size"] = f.llm.size();
    folds.append(fd);
  }
  d["folds"] = folds;
  if (r.complete) {
    d["correlation"] = py::dict(py::arg("id") = r.gains.correlation_id, py::arg("ood") = r.gains.correlation_ood);
  }
  return d;
}

RunConfig build_config(const std::optional<std::filesystem::path>& config_path, const std::optional<std::string>& world,
                       const Overrides& overrides) {
  RunConfig c = config_path ? load_config(*config_path) : RunConfig{};
  if (world) c.world_dir = *world;
  for (const auto& [k, v] : overrides) set_config_value(c, k, v);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_karl, m) {
  m.doc() = "Active-learning engine for item relation labels";

  auto& base = py::register_exception<Error>(m, "KarlError");
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base);
  py::register_exception<LeakageError>(m, "LeakageError", base);
  py::register_exception<CorruptCheckpoint>(m, "CorruptCheckpoint", base);
  py::register_exception<UnparseableResponse>(m, "UnparseableResponse", base);
  py::register_exception<TransportError>(m, "TransportError", base);

  m.def("config_keys", &config_keys, "Every known section.key");

  m.def(
      "generate_world",
      [](const std::filesystem::path& out_dir, std::uint64_t seed, const Overrides& overrides) {
        RunConfig c;
        for (const auto& [k, v] : overrides) set_config_value(c, k, v);
        const SyntheticWorld w = generate_synthetic_world(c.world, seed);
        save_world(w, out_dir);
        py::dict d;
        d["items"] = w.catalog.size();
        d["seen_fines"] = w.seen_fines;
        d["unseen_fines"] = w.unseen_fines;
        d["human_id"] = w.human_id.rows().size();
        d["human_ood"] = w.human_ood.rows().size();
        return d;
      },
      py::arg("out_dir"), py::arg("seed") = 7, py::arg("overrides") = Overrides{},
      "Generate a synthetic world into out_dir; overrides are world.* config keys");

  m.def(
      "run",
      [](const std::filesystem::path& out_dir, std::optional<std::string> world,
         std::optional<std::filesystem::path> config, const Overrides& overrides, std::optional<int> halt_after_round) {
        const RunConfig c = build_config(config, world, overrides);
        py::gil_scoped_release release;
        RunResult r = run(c, out_dir, RunOptions{halt_after_round});
        py::gil_scoped_acquire acquire;
        return result_dict(r);
      },
      py::arg("out_dir"), py::arg("world") = py::none(), py::arg("config") = py::none(),
      py::arg("overrides") = Overrides{}, py::arg("halt_after_round") = py::none(),
      "Run or continue the loop in out_dir");

  m.def(
      "resume",
      [](const std::filesystem::path& run_dir, std::optional<int> halt_after_round) {
        py::gil_scoped_release release;
        RunResult r = resume(run_dir, RunOptions{halt_after_round});
        py::gil_scoped_acquire acquire;
        return result_dict(r);
      },
      py::arg("run_dir"), py::arg("halt_after_round") = py::none(), "Continue an interrupted run");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli_run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a karl subcommand; returns (exit_code, stdout, stderr)");

  m.def(
      "parse_label", [](const std::string& text) { return std::string(code(parse_label(text))); }, py::arg("text"),
      "First label code in a free-text response");
  m.def(
      "map_to_rel3", [](const std::string& c) { return std::string(name(map_to_rel3(to_fbl9(c)))); },
      py::arg("code"));
  m.def(
      "swap_direction", [](const std::string& c) { return std::string(code(swap_direction(to_fbl9(c)))); },
      py::arg("code"));
  m.def(
      "unanimous",
      [](const std::vector<std::string>& draws, bool rel3) -> std::optional<std::string> {
        std::vector<FBL9> d;
        for (const auto& s : draws) d.push_back(to_fbl9(s));
        auto r = unanimous(d, rel3);
        if (!r) return std::nullopt;
        return std::string(code(*r));
      },
      py::arg("draws"), py::arg("rel3_unanimity") = false, "Adopted label code, or None");

  m.def(
      "macro_f1",
      [](const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
        return macro_f1(to_rel3s(preds), to_rel3s(golds));
      },
      py::arg("preds"), py::arg("golds"));
  m.def(
      "pearson", [](const std::vector<double>& a, const std::vector<double>& b) { return pearson(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "diversity",
      [](const Eigen::MatrixXd& X, std::size_t n_max, std::uint64_t seed) { return diversity(X, n_max, seed).value; },
      py::arg("x"), py::arg("n_max") = 2000, py::arg("seed") = 0, "1 - mean |rho| over ordered row pairs");
  m.def(
      "margin_score", [](const std::vector<double>& p) { return margin_score(to_proba(p)); }, py::arg("p"));
  m.def(
      "qbc_score",
      [](const std::vector<std::vector<double>>& members) {
        std::vector<Proba> ps;
        for (const auto& p : members) ps.push_back(to_proba(p));
        return qbc_score(ps);
      },
      py::arg("members"));
}
