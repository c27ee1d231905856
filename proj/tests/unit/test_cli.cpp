#include <doctest.h>

#include <fstream>
#include <sstream>

#include "karl/catalog.hpp"
#include "karl/cli.hpp"
#include "support/fixtures.hpp"

using namespace karl;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), {"--log-level", "off"});
  const int code = cli_run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string snapshot(const std::string& name) { return read_file(fs::path(KARL_TEST_DATA_DIR) / name); }

}  // namespace

TEST_CASE("help output matches the snapshots") {
  CHECK(cli({"--help"}).out == snapshot("help.txt"));
  for (const char* cmd : {"genworld", "importlabels", "runloop", "resume", "evaluate", "report", "annotate"}) {
    CAPTURE(cmd);
    auto r = cli({cmd, "--help"});
    CHECK(r.code == 0);
    CHECK(r.out == snapshot(std::string("help_") + cmd + ".txt"));
  }
}

TEST_CASE("usage errors exit 1") {
  auto r = cli({"runloop", "--strategy", "qcb", "--out", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("random") != std::string::npos);
  CHECK(r.err.find("qbc") != std::string::npos);
  CHECK(r.err.find("margin") != std::string::npos);
  CHECK(cli({"runloop"}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"runloop", "--bogus", "--out", "x"}).code == 1);
  CHECK(cli({"runloop", "--config", "/nonexistent.ini", "--out", "x"}).code == 1);
}

TEST_CASE("genworld, runloop, report, evaluate, annotate") {
  auto root = karl::testing::temp_dir("cli");
  const auto ini = root / "w.cfg";
  std::ofstream(ini) << "[world]\nbroad_categories = 2\nfine_per_broad = 3\nitems_per_fine = 12\ntags_per_fine = 2\n"
                        "human_id_pairs = 150\nhuman_ood_pairs = 120\n"
                        "[sampling]\nper_category_queries = 3\nper_query_candidates = 10\n"
                        "[classifier]\nensemble_size = 3\nlambda_grid = 0.01,0.1\nmax_iters = 150\n"
                        "[eval]\nfolds = 3\nfold = 0\n";
  const auto world = (root / "world").string();
  auto g = cli({"genworld", "--config", ini.string(), "--seed", "7", "--out", world});
  CHECK(g.code == 0);
  CHECK(fs::exists(fs::path(world) / "items.jsonl"));
  auto g2 = cli({"genworld", "--config", ini.string(), "--seed", "7", "--out", (root / "world2").string()});
  CHECK(serialize_world(load_world(world)) == serialize_world(load_world(root / "world2")));

  const auto run_dir = (root / "run").string();
  auto r = cli({"runloop", "--config", ini.string(), "--strategy", "margin", "--rounds", "2", "--annotator", "oracle",
                "--world", world, "--out", run_dir});
  CHECK(r.code == 0);
  const auto reports = read_file(fs::path(run_dir) / "reports.csv");
  CHECK(std::count(reports.begin(), reports.end(), '\n') == 4);
  CHECK(r.out.rfind(reports, 0) == 0);

  auto rep = cli({"report", "--run", run_dir});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("strategy: margin") != std::string::npos);
  auto ev = cli({"evaluate", "--run", run_dir, "--round", "0"});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("0,0,") != std::string::npos);
  auto rs = cli({"resume", "--run", run_dir});
  CHECK(rs.code == 0);
  CHECK(rs.out == reports);

  auto w = load_world(world);
  const auto clean = w.oracle.with_noise(0.0);
  std::string x, y;
  for (const auto& a : w.catalog.items()) {
    for (const auto& b : w.catalog.items()) {
      if (a.id != b.id && clean.rule_label(a.id, b.id) == FBL9::A && x.empty()) {
        x = a.id;
        y = b.id;
      }
    }
  }
  REQUIRE_FALSE(x.empty());
  auto an = cli({"annotate", "--world", world, "--set", "annotation.oracle_noise=0", "--x", x, "--y", y});
  CHECK(an.code == 0);
  CHECK(an.out.find("draws: A, A, A") != std::string::npos);
  CHECK(an.out.find("adopted: A -> substitute") != std::string::npos);
  auto again = cli({"annotate", "--world", world, "--x", x, "--y", y, "--seed", "3"});
  CHECK(again.out == cli({"annotate", "--world", world, "--x", x, "--y", y, "--seed", "3"}).out);
  CHECK(cli({"annotate", "--world", world, "--x", x, "--y", "nope"}).code == 2);

  const auto labels = root / "labels.csv";
  std::ofstream(labels) << "item_x_id,item_y_id,label\n" << x << "," << y << ",substitute\n";
  auto im = cli({"importlabels", "--in", labels.string(), "--world", world});
  CHECK(im.code == 0);
  CHECK(im.out.find("substitute=1") != std::string::npos);
  std::ofstream(labels, std::ios::app) << x << ",ghost,unrelated\n";
  CHECK(cli({"importlabels", "--in", labels.string(), "--world", world}).code == 2);
  fs::remove_all(root);
}
