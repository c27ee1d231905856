#pragma once

#include <string>
#include <vector>

#include "karl/catalog.hpp"
#include "karl/config.hpp"

namespace karl::testing {

inline Item make_item(std::string id, std::string fine, std::string broad, std::string title = "",
                      std::string description = "") {
  Item it;
  it.id = std::move(id);
  it.title = title.empty() ? "item " + it.id : std::move(title);
  it.description = std::move(description);
  it.fine_category = std::move(fine);
  it.broad_category = std::move(broad);
  return it;
}

/// `fines` fine categories of `per_fine` items each, split evenly over `broads` broad categories.
inline ItemCatalog grid_catalog(int broads, int fines_per_broad, int per_fine) {
  std::vector<Item> items;
  int n = 0;
  for (int b = 0; b < broads; ++b) {
    for (int f = 0; f < fines_per_broad; ++f) {
      for (int i = 0; i < per_fine; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "i%04d", n++);
        items.push_back(make_item(id, "fine" + std::to_string(b) + "." + std::to_string(f),
                                  "broad" + std::to_string(b), "word" + std::to_string(i % 7) + " thing"));
      }
    }
  }
  return ItemCatalog(std::move(items));
}

/// A world small enough for loop tests that finish in seconds.
inline WorldConfig tiny_world_config() {
  WorldConfig w;
  w.broad_categories = 2;
  w.fine_per_broad = 3;
  w.items_per_fine = 12;
  w.tags_per_fine = 2;
  w.human_id_pairs = 150;
  w.human_ood_pairs = 120;
  return w;
}

inline RunConfig tiny_run_config() {
  RunConfig c;
  c.world = tiny_world_config();
  c.rounds = 3;
  c.folds = 3;
  c.fold = 0;
  c.per_category_queries = 3;
  c.per_query_candidates = 10;
  c.ensemble_size = 3;
  c.lambda_grid = {1e-2, 1e-1};
  c.classifier.max_iters = 150;
  return c;
}

}  // namespace karl::testing

#include <filesystem>
#include <random>

namespace karl::testing {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  static std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() / ("karl-test-" + name + "-" + std::to_string(rd()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Generates the tiny world into `dir` and returns a run config pointing at it.
inline RunConfig tiny_world_run(const std::filesystem::path& dir, std::uint64_t world_seed = 7) {
  RunConfig c = tiny_run_config();
  save_world(generate_synthetic_world(c.world, world_seed), dir);
  c.world_dir = dir.string();
  return c;
}

}  // namespace karl::testing
