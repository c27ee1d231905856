#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "karl/common.hpp"
#include "karl/labeled_sets.hpp"
#include "karl/labels.hpp"

namespace karl {

struct Item {
  ItemId id;
  std::string title;
  std::string description;
  std::string fine_category;
  std::string broad_category;
  std::map<std::string, double> numeric_attrs;

  bool operator==(const Item&) const = default;
};

/// Immutable item collection with a two-level (fine, broad) category hierarchy.
/// Iteration order is insertion order; fine categories are listed in order of
/// first appearance.
class ItemCatalog {
public:
  ItemCatalog() = default;

  /// Validates ids (non-empty, unique), categories (non-empty) and that each
  /// fine category belongs to exactly one broad category.
  explicit ItemCatalog(std::vector<Item> items);

  std::span<const Item> items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  const Item* find(const ItemId& id) const;
  /// Throws UnknownItemError.
  const Item& at(const ItemId& id) const;
  std::size_t index_of(const ItemId& id) const;

  const std::vector<std::string>& fine_categories() const { return fine_order_; }
  const std::vector<std::string>& broad_categories() const { return broad_order_; }
  const std::string& broad_of(const std::string& fine) const;
  /// Item indices of a fine (or broad) category in catalog order.
  const std::vector<std::size_t>& items_in_fine(const std::string& fine) const;
  const std::vector<std::size_t>& items_in_broad(const std::string& broad) const;

  bool operator==(const ItemCatalog& other) const { return items_ == other.items_; }

private:
  std::vector<Item> items_;
  std::unordered_map<ItemId, std::size_t> by_id_;
  std::vector<std::string> fine_order_;
  std::vector<std::string> broad_order_;
  std::map<std::string, std::string> fine_to_broad_;
  std::map<std::string, std::vector<std::size_t>> by_fine_;
  std::map<std::string, std::vector<std::size_t>> by_broad_;
};

/// Reads the JSON-lines item file. Blank lines are skipped.
ItemCatalog load_catalog(const std::filesystem::path& path);
ItemCatalog parse_catalog(std::string_view jsonl);
std::string serialize_catalog(const ItemCatalog& catalog);
void save_catalog(const ItemCatalog& catalog, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

/// Fraction of pairs of each kind when drawing a human-labeled dataset. The
/// remainder are uniform same-broad pairs (mostly unrelated).
struct DatasetMix {
  double substitute = 0.2;
  double complementary = 0.25;

  bool operator==(const DatasetMix&) const = default;
};

struct WorldConfig {
  int broad_categories = 5;
  int fine_per_broad = 5;
  int items_per_fine = 30;
  int tags_per_fine = 2;
  int vocab_size = 3;                 // words per function tag
  double complementable_fraction = 0.6;
  double complement_density = 0.3;    // edge probability across fine categories
  double complement_density_same_fine = 0.9;
  double role_word_prob = 0.5;        // chance an item's text carries a shared role word
  double noise_rate = 0.1;
  double id_fraction = 0.6;           // share of fine categories per broad that are "seen"
  int human_id_pairs = 500;
  int human_ood_pairs = 500;
  DatasetMix id_mix{0.2, 0.25};
  DatasetMix ood_mix{0.5, 0.2};

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const WorldConfig&) const = default;
};

struct FunctionTag {
  std::string fine_category;
  bool complementable = false;

  bool operator==(const FunctionTag&) const = default;
};

/// Rule-based stand-in for a human or LLM annotator over a synthetic world.
///
/// Rules on (x, y): same function tag -> A; tags joined by a complement edge
/// -> the edge subtype, oriented by argument order; otherwise E when both
/// items share a fine category, else D. With probability noise_rate a draw
/// returns a uniformly chosen different class instead.
class RelationOracle {
public:
  RelationOracle() = default;
  RelationOracle(std::map<ItemId, int> item_tags, std::vector<FunctionTag> tags,
                 std::map<std::pair<int, int>, FBL9> edges, double noise_rate);

  FBL9 rule_label(const ItemId& x, const ItemId& y) const;
  FBL9 annotate(const ItemId& x, const ItemId& y, std::uint64_t draw_seed) const;

  double noise_rate() const { return noise_rate_; }
  RelationOracle with_noise(double noise_rate) const;
  int tag_of(const ItemId& id) const;
  const std::vector<FunctionTag>& tags() const { return tags_; }
  const std::map<ItemId, int>& item_tags() const { return item_tags_; }
  /// Keyed by (lower tag, higher tag); the label is oriented lower -> higher.
  const std::map<std::pair<int, int>, FBL9>& edges() const { return edges_; }

  std::string to_json() const;
  static RelationOracle from_json(std::string_view text);

  bool operator==(const RelationOracle&) const = default;

private:
  std::map<ItemId, int> item_tags_;
  std::vector<FunctionTag> tags_;
  std::map<std::pair<int, int>, FBL9> edges_;
  double noise_rate_ = 0.0;
};

/// oracle_annotate as a free function; throws UnknownItemError.
FBL9 oracle_annotate(const RelationOracle& oracle, const ItemPair& pair, std::uint64_t draw_seed);

struct SyntheticWorld {
  WorldConfig config;
  std::uint64_t seed = 0;
  ItemCatalog catalog;
  RelationOracle oracle;
  std::vector<std::string> seen_fines;
  std::vector<std::string> unseen_fines;
  HumanLabeledSet human_id;
  HumanLabeledSet human_ood;
};

SyntheticWorld generate_synthetic_world(const WorldConfig& config, std::uint64_t seed);

nlohmann::json world_config_to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const nlohmann::json& j);

/// Directory layout: world.json, items.jsonl, oracle.json, human_id.csv, human_ood.csv.
void save_world(const SyntheticWorld& world, const std::filesystem::path& dir);
SyntheticWorld load_world(const std::filesystem::path& dir);
/// Concatenation of every file save_world writes, in a fixed order.
std::string serialize_world(const SyntheticWorld& world);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace karl
