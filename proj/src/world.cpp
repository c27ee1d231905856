#include <cmath>
#include <numbers>
#include <set>

#include <json.hpp>

#include "karl/catalog.hpp"

namespace karl {

using nlohmann::json;

void WorldConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string("world.") + what + " must be positive");
  };
  auto unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("world.") + what + " must lie in [0, 1]");
  };
  positive(broad_categories, "broad_categories");
  positive(fine_per_broad, "fine_per_broad");
  positive(items_per_fine, "items_per_fine");
  positive(tags_per_fine, "tags_per_fine");
  positive(vocab_size, "vocab_size");
  if (human_id_pairs < 0 || human_ood_pairs < 0) throw ConfigError("world human pair counts must be >= 0");
  unit(complementable_fraction, "complementable_fraction");
  unit(complement_density, "complement_density");
  unit(complement_density_same_fine, "complement_density_same_fine");
  unit(role_word_prob, "role_word_prob");
  unit(noise_rate, "noise_rate");
  unit(id_fraction, "id_fraction");
  for (const DatasetMix* m : {&id_mix, &ood_mix}) {
    unit(m->substitute, "mix.substitute");
    unit(m->complementary, "mix.complementary");
    if (m->substitute + m->complementary > 1.0) throw ConfigError("world mix fractions exceed 1");
  }
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

RelationOracle::RelationOracle(std::map<ItemId, int> item_tags, std::vector<FunctionTag> tags,
                               std::map<std::pair<int, int>, FBL9> edges, double noise_rate)
    : item_tags_(std::move(item_tags)), tags_(std::move(tags)), edges_(std::move(edges)),
      noise_rate_(noise_rate) {
  if (!(noise_rate_ >= 0.0 && noise_rate_ <= 1.0)) throw ConfigError("noise_rate must lie in [0, 1]");
  for (const auto& [id, t] : item_tags_) {
    if (t < 0 || static_cast<std::size_t>(t) >= tags_.size()) {
      throw InvalidArgument("item '" + id + "' references an unknown tag");
    }
  }
  for (const auto& [k, l] : edges_) {
    if (k.first >= k.second) throw InvalidArgument("complement edges must be keyed (lower, higher)");
    if (map_to_rel3(l) != Rel3::Complementary) throw InvalidArgument("complement edge with a non-complement label");
  }
}

int RelationOracle::tag_of(const ItemId& id) const {
  auto it = item_tags_.find(id);
  if (it == item_tags_.end()) throw UnknownItemError("item '" + id + "' is not in the oracle's world");
  return it->second;
}

FBL9 RelationOracle::rule_label(const ItemId& x, const ItemId& y) const {
  const int tx = tag_of(x);
  const int ty = tag_of(y);
  if (tx == ty) return FBL9::A;
  auto it = edges_.find({std::min(tx, ty), std::max(tx, ty)});
  if (it != edges_.end()) return tx < ty ? it->second : swap_direction(it->second);
  const auto& fx = tags_[static_cast<std::size_t>(tx)].fine_category;
  const auto& fy = tags_[static_cast<std::size_t>(ty)].fine_category;
  return fx == fy ? FBL9::E : FBL9::D;
}

FBL9 RelationOracle::annotate(const ItemId& x, const ItemId& y, std::uint64_t draw_seed) const {
  const FBL9 rule = rule_label(x, y);
  if (noise_rate_ <= 0.0) return rule;
  Rng rng(derive_seed(draw_seed, hash64(x), hash64(y)));
  if (!rng.bernoulli(noise_rate_)) return rule;
  auto k = static_cast<int>(rng.below(kNumFBL9 - 1));
  if (k >= index_of(rule)) ++k;
  return static_cast<FBL9>(k);
}

RelationOracle RelationOracle::with_noise(double noise_rate) const {
  return RelationOracle(item_tags_, tags_, edges_, noise_rate);
}

std::string RelationOracle::to_json() const {
  json j;
  j["format"] = "karl-oracle";
  j["version"] = 1;
  j["noise_rate"] = noise_rate_;
  j["item_tags"] = item_tags_;
  json tags = json::array();
  for (const auto& t : tags_) tags.push_back({{"fine_category", t.fine_category}, {"complementable", t.complementable}});
  j["tags"] = std::move(tags);
  json edges = json::array();
  for (const auto& [k, l] : edges_) edges.push_back({k.first, k.second, std::string(code(l))});
  j["edges"] = std::move(edges);
  return j.dump(1) + "\n";
}

RelationOracle RelationOracle::from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    if (j.at("format") != "karl-oracle") throw ParseError("not an oracle file");
    std::vector<FunctionTag> tags;
    for (const auto& t : j.at("tags")) {
      tags.push_back({t.at("fine_category").get<std::string>(), t.at("complementable").get<bool>()});
    }
    std::map<std::pair<int, int>, FBL9> edges;
    for (const auto& e : j.at("edges")) {
      auto l = fbl9_from_code(e.at(2).get<std::string>());
      if (!l) throw ParseError("bad edge label");
      edges[{e.at(0).get<int>(), e.at(1).get<int>()}] = *l;
    }
    return RelationOracle(j.at("item_tags").get<std::map<ItemId, int>>(), std::move(tags),
                          std::move(edges), j.at("noise_rate").get<double>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed oracle file: ") + e.what());
  }
}

FBL9 oracle_annotate(const RelationOracle& oracle, const ItemPair& pair, std::uint64_t draw_seed) {
  return oracle.annotate(pair.x, pair.y, draw_seed);
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

namespace {

class WordMaker {
public:
  explicit WordMaker(Rng& rng) : rng_(rng) {}

  std::string fresh(int min_syllables = 2, int max_syllables = 3) {
    static constexpr std::string_view kOnset = "bdfghklmnprstvz";
    static constexpr std::string_view kVowel = "aeiou";
    for (;;) {
      const auto n = min_syllables + static_cast<int>(rng_.below(static_cast<std::uint64_t>(max_syllables - min_syllables + 1)));
      std::string w;
      for (int s = 0; s < n; ++s) {
        w.push_back(kOnset[rng_.below(kOnset.size())]);
        w.push_back(kVowel[rng_.below(kVowel.size())]);
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> fresh_list(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(fresh());
    return out;
  }

private:
  Rng& rng_;
  std::set<std::string> used_;
};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

std::string join_words(std::vector<std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

double normal(Rng& rng) {
  // Box-Muller; u1 in (0, 1].
  const double u1 = 1.0 - rng.uniform01();
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct TagText {
  std::vector<std::string> words;
  double log_price = 0.0;
};

HumanLabeledSet draw_human_set(const ItemCatalog& catalog, const RelationOracle& oracle,
                               const std::vector<std::string>& fines, int n_pairs,
                               const DatasetMix& mix, Rng& rng, std::string source) {
  std::set<std::string> fine_set(fines.begin(), fines.end());
  std::vector<std::size_t> items;
  for (const auto& f : fines) {
    const auto& v = catalog.items_in_fine(f);
    items.insert(items.end(), v.begin(), v.end());
  }
  std::map<int, std::vector<std::size_t>> by_tag;
  for (std::size_t i : items) by_tag[oracle.tag_of(catalog.items()[i].id)].push_back(i);
  std::vector<std::pair<int, int>> edges;
  for (const auto& [k, l] : oracle.edges()) {
    if (by_tag.count(k.first) && by_tag.count(k.second)) edges.push_back(k);
  }

  std::vector<LabeledPair> rows;
  std::set<PairKey> seen;
  const int max_attempts = n_pairs * 50 + 100;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(rows.size()) < n_pairs; ++attempt) {
    if (items.size() < 2) break;
    const double u = rng.uniform01();
    std::size_t a = 0;
    std::size_t b = 0;
    if (u < mix.substitute) {
      a = pick(rng, items);
      const auto& same = by_tag[oracle.tag_of(catalog.items()[a].id)];
      if (same.size() < 2) continue;
      b = pick(rng, same);
    } else if (u < mix.substitute + mix.complementary) {
      if (edges.empty()) continue;
      const auto& e = pick(rng, edges);
      a = pick(rng, by_tag[e.first]);
      b = pick(rng, by_tag[e.second]);
    } else {
      a = pick(rng, items);
      const auto& broad = catalog.items_in_broad(catalog.items()[a].broad_category);
      b = pick(rng, broad);
      if (!fine_set.count(catalog.items()[b].fine_category)) continue;
    }
    if (a == b) continue;
    if (rng.bernoulli(0.5)) std::swap(a, b);
    ItemPair pair{catalog.items()[a].id, catalog.items()[b].id};
    if (!seen.insert(pair.key()).second) continue;
    rows.push_back({pair, map_to_rel3(oracle.rule_label(pair.x, pair.y))});
  }
  return HumanLabeledSet(std::move(rows), std::move(source));
}

const char* const kBroadNames[] = {"Office Supplies", "Household Goods", "Kitchenware",
                                   "Electronics",     "Outdoor",         "Personal Care"};

}  // namespace

SyntheticWorld generate_synthetic_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "world"));
  WordMaker words(rng);

  const std::vector<std::string> fillers = words.fresh_list(40);
  const std::vector<std::string> role_words = words.fresh_list(6);

  std::vector<Item> items;
  std::map<ItemId, int> item_tags;
  std::vector<FunctionTag> tags;
  std::vector<std::vector<int>> broad_tags(static_cast<std::size_t>(config.broad_categories));
  std::vector<std::string> seen, unseen;

  int next_item = 0;
  for (int b = 0; b < config.broad_categories; ++b) {
    const std::string broad = b < 6 ? std::string(kBroadNames[b]) : "Broad " + words.fresh();
    const auto broad_words = words.fresh_list(3);

    const int n_seen = static_cast<int>(std::lround(config.id_fraction * config.fine_per_broad));
    std::vector<int> order(static_cast<std::size_t>(config.fine_per_broad));
    for (int f = 0; f < config.fine_per_broad; ++f) order[static_cast<std::size_t>(f)] = f;
    rng.shuffle(order);
    std::set<int> seen_idx(order.begin(), order.begin() + n_seen);

    for (int f = 0; f < config.fine_per_broad; ++f) {
      const std::string fine_word = words.fresh();
      const std::string fine = fine_word + " " + (b == 0 ? "supplies" : "goods") + " " + std::to_string(b) + "." + std::to_string(f);
      (seen_idx.count(f) ? seen : unseen).push_back(fine);
      const auto fine_words = words.fresh_list(4);

      std::vector<int> fine_tags;
      std::vector<TagText> tag_text;
      for (int t = 0; t < config.tags_per_fine; ++t) {
        const int tag_id = static_cast<int>(tags.size());
        tags.push_back({fine, rng.bernoulli(config.complementable_fraction)});
        fine_tags.push_back(tag_id);
        broad_tags[static_cast<std::size_t>(b)].push_back(tag_id);
        tag_text.push_back({words.fresh_list(config.vocab_size), 1.0 + 5.0 * rng.uniform01()});
      }

      std::vector<int> assignment(static_cast<std::size_t>(config.items_per_fine));
      for (int i = 0; i < config.items_per_fine; ++i) {
        assignment[static_cast<std::size_t>(i)] = i % config.tags_per_fine;
      }
      rng.shuffle(assignment);

      for (int i = 0; i < config.items_per_fine; ++i) {
        const int local = assignment[static_cast<std::size_t>(i)];
        const int tag_id = fine_tags[static_cast<std::size_t>(local)];
        const TagText& tt = tag_text[static_cast<std::size_t>(local)];
        const bool role = tags[static_cast<std::size_t>(tag_id)].complementable &&
                          rng.bernoulli(config.role_word_prob);

        std::vector<std::string> title = {pick(rng, tt.words), pick(rng, tt.words), pick(rng, fine_words)};
        if (role) title.push_back(pick(rng, role_words));
        rng.shuffle(title);

        std::vector<std::string> desc = {pick(rng, tt.words), pick(rng, tt.words), pick(rng, tt.words),
                                         pick(rng, fine_words), pick(rng, fine_words),
                                         pick(rng, broad_words), pick(rng, fillers), pick(rng, fillers)};
        if (role) desc.push_back(pick(rng, role_words));
        rng.shuffle(desc);

        char id_buf[32];
        std::snprintf(id_buf, sizeof id_buf, "it%05d", next_item++);
        Item item;
        item.id = id_buf;
        item.title = join_words(std::move(title));
        item.description = join_words(std::move(desc));
        item.fine_category = fine;
        item.broad_category = broad;
        item.numeric_attrs["price"] = std::round(std::exp(tt.log_price + 0.3 * normal(rng)) * 100.0) / 100.0;
        item.numeric_attrs["pack_size"] = static_cast<double>(1 + rng.below(12));
        item_tags[item.id] = tag_id;
        items.push_back(std::move(item));
      }
    }
  }

  static constexpr std::array<FBL9, 6> kComplementTypes = {FBL9::B1, FBL9::B2, FBL9::C1,
                                                           FBL9::C2, FBL9::C3, FBL9::C4};
  std::map<std::pair<int, int>, FBL9> edges;
  for (const auto& bt : broad_tags) {
    for (std::size_t i = 0; i < bt.size(); ++i) {
      for (std::size_t j = i + 1; j < bt.size(); ++j) {
        const auto& ti = tags[static_cast<std::size_t>(bt[i])];
        const auto& tj = tags[static_cast<std::size_t>(bt[j])];
        const double u = rng.uniform01();
        const auto type = kComplementTypes[rng.below(kComplementTypes.size())];
        if (!ti.complementable || !tj.complementable) continue;
        const double p = ti.fine_category == tj.fine_category ? config.complement_density_same_fine
                                                              : config.complement_density;
        if (u < p) edges[{bt[i], bt[j]}] = type;
      }
    }
  }

  SyntheticWorld world;
  world.config = config;
  world.seed = seed;
  world.catalog = ItemCatalog(std::move(items));
  world.oracle = RelationOracle(std::move(item_tags), std::move(tags), std::move(edges), config.noise_rate);
  world.seen_fines = std::move(seen);
  world.unseen_fines = std::move(unseen);

  Rng id_rng(derive_seed(seed, "human_id"));
  Rng ood_rng(derive_seed(seed, "human_ood"));
  world.human_id = draw_human_set(world.catalog, world.oracle, world.seen_fines, config.human_id_pairs,
                                  config.id_mix, id_rng, "id-dataset");
  world.human_ood = draw_human_set(world.catalog, world.oracle, world.unseen_fines,
                                   config.human_ood_pairs, config.ood_mix, ood_rng, "ood-dataset");
  return world;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json mix_to_json(const DatasetMix& m) { return {{"substitute", m.substitute}, {"complementary", m.complementary}}; }

DatasetMix mix_from_json(const json& j) {
  return {j.at("substitute").get<double>(), j.at("complementary").get<double>()};
}

}  // namespace

json world_config_to_json(const WorldConfig& c) {
  return {{"broad_categories", c.broad_categories},
          {"fine_per_broad", c.fine_per_broad},
          {"items_per_fine", c.items_per_fine},
          {"tags_per_fine", c.tags_per_fine},
          {"vocab_size", c.vocab_size},
          {"complementable_fraction", c.complementable_fraction},
          {"complement_density", c.complement_density},
          {"complement_density_same_fine", c.complement_density_same_fine},
          {"role_word_prob", c.role_word_prob},
          {"noise_rate", c.noise_rate},
          {"id_fraction", c.id_fraction},
          {"human_id_pairs", c.human_id_pairs},
          {"human_ood_pairs", c.human_ood_pairs},
          {"id_mix", mix_to_json(c.id_mix)},
          {"ood_mix", mix_to_json(c.ood_mix)}};
}

WorldConfig world_config_from_json(const json& j) {
  WorldConfig c;
  c.broad_categories = j.at("broad_categories").get<int>();
  c.fine_per_broad = j.at("fine_per_broad").get<int>();
  c.items_per_fine = j.at("items_per_fine").get<int>();
  c.tags_per_fine = j.at("tags_per_fine").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.complementable_fraction = j.at("complementable_fraction").get<double>();
  c.complement_density = j.at("complement_density").get<double>();
  c.complement_density_same_fine = j.at("complement_density_same_fine").get<double>();
  c.role_word_prob = j.at("role_word_prob").get<double>();
  c.noise_rate = j.at("noise_rate").get<double>();
  c.id_fraction = j.at("id_fraction").get<double>();
  c.human_id_pairs = j.at("human_id_pairs").get<int>();
  c.human_ood_pairs = j.at("human_ood_pairs").get<int>();
  c.id_mix = mix_from_json(j.at("id_mix"));
  c.ood_mix = mix_from_json(j.at("ood_mix"));
  return c;
}

namespace {

std::string world_meta(const SyntheticWorld& w) {
  json j;
  j["format"] = "karl-world";
  j["version"] = 1;
  j["seed"] = w.seed;
  j["config"] = world_config_to_json(w.config);
  j["seen_fine_categories"] = w.seen_fines;
  j["unseen_fine_categories"] = w.unseen_fines;
  return j.dump(1) + "\n";
}

}  // namespace

std::string serialize_world(const SyntheticWorld& world) {
  return world_meta(world) + serialize_catalog(world.catalog) + world.oracle.to_json() +
         format_human_labels(world.human_id) + format_human_labels(world.human_ood);
}

void save_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "world.json", world_meta(world));
  save_catalog(world.catalog, dir / "items.jsonl");
  write_file_atomic(dir / "oracle.json", world.oracle.to_json());
  save_human_labels(world.human_id, dir / "human_id.csv");
  save_human_labels(world.human_ood, dir / "human_ood.csv");
}

SyntheticWorld load_world(const std::filesystem::path& dir) {
  SyntheticWorld w;
  try {
    json meta = json::parse(read_file(dir / "world.json"));
    if (meta.at("format") != "karl-world") throw ParseError("not a world file");
    w.seed = meta.at("seed").get<std::uint64_t>();
    w.config = world_config_from_json(meta.at("config"));
    w.seen_fines = meta.at("seen_fine_categories").get<std::vector<std::string>>();
    w.unseen_fines = meta.at("unseen_fine_categories").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed world.json: ") + e.what());
  }
  w.catalog = load_catalog(dir / "items.jsonl");
  w.oracle = RelationOracle::from_json(read_file(dir / "oracle.json"));
  w.human_id = load_human_labels(dir / "human_id.csv", &w.catalog, "id-dataset");
  w.human_ood = load_human_labels(dir / "human_ood.csv", &w.catalog, "ood-dataset");
  return w;
}

}  // namespace karl
