#include "karl/config.hpp"

#include <cctype>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace karl {

using nlohmann::json;

std::string_view name(AnnotatorKind k) { return k == AnnotatorKind::Oracle ? "oracle" : "llm"; }

AnnotatorKind annotator_from_name(std::string_view text) {
  if (text == "oracle") return AnnotatorKind::Oracle;
  if (text == "llm") return AnnotatorKind::Llm;
  throw InvalidArgument("unknown annotator '" + std::string(text) + "'; valid annotators: llm, oracle");
}

namespace {

std::string trimmed(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

template <typename T, typename F>
T parse_number(const std::string& key, const std::string& raw, F&& conv) {
  const std::string v = trimmed(raw);
  std::size_t used = 0;
  T out{};
  try {
    out = conv(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw ConfigError(key + ": cannot parse '" + raw + "' as a number");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  return parse_number<int>(key, v, [](const std::string& s, std::size_t* n) { return std::stoi(s, n); });
}
double to_double(const std::string& key, const std::string& v) {
  return parse_number<double>(key, v, [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
}
std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (!trimmed(v).empty() && trimmed(v)[0] == '-') throw ConfigError(key + ": must be non-negative");
  return parse_number<std::uint64_t>(key, v,
                                     [](const std::string& s, std::size_t* n) { return std::stoull(s, n); });
}
bool to_bool(const std::string& key, const std::string& raw) {
  std::string v = trimmed(raw);
  for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + raw + "'");
}
std::vector<double> to_grid(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(to_double(key, part));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define KARL_INT(k, member) \
  Field{k, [](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_int(k, v); }}
#define KARL_DOUBLE(k, member) \
  Field{k, [](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_double(k, v); }}
#define KARL_U64(k, member) \
  Field{k, [](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_u64(k, v); }}
#define KARL_BOOL(k, member) \
  Field{k, [](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_bool(k, v); }}
#define KARL_STR(k, member) \
  Field{k, [](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const std::string& v) { c.member = trimmed(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      KARL_INT("world.broad_categories", world.broad_categories),
      KARL_INT("world.fine_per_broad", world.fine_per_broad),
      KARL_INT("world.items_per_fine", world.items_per_fine),
      KARL_INT("world.tags_per_fine", world.tags_per_fine),
      KARL_INT("world.vocab_size", world.vocab_size),
      KARL_DOUBLE("world.complementable_fraction", world.complementable_fraction),
      KARL_DOUBLE("world.complement_density", world.complement_density),
      KARL_DOUBLE("world.complement_density_same_fine", world.complement_density_same_fine),
      KARL_DOUBLE("world.role_word_prob", world.role_word_prob),
      KARL_DOUBLE("world.noise_rate", world.noise_rate),
      KARL_DOUBLE("world.id_fraction", world.id_fraction),
      KARL_INT("world.human_id_pairs", world.human_id_pairs),
      KARL_INT("world.human_ood_pairs", world.human_ood_pairs),
      KARL_DOUBLE("world.id_mix_substitute", world.id_mix.substitute),
      KARL_DOUBLE("world.id_mix_complementary", world.id_mix.complementary),
      KARL_DOUBLE("world.ood_mix_substitute", world.ood_mix.substitute),
      KARL_DOUBLE("world.ood_mix_complementary", world.ood_mix.complementary),
      KARL_U64("world.seed", world_seed),

      KARL_INT("features.text_hash_dims", features.text_hash_dims_per_item),
      KARL_INT("features.category_hash_dims", features.category_hash_dims_per_item),
      KARL_INT("features.numeric_dims", features.numeric_dims_per_item),
      KARL_INT("features.interaction_dims", features.interaction_dims),
      KARL_U64("features.hash_seed", features.hash_seed),

      KARL_DOUBLE("classifier.l2_lambda", classifier.l2_lambda),
      KARL_INT("classifier.max_iters", classifier.max_iters),
      KARL_DOUBLE("classifier.tol", classifier.tol),
      KARL_INT("classifier.ensemble_size", ensemble_size),
      Field{"classifier.lambda_grid", [](const RunConfig& c) { return json(c.lambda_grid); },
            [](RunConfig& c, const std::string& v) { c.lambda_grid = to_grid("classifier.lambda_grid", v); }},
      KARL_BOOL("classifier.retune_each_round", retune_each_round),

      Field{"sampling.strategy", [](const RunConfig& c) { return json(std::string(name(c.strategy))); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.strategy = strategy_from_name(trimmed(v));
              } catch (const InvalidArgument& e) {
                throw ConfigError(std::string("sampling.strategy: ") + e.what());
              }
            }},
      KARL_INT("sampling.per_category_queries", per_category_queries),
      KARL_INT("sampling.per_query_candidates", per_query_candidates),

      Field{"annotation.annotator", [](const RunConfig& c) { return json(std::string(name(c.annotator))); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.annotator = annotator_from_name(trimmed(v));
              } catch (const InvalidArgument& e) {
                throw ConfigError(std::string("annotation.annotator: ") + e.what());
              }
            }},
      KARL_INT("annotation.draws", draws),
      KARL_BOOL("annotation.rel3_unanimity", rel3_unanimity),
      KARL_DOUBLE("annotation.oracle_noise", oracle_noise),
      KARL_INT("annotation.parse_attempts", parse_attempts),
      KARL_BOOL("annotation.cache", cache),

      KARL_STR("llm.endpoint", llm.endpoint),
      KARL_STR("llm.model", llm.model),
      KARL_DOUBLE("llm.temperature", llm.temperature),
      KARL_INT("llm.max_attempts", llm.max_attempts),
      KARL_DOUBLE("llm.backoff_initial_ms", llm.backoff_initial_ms),
      KARL_DOUBLE("llm.backoff_multiplier", llm.backoff_multiplier),
      KARL_DOUBLE("llm.timeout_s", llm.timeout_s),
      KARL_STR("llm.api_key_env", llm.api_key_env),

      KARL_INT("loop.rounds", rounds),
      KARL_U64("loop.seed", seed),
      KARL_INT("loop.parallelism", parallelism),
      KARL_INT("loop.eval_stride", eval_stride),

      KARL_INT("eval.folds", folds),
      KARL_INT("eval.fold", fold),
      Field{"eval.diversity_n_max", [](const RunConfig& c) { return json(c.diversity_n_max); },
            [](RunConfig& c, const std::string& v) { c.diversity_n_max = to_u64("eval.diversity_n_max", v); }},

      KARL_STR("data.world", world_dir),
      KARL_STR("data.catalog", catalog_path),
      KARL_STR("data.human_id", human_id_path),
      KARL_STR("data.human_ood", human_ood_path),
  };
  return table;
}

#undef KARL_INT
#undef KARL_DOUBLE
#undef KARL_U64
#undef KARL_BOOL
#undef KARL_STR

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::string json_to_setting(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (!out.empty()) out += ",";
      out += e.dump();
    }
    return out;
  }
  return v.dump();
}

}  // namespace

void RunConfig::validate() const {
  world.validate();
  features.validate();
  if (classifier.l2_lambda < 0.0) throw ConfigError("classifier.l2_lambda must be non-negative");
  if (classifier.max_iters < 1) throw ConfigError("classifier.max_iters must be at least 1");
  if (classifier.tol <= 0.0) throw ConfigError("classifier.tol must be positive");
  if (ensemble_size < 1) throw ConfigError("classifier.ensemble_size must be at least 1");
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("classifier.lambda_grid entries must be non-negative");
  }
  if (per_category_queries < 0 || per_query_candidates < 0) throw ConfigError("sampling caps must be non-negative");
  if (draws < 1) throw ConfigError("annotation.draws must be at least 1");
  if (parse_attempts < 1) throw ConfigError("annotation.parse_attempts must be at least 1");
  if (oracle_noise > 1.0) throw ConfigError("annotation.oracle_noise must be at most 1");
  if (llm.max_attempts < 1) throw ConfigError("llm.max_attempts must be at least 1");
  if (rounds < 0) throw ConfigError("loop.rounds must be non-negative");
  if (parallelism < 1) throw ConfigError("loop.parallelism must be at least 1");
  if (eval_stride < 1) throw ConfigError("loop.eval_stride must be at least 1");
  if (folds < 2) throw ConfigError("eval.folds must be at least 2");
  if (fold < -1 || fold >= folds) throw ConfigError("eval.fold must be -1 or a fold index below eval.folds");
  if (diversity_n_max < 2) throw ConfigError("eval.diversity_n_max must be at least 2");
}

void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value) {
  const Field* f = find_field(dotted_key);
  if (!f) throw ConfigError("unknown config key '" + dotted_key + "'");
  f->set(config, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig parse_config(std::string_view ini_text, RunConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) {
      set_config_value(base, section + "." + key, value.data());
    }
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path), std::move(base));
}

json config_to_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    j[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(config);
  }
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  if (!j.is_object()) throw ConfigError("resolved config must be a JSON object");
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) set_config_value(c, section + "." + key, json_to_setting(value));
  }
  c.validate();
  return c;
}

std::string config_hash(const RunConfig& config) {
  RunConfig c = config;
  c.parallelism = 1;  // results do not depend on it
  return to_hex(hash64(config_to_json(c).dump()));
}

}  // namespace karl
