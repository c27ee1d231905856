#include "karl/annotation.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>

#include <spdlog/spdlog.h>

#include "karl/parallel.hpp"

namespace karl {

using nlohmann::json;

const std::string kSystemMessage =
    "You label functional relationships between two retail items. Reply with a single label code.";

namespace {

struct Definition {
  FBL9 label;
  const char* text;
};

constexpr Definition kDefinitions[] = {
    {FBL9::A, "x and y serve the same purpose and are used in the same way."},
    {FBL9::B1, "y is a refill or replenishment for x."},
    {FBL9::B2, "x is a refill or replenishment for y."},
    {FBL9::C1, "x and y only work when used together."},
    {FBL9::C2, "x is more useful when used together with y."},
    {FBL9::C3, "y is more useful when used together with x."},
    {FBL9::C4, "x and y are both more useful when used together."},
    {FBL9::D, "x and y are not related."},
    {FBL9::E, "x and y appear related, but the relationship is hard to put into words."},
};

void append_item(std::string& out, const char* slot, const Item& item) {
  out += "Item ";
  out += slot;
  out += ":\n  Title: " + item.title + "\n  Description: " + item.description + "\n  Category: " +
         item.fine_category + " (" + item.broad_category + ")\n";
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?' || c == ';' || c == '\n'; }

/// Code starting at i, with its end offset.
std::optional<std::pair<FBL9, std::size_t>> code_at(std::string_view s, std::size_t i) {
  if (i > 0 && is_alnum(s[i - 1])) return std::nullopt;
  const char c = s[i];
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == 'B' || up == 'C') {
    std::size_t j = i + 1;
    if (j < s.size() && s[j] == '-') ++j;
    if (j >= s.size()) return std::nullopt;
    const char d = s[j];
    const char max_digit = up == 'B' ? '2' : '4';
    if (d < '1' || d > max_digit) return std::nullopt;
    if (j + 1 < s.size() && is_alnum(s[j + 1])) return std::nullopt;
    const std::string code{up, d};
    return std::pair{*fbl9_from_code(code), j + 1};
  }
  if (c == 'A' || c == 'D' || c == 'E') {
    if (i + 1 < s.size() && is_alnum(s[i + 1])) return std::nullopt;
    // "E-mail", "A-B" and the like are words, not codes.
    if (i + 1 < s.size() && s[i + 1] == '-' && i + 2 < s.size() && is_alnum(s[i + 2])) return std::nullopt;
    return std::pair{*fbl9_from_code(std::string(1, c)), i + 1};
  }
  return std::nullopt;
}

std::string trim_response(std::string_view s) {
  std::size_t b = 0, e = s.size();
  auto junk = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == '"' || c == '\'' || c == '(' ||
           c == ')' || c == '*';
  };
  while (b < e && junk(s[b])) ++b;
  while (e > b && junk(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string build_prompt(const Item& x, const Item& y) {
  std::string out =
      "Classify the functional relationship between item x and item y using exactly one of these codes:\n";
  for (const auto& d : kDefinitions) {
    out += "(";
    out += code(d.label);
    out += ") ";
    out += d.text;
    out += "\n";
  }
  out += "\n";
  append_item(out, "x", x);
  append_item(out, "y", y);
  out += "\nRespond with the code only.";
  return out;
}

FBL9 parse_label(std::string_view response) {
  const std::string whole = trim_response(response);
  if (whole.size() == 1) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(whole[0])));
    if (up == 'A' || up == 'D' || up == 'E') return *fbl9_from_code(std::string(1, up));
  }
  std::optional<FBL9> first;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (first && is_terminator(response[i])) break;
    auto hit = code_at(response, i);
    if (!hit) continue;
    if (!first) {
      first = hit->first;
    } else if (hit->first != *first) {
      throw UnparseableResponse("ambiguous response: both " + std::string(code(*first)) + " and " +
                                std::string(code(hit->first)) + " given");
    }
    i = hit->second - 1;
  }
  if (!first) throw UnparseableResponse("no label code in response");
  return *first;
}

std::string OracleAnnotator::id() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "oracle(noise=%.6g)", oracle_->noise_rate());
  return buf;
}

FBL9 OracleAnnotator::draw(const Item& x, const Item& y, std::uint64_t draw_seed) {
  return oracle_->annotate(x.id, y.id, draw_seed);
}

LlmAnnotator::LlmAnnotator(LlmClientConfig config, int parse_attempts)
    : client_(std::move(config)), parse_attempts_(parse_attempts) {
  if (parse_attempts_ < 1) throw ConfigError("annotation: parse_attempts must be at least 1");
}

std::string LlmAnnotator::id() const { return "llm:" + client_.config().model; }

FBL9 LlmAnnotator::draw(const Item& x, const Item& y, std::uint64_t) {
  const std::string prompt = build_prompt(x, y);
  std::string last;
  for (int attempt = 1; attempt <= parse_attempts_; ++attempt) {
    try {
      return parse_label(client_.complete(kSystemMessage, prompt));
    } catch (const UnparseableResponse& e) {
      last = e.what();
      spdlog::debug("unparseable response for {}|{} (attempt {}): {}", x.id, y.id, attempt, last);
    }
  }
  throw UnparseableResponse(last);
}

AnnotationCache::AnnotationCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ifstream in(path_, std::ios::binary);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    std::vector<FBL9> draws;
    bool ok = !j.is_discarded() && j.contains("key") && j.contains("draws") && j["draws"].is_array();
    if (ok) {
      for (const auto& d : j["draws"]) {
        auto l = d.is_string() ? fbl9_from_code(d.get<std::string>()) : std::nullopt;
        if (!l) {
          ok = false;
          break;
        }
        draws.push_back(*l);
      }
    }
    if (!ok) {
      spdlog::warn("annotation cache {}: ignoring malformed line {}", path_.string(), lineno);
      continue;
    }
    entries_[j["key"].get<std::string>()] = std::move(draws);
  }
}

std::string AnnotationCache::make_key(const PairKey& key, std::uint64_t prompt_hash, const std::string& annotator) {
  return key.str() + "#" + to_hex(prompt_hash) + "#" + annotator;
}

std::optional<std::vector<FBL9>> AnnotationCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void AnnotationCache::put(const std::string& key, const std::vector<FBL9>& draws) {
  std::lock_guard lock(mu_);
  entries_[key] = draws;
  if (path_.empty()) return;
  json j = {{"key", key}, {"draws", json::array()}};
  for (FBL9 d : draws) j["draws"].push_back(std::string(code(d)));
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << j.dump() << "\n";
}

std::size_t AnnotationCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::optional<FBL9> unanimous(const std::vector<FBL9>& draws, bool rel3_unanimity) {
  if (draws.empty()) return std::nullopt;
  for (FBL9 d : draws) {
    const bool same = rel3_unanimity ? map_to_rel3(d) == map_to_rel3(draws.front()) : d == draws.front();
    if (!same) return std::nullopt;
  }
  if (!rel3_unanimity) return draws.front();
  // Most frequent 9-class draw; ties go to the earliest.
  FBL9 best = draws.front();
  std::size_t best_count = 0;
  for (FBL9 d : draws) {
    const auto n = static_cast<std::size_t>(std::count(draws.begin(), draws.end(), d));
    if (n > best_count) {
      best = d;
      best_count = n;
    }
  }
  return best;
}

ConsistencyResult annotate_consistent(Annotator& annotator, const Item& x, const Item& y, std::uint64_t pair_seed,
                                      const ConsistencyOptions& options, AnnotationCache* cache) {
  if (options.draws < 1) throw InvalidArgument("annotate_consistent: draws must be at least 1");
  ConsistencyResult r;
  r.pair = {x.id, y.id};
  r.annotator = annotator.id();

  std::string cache_key;
  if (cache && annotator.cacheable()) {
    const std::uint64_t prompt_hash = hash64(kSystemMessage + "\n" + build_prompt(x, y));
    cache_key = AnnotationCache::make_key(r.key(), prompt_hash, r.annotator);
    if (auto hit = cache->get(cache_key); hit && hit->size() == static_cast<std::size_t>(options.draws)) {
      r.draws = std::move(*hit);
      r.from_cache = true;
      r.adopted = unanimous(r.draws, options.rel3_unanimity);
      return r;
    }
  }

  try {
    for (int i = 0; i < options.draws; ++i) {
      r.draws.push_back(annotator.draw(x, y, derive_seed(pair_seed, static_cast<std::uint64_t>(i))));
    }
  } catch (const TransportError& e) {
    r.skipped = true;
    r.error = e.what();
  } catch (const UnparseableResponse& e) {
    r.skipped = true;
    r.error = e.what();
  }
  if (r.skipped) {
    spdlog::warn("annotation of {} skipped: {}", r.key().str(), r.error);
    return r;
  }
  r.adopted = unanimous(r.draws, options.rel3_unanimity);
  if (!cache_key.empty()) cache->put(cache_key, r.draws);
  return r;
}

std::vector<ConsistencyResult> annotate_batch(Annotator& annotator, const ItemCatalog& catalog,
                                              const std::vector<ItemPair>& pairs, std::uint64_t seed,
                                              const ConsistencyOptions& options, AnnotationCache* cache,
                                              int parallelism) {
  std::vector<const Item*> xs, ys;
  for (const auto& p : pairs) {
    xs.push_back(&catalog.at(p.x));
    ys.push_back(&catalog.at(p.y));
  }
  std::vector<ConsistencyResult> out(pairs.size());
  parallel_for(pairs.size(), parallelism, [&](std::size_t i) {
    out[i] = annotate_consistent(annotator, *xs[i], *ys[i], derive_seed(seed, pairs[i].key().str()), options, cache);
  });
  return out;
}

}  // namespace karl
