#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "karl/catalog.hpp"
#include "karl/labels.hpp"
#include "karl/llm_client.hpp"

namespace karl {

extern const std::string kSystemMessage;

/// Deterministic annotation prompt for the ordered pair (x, y).
std::string build_prompt(const Item& x, const Item& y);

/// First label code in a free-text response. B/C codes are matched
/// case-insensitively with or without the dash ("B-1", "b1"); the one-letter
/// codes A, D and E only in upper case, unless the whole response is that
/// letter. Throws UnparseableResponse when no code is found or when a second,
/// different code appears before the next terminator (. ! ? ; or newline).
FBL9 parse_label(std::string_view response);

/// One draw of a 9-class label for an ordered pair.
class Annotator {
public:
  virtual ~Annotator() = default;
  virtual std::string id() const = 0;
  /// draw_seed identifies the draw; annotators that sample on their own may ignore it.
  virtual FBL9 draw(const Item& x, const Item& y, std::uint64_t draw_seed) = 0;
  /// Whether results may be replayed from the persistent cache.
  virtual bool cacheable() const { return false; }
};

class OracleAnnotator : public Annotator {
public:
  explicit OracleAnnotator(const RelationOracle& oracle) : oracle_(&oracle) {}
  std::string id() const override;
  FBL9 draw(const Item& x, const Item& y, std::uint64_t draw_seed) override;

private:
  const RelationOracle* oracle_;
};

/// Sends build_prompt(x, y) as a chat completion and parses the reply. An
/// unparseable reply is re-requested up to parse_attempts times in total.
class LlmAnnotator : public Annotator {
public:
  LlmAnnotator(LlmClientConfig config, int parse_attempts = 2);
  std::string id() const override;
  FBL9 draw(const Item& x, const Item& y, std::uint64_t draw_seed) override;
  bool cacheable() const override { return true; }
  LlmClient& client() { return client_; }

private:
  LlmClient client_;
  int parse_attempts_;
};

struct ConsistencyResult {
  ItemPair pair;
  std::string annotator;
  std::vector<FBL9> draws;
  std::optional<FBL9> adopted;
  bool skipped = false;  // annotator failed; no label this round
  bool from_cache = false;
  std::string error;

  PairKey key() const { return pair.key(); }
};

/// Persistent store of completed draw sets keyed by (pair key, prompt hash,
/// annotator id). Backed by a JSON-lines file; reads are concurrent, writes
/// serialized and appended immediately.
class AnnotationCache {
public:
  AnnotationCache() = default;  // in-memory only
  explicit AnnotationCache(std::filesystem::path path);

  static std::string make_key(const PairKey& key, std::uint64_t prompt_hash, const std::string& annotator);

  std::optional<std::vector<FBL9>> get(const std::string& key) const;
  void put(const std::string& key, const std::vector<FBL9>& draws);
  std::size_t size() const;

private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<FBL9>> entries_;
};

struct ConsistencyOptions {
  int draws = 3;
  /// Unanimity judged on the mapped 3-class labels instead of the 9-class ones.
  bool rel3_unanimity = false;
};

/// Exactly `draws` annotator calls for the ordered pair. The result is adopted
/// iff all draws agree. Transport or parse failures mark the pair skipped.
ConsistencyResult annotate_consistent(Annotator& annotator, const Item& x, const Item& y, std::uint64_t pair_seed,
                                      const ConsistencyOptions& options = {}, AnnotationCache* cache = nullptr);

/// Adoption decision for a set of draws.
std::optional<FBL9> unanimous(const std::vector<FBL9>& draws, bool rel3_unanimity = false);

/// annotate_consistent for every pair, up to `parallelism` at a time. Results
/// are in input order; pair i uses derive_seed(seed, key.str()).
std::vector<ConsistencyResult> annotate_batch(Annotator& annotator, const ItemCatalog& catalog,
                                              const std::vector<ItemPair>& pairs, std::uint64_t seed,
                                              const ConsistencyOptions& options, AnnotationCache* cache,
                                              int parallelism = 1);

}  // namespace karl
