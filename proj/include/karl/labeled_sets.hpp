#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "karl/common.hpp"
#include "karl/labels.hpp"

namespace karl {

class ItemCatalog;

struct LabeledPair {
  ItemPair pair;
  Rel3 label;
};

/// Human-annotated seed set. Pair keys are unique; row order is file order.
class HumanLabeledSet {
public:
  HumanLabeledSet() = default;
  HumanLabeledSet(std::vector<LabeledPair> rows, std::string source);

  const std::vector<LabeledPair>& rows() const { return rows_; }
  const std::string& source() const { return source_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  bool contains(const PairKey& key) const;

  std::array<std::size_t, kNumRel3> class_counts() const;

  /// Subset by row index, preserving the given order.
  HumanLabeledSet subset(const std::vector<std::size_t>& indices) const;

private:
  std::vector<LabeledPair> rows_;
  std::string source_ = "custom";
  std::map<PairKey, std::size_t> index_;
};

struct LlmRecord {
  ItemPair pair;  // presentation order used for annotation
  FBL9 fbl9;
  Rel3 rel3;
  int round = 0;
  std::string annotator;
};

/// Accumulated LLM-labeled set. Append-only; iteration is in pair-key order.
class LlmLabeledSet {
public:
  /// Throws InvalidArgument on a duplicate key or a rel3 that disagrees with
  /// map_to_rel3(fbl9).
  void add(LlmRecord record);

  const std::map<PairKey, LlmRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  bool contains(const PairKey& key) const { return records_.count(key) != 0; }

  std::array<std::size_t, kNumRel3> class_counts() const;
  std::vector<LlmRecord> as_vector() const;

private:
  std::map<PairKey, LlmRecord> records_;
};

/// Label CSV: header `item_x_id,item_y_id,label`. Unknown label tokens, unknown
/// item ids (when a catalog is given) and duplicate pairs are errors.
HumanLabeledSet load_human_labels(const std::filesystem::path& path, const ItemCatalog* catalog,
                                  std::string source = "custom");
HumanLabeledSet parse_human_labels(std::string_view text, const ItemCatalog* catalog,
                                   std::string source = "custom");

std::string format_human_labels(const HumanLabeledSet& set);
void save_human_labels(const HumanLabeledSet& set, const std::filesystem::path& path);

/// LLM-labeled export: the human columns plus fbl9, round, annotator.
std::string format_llm_labels(const LlmLabeledSet& set);
LlmLabeledSet parse_llm_labels(std::string_view text);

}  // namespace karl
