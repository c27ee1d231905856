#include "karl/labeled_sets.hpp"

#include <fstream>

#include "csv.hpp"
#include "karl/catalog.hpp"

namespace karl {

HumanLabeledSet::HumanLabeledSet(std::vector<LabeledPair> rows, std::string source)
    : rows_(std::move(rows)), source_(std::move(source)) {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    auto [it, inserted] = index_.emplace(rows_[i].pair.key(), i);
    if (!inserted) throw InvalidArgument("duplicate pair " + it->first.str());
  }
}

bool HumanLabeledSet::contains(const PairKey& key) const { return index_.count(key) != 0; }

std::array<std::size_t, kNumRel3> HumanLabeledSet::class_counts() const {
  std::array<std::size_t, kNumRel3> counts{};
  for (const auto& r : rows_) ++counts[static_cast<std::size_t>(index_of(r.label))];
  return counts;
}

HumanLabeledSet HumanLabeledSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<LabeledPair> rows;
  rows.reserve(indices.size());
  for (std::size_t i : indices) rows.push_back(rows_.at(i));
  return HumanLabeledSet(std::move(rows), source_);
}

void LlmLabeledSet::add(LlmRecord record) {
  if (record.rel3 != map_to_rel3(record.fbl9)) {
    throw InvalidArgument("record for " + record.pair.key().str() +
                          " has a 3-class label inconsistent with its 9-class label");
  }
  PairKey key = record.pair.key();
  if (records_.count(key)) throw InvalidArgument("pair already labeled: " + key.str());
  records_.emplace(std::move(key), std::move(record));
}

std::array<std::size_t, kNumRel3> LlmLabeledSet::class_counts() const {
  std::array<std::size_t, kNumRel3> counts{};
  for (const auto& [k, r] : records_) ++counts[static_cast<std::size_t>(index_of(r.rel3))];
  return counts;
}

std::vector<LlmRecord> LlmLabeledSet::as_vector() const {
  std::vector<LlmRecord> out;
  out.reserve(records_.size());
  for (const auto& [k, r] : records_) out.push_back(r);
  return out;
}

HumanLabeledSet parse_human_labels(std::string_view text, const ItemCatalog* catalog,
                                   std::string source) {
  auto lines = detail::split_lines(text);
  if (lines.empty()) throw ParseError("label file is empty", 1);
  auto header = detail::split_csv_line(lines[0]);
  if (header.size() < 3 || header[0] != "item_x_id" || header[1] != "item_y_id" ||
      header[2] != "label") {
    throw ParseError("expected header item_x_id,item_y_id,label", 1);
  }
  std::vector<LabeledPair> rows;
  std::map<PairKey, std::size_t> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (lines[i].empty()) continue;
    std::vector<std::string> f;
    try {
      f = detail::split_csv_line(lines[i]);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    }
    if (f.size() != header.size()) throw ParseError("wrong number of fields", lineno);
    auto label = rel3_from_name(f[2]);
    if (!label) throw ParseError("unknown label token '" + f[2] + "'", lineno);
    if (f[0].empty() || f[1].empty()) throw ParseError("empty item id", lineno);
    if (catalog) {
      for (int k = 0; k < 2; ++k) {
        if (!catalog->find(f[static_cast<std::size_t>(k)])) {
          throw UnknownItemError("unknown item id '" + f[static_cast<std::size_t>(k)] +
                                 "' (line " + std::to_string(lineno) + ")");
        }
      }
    }
    ItemPair pair{f[0], f[1]};
    auto [it, inserted] = seen.emplace(pair.key(), lineno);
    if (!inserted) {
      throw ParseError("duplicate pair " + pair.key().str() + " (first on line " +
                           std::to_string(it->second) + ")",
                       lineno);
    }
    rows.push_back({std::move(pair), *label});
  }
  return HumanLabeledSet(std::move(rows), std::move(source));
}

HumanLabeledSet load_human_labels(const std::filesystem::path& path, const ItemCatalog* catalog,
                                  std::string source) {
  return parse_human_labels(read_file(path), catalog, std::move(source));
}

std::string format_human_labels(const HumanLabeledSet& set) {
  std::string out = "item_x_id,item_y_id,label\n";
  for (const auto& r : set.rows()) {
    out += detail::csv_field(r.pair.x) + "," + detail::csv_field(r.pair.y) + "," +
           std::string(name(r.label)) + "\n";
  }
  return out;
}

void save_human_labels(const HumanLabeledSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, format_human_labels(set));
}

std::string format_llm_labels(const LlmLabeledSet& set) {
  std::string out = "item_x_id,item_y_id,label,fbl9,round,annotator\n";
  for (const auto& [k, r] : set.records()) {
    out += detail::csv_field(r.pair.x) + "," + detail::csv_field(r.pair.y) + "," +
           std::string(name(r.rel3)) + "," + std::string(code(r.fbl9)) + "," +
           std::to_string(r.round) + "," + detail::csv_field(r.annotator) + "\n";
  }
  return out;
}

LlmLabeledSet parse_llm_labels(std::string_view text) {
  auto lines = detail::split_lines(text);
  if (lines.empty() || lines[0] != "item_x_id,item_y_id,label,fbl9,round,annotator") {
    throw ParseError("expected LLM label header", 1);
  }
  LlmLabeledSet set;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 6) throw ParseError("wrong number of fields", i + 1);
    auto rel = rel3_from_name(f[2]);
    auto fbl = fbl9_from_code(f[3]);
    if (!rel || !fbl) throw ParseError("unknown label", i + 1);
    LlmRecord rec{{f[0], f[1]}, *fbl, *rel, 0, f[5]};
    try {
      rec.round = std::stoi(f[4]);
    } catch (const std::exception&) {
      throw ParseError("bad round", i + 1);
    }
    try {
      set.add(std::move(rec));
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  return set;
}

}  // namespace karl
