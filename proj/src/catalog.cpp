#include "karl/catalog.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"

namespace karl {

using nlohmann::json;

ItemCatalog::ItemCatalog(std::vector<Item> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    if (it.id.empty()) throw InvalidArgument("item at position " + std::to_string(i) + " has an empty id");
    if (it.fine_category.empty() || it.broad_category.empty()) {
      throw InvalidArgument("item '" + it.id + "' has an empty category");
    }
    if (!by_id_.emplace(it.id, i).second) {
      throw DuplicateIdError("duplicate item id '" + it.id + "'");
    }
    auto [fit, fresh] = fine_to_broad_.emplace(it.fine_category, it.broad_category);
    if (!fresh && fit->second != it.broad_category) {
      throw HierarchyError("fine category '" + it.fine_category + "' appears under broad categories '" +
                           fit->second + "' and '" + it.broad_category + "'");
    }
    if (fresh) fine_order_.push_back(it.fine_category);
    auto& broad_items = by_broad_[it.broad_category];
    if (broad_items.empty()) broad_order_.push_back(it.broad_category);
    broad_items.push_back(i);
    by_fine_[it.fine_category].push_back(i);
  }
}

const Item* ItemCatalog::find(const ItemId& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &items_[it->second];
}

const Item& ItemCatalog::at(const ItemId& id) const {
  const Item* it = find(id);
  if (!it) throw UnknownItemError("unknown item id '" + id + "'");
  return *it;
}

std::size_t ItemCatalog::index_of(const ItemId& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw UnknownItemError("unknown item id '" + id + "'");
  return it->second;
}

const std::string& ItemCatalog::broad_of(const std::string& fine) const {
  auto it = fine_to_broad_.find(fine);
  if (it == fine_to_broad_.end()) throw InvalidArgument("unknown fine category '" + fine + "'");
  return it->second;
}

const std::vector<std::size_t>& ItemCatalog::items_in_fine(const std::string& fine) const {
  auto it = by_fine_.find(fine);
  if (it == by_fine_.end()) throw InvalidArgument("unknown fine category '" + fine + "'");
  return it->second;
}

const std::vector<std::size_t>& ItemCatalog::items_in_broad(const std::string& broad) const {
  auto it = by_broad_.find(broad);
  if (it == by_broad_.end()) throw InvalidArgument("unknown broad category '" + broad + "'");
  return it->second;
}

namespace {

const std::set<std::string> kItemKeys = {"id",          "title",          "description",
                                         "fine_category", "broad_category", "numeric_attrs"};

std::string required_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing key '") + key + "'", line);
  if (!it->is_string()) throw ParseError(std::string("key '") + key + "' must be a string", line);
  return it->get<std::string>();
}

}  // namespace

ItemCatalog parse_catalog(std::string_view jsonl) {
  std::vector<Item> items;
  std::map<std::string, std::size_t> id_line;
  std::map<std::string, std::pair<std::string, std::size_t>> fine_line;
  auto lines = detail::split_lines(jsonl);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    std::string_view line = lines[i];
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", lineno);
    for (const auto& [k, v] : obj.items()) {
      if (!kItemKeys.count(k)) throw ParseError("unknown key '" + k + "'", lineno);
    }
    Item item;
    item.id = required_string(obj, "id", lineno);
    item.title = required_string(obj, "title", lineno);
    item.description = required_string(obj, "description", lineno);
    item.fine_category = required_string(obj, "fine_category", lineno);
    item.broad_category = required_string(obj, "broad_category", lineno);
    if (item.id.empty()) throw ParseError("empty id", lineno);
    if (item.fine_category.empty() || item.broad_category.empty()) {
      throw ParseError("empty category", lineno);
    }
    if (auto it = obj.find("numeric_attrs"); it != obj.end()) {
      if (!it->is_object()) throw ParseError("numeric_attrs must be an object", lineno);
      for (const auto& [k, v] : it->items()) {
        if (!v.is_number()) throw ParseError("numeric attribute '" + k + "' is not a number", lineno);
        item.numeric_attrs[k] = v.get<double>();
      }
    }
    if (auto [it, fresh] = id_line.emplace(item.id, lineno); !fresh) {
      throw DuplicateIdError("duplicate item id '" + item.id + "' (first on line " +
                                 std::to_string(it->second) + ")",
                             lineno);
    }
    auto [fit, fresh] = fine_line.emplace(item.fine_category, std::make_pair(item.broad_category, lineno));
    if (!fresh && fit->second.first != item.broad_category) {
      throw HierarchyError("fine category '" + item.fine_category + "' appears under broad '" +
                           fit->second.first + "' (line " + std::to_string(fit->second.second) +
                           ") and broad '" + item.broad_category + "' (line " +
                           std::to_string(lineno) + ")");
    }
    items.push_back(std::move(item));
  }
  return ItemCatalog(std::move(items));
}

ItemCatalog load_catalog(const std::filesystem::path& path) { return parse_catalog(read_file(path)); }

std::string serialize_catalog(const ItemCatalog& catalog) {
  std::string out;
  for (const Item& it : catalog.items()) {
    json obj = json::object();
    obj["id"] = it.id;
    obj["title"] = it.title;
    obj["description"] = it.description;
    obj["fine_category"] = it.fine_category;
    obj["broad_category"] = it.broad_category;
    if (!it.numeric_attrs.empty()) obj["numeric_attrs"] = it.numeric_attrs;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_catalog(const ItemCatalog& catalog, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_catalog(catalog));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace karl
