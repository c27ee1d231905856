#include "karl/features.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <set>

namespace karl {

void FeaturizerConfig::validate() const {
  if (text_hash_dims_per_item <= 0 || category_hash_dims_per_item <= 0 || numeric_dims_per_item < 0) {
    throw ConfigError("features: per-item dimensions must be positive");
  }
  if (interaction_dims < 3) throw ConfigError("features.interaction_dims must be at least 3");
}

namespace {

double signed_log1p(double v) { return v < 0 ? -std::log1p(-v) : std::log1p(v); }

constexpr std::uint64_t kSignSalt = 0x5167a11ce5ULL;

}  // namespace

NumericScaling NumericScaling::fit(const ItemCatalog& catalog, int slots) {
  std::set<std::string> all;
  for (const auto& it : catalog.items()) {
    for (const auto& [k, v] : it.numeric_attrs) all.insert(k);
  }
  NumericScaling s;
  for (const auto& k : all) {
    if (static_cast<int>(s.names.size()) >= slots) break;
    s.names.push_back(k);
  }
  for (const auto& k : s.names) {
    double sum = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& it : catalog.items()) {
      auto f = it.numeric_attrs.find(k);
      if (f == it.numeric_attrs.end() || !std::isfinite(f->second)) continue;
      const double v = signed_log1p(f->second);
      sum += v;
      sq += v * v;
      ++n;
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    const double var = n ? std::max(0.0, sq / static_cast<double>(n) - mean * mean) : 0.0;
    s.mean.push_back(mean);
    s.scale.push_back(var > 0.0 ? 1.0 / std::sqrt(var) : 1.0);
  }
  return s;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

HashedSlot hash_slot(std::string_view token, std::size_t width, std::uint64_t seed) {
  const std::uint64_t h = hash64(token, seed);
  const std::uint64_t s = hash64(token, seed ^ kSignSalt);
  return {static_cast<std::size_t>(h % width), (s & 1u) ? 1.0 : -1.0};
}

Featurizer::Featurizer(FeaturizerConfig config, NumericScaling scaling)
    : config_(config), scaling_(std::move(scaling)) {
  config_.validate();
  if (static_cast<int>(scaling_.names.size()) > config_.numeric_dims_per_item ||
      scaling_.mean.size() != scaling_.names.size() || scaling_.scale.size() != scaling_.names.size()) {
    throw ConfigError("features: numeric scaling does not fit the configured slots");
  }
  std::uint64_t h = hash64("karl-featurizer-v1", config_.hash_seed);
  for (int v : {config_.text_hash_dims_per_item, config_.category_hash_dims_per_item,
                config_.numeric_dims_per_item, config_.interaction_dims}) {
    h = mix64(h ^ static_cast<std::uint64_t>(v));
  }
  h = mix64(h ^ config_.hash_seed);
  for (std::size_t i = 0; i < scaling_.names.size(); ++i) {
    h = hash64(scaling_.names[i], h);
    h = mix64(h ^ std::bit_cast<std::uint64_t>(scaling_.mean[i]));
    h = mix64(h ^ std::bit_cast<std::uint64_t>(scaling_.scale[i]));
  }
  schema_id_ = SchemaId{h};
}

Featurizer::Featurizer(FeaturizerConfig config, const ItemCatalog& catalog)
    : Featurizer(config, NumericScaling::fit(catalog, config.numeric_dims_per_item)) {
  warm(catalog);
}

void Featurizer::warm(const ItemCatalog& catalog) {
  for (const auto& it : catalog.items()) {
    if (!cache_.count(it.id)) cache_.emplace(it.id, item_block(it));
  }
}

std::vector<double> Featurizer::item_block(const Item& item) const {
  const auto text_w = static_cast<std::size_t>(config_.text_hash_dims_per_item);
  const auto cat_w = static_cast<std::size_t>(config_.category_hash_dims_per_item);
  std::vector<double> block(static_cast<std::size_t>(config_.per_item_dims()), 0.0);

  for (const auto& tok : tokenize(item.title + " " + item.description)) {
    auto slot = hash_slot(tok, text_w, config_.hash_seed);
    block[slot.index] += slot.sign;
  }
  for (const std::string& cat : {"fine:" + item.fine_category, "broad:" + item.broad_category}) {
    auto slot = hash_slot(cat, cat_w, config_.hash_seed);
    block[text_w + slot.index] += slot.sign;
  }
  for (std::size_t k = 0; k < scaling_.names.size(); ++k) {
    auto f = item.numeric_attrs.find(scaling_.names[k]);
    if (f == item.numeric_attrs.end() || !std::isfinite(f->second)) continue;
    block[text_w + cat_w + k] = (signed_log1p(f->second) - scaling_.mean[k]) * scaling_.scale[k];
  }
  return block;
}

const std::vector<double>& Featurizer::cached_block(const Item& item, std::vector<double>& scratch) const {
  auto it = cache_.find(item.id);
  if (it != cache_.end()) return it->second;
  scratch = item_block(item);
  return scratch;
}

void Featurizer::featurize_into(const Item& x, const Item& y, std::span<double> out) const {
  const auto per = static_cast<std::size_t>(config_.per_item_dims());
  const auto text_w = static_cast<std::size_t>(config_.text_hash_dims_per_item);
  std::vector<double> sx, sy;
  const auto& bx = cached_block(x, sx);
  const auto& by = cached_block(y, sy);
  std::copy(bx.begin(), bx.end(), out.begin());
  std::copy(by.begin(), by.end(), out.begin() + static_cast<std::ptrdiff_t>(per));

  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < text_w; ++i) {
    dot += bx[i] * by[i];
    nx += bx[i] * bx[i];
    ny += by[i] * by[i];
  }
  double cosine = 0.0;
  if (nx > 0.0 && ny > 0.0) cosine = std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0);

  auto inter = out.subspan(2 * per);
  std::fill(inter.begin(), inter.end(), 0.0);
  inter[0] = cosine;
  inter[1] = x.fine_category == y.fine_category ? 1.0 : 0.0;
  inter[2] = x.broad_category == y.broad_category ? 1.0 : 0.0;
}

FeatureVector Featurizer::featurize_pair(const Item& x, const Item& y) const {
  FeatureVector fv;
  fv.values.assign(static_cast<std::size_t>(dim()), 0.0);
  fv.schema_id = schema_id_;
  featurize_into(x, y, fv.values);
  return fv;
}

FeatureMatrix Featurizer::featurize_batch(std::span<const std::pair<const Item*, const Item*>> pairs) const {
  FeatureMatrix m;
  m.schema_id = schema_id_;
  // Row-major scratch so each row is contiguous, then one copy into Eigen.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(
      static_cast<Eigen::Index>(pairs.size()), dim());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    featurize_into(*pairs[i].first, *pairs[i].second,
                   std::span<double>(rows.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(dim())));
  }
  m.values = rows;
  return m;
}

FeatureMatrix Featurizer::featurize_batch(const ItemCatalog& catalog, std::span<const ItemPair> pairs) const {
  std::vector<std::pair<const Item*, const Item*>> ptrs;
  ptrs.reserve(pairs.size());
  for (const auto& p : pairs) ptrs.emplace_back(&catalog.at(p.x), &catalog.at(p.y));
  return featurize_batch(ptrs);
}

FeatureVector featurize_pair(const Featurizer& featurizer, const Item& x, const Item& y) {
  return featurizer.featurize_pair(x, y);
}

FeatureMatrix featurize_batch(const Featurizer& featurizer, const ItemCatalog& catalog,
                              std::span<const ItemPair> pairs) {
  return featurizer.featurize_batch(catalog, pairs);
}

}  // namespace karl
