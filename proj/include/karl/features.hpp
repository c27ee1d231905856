#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "karl/catalog.hpp"
#include "karl/common.hpp"

namespace karl {

struct FeaturizerConfig {
  int text_hash_dims_per_item = 128;
  int category_hash_dims_per_item = 64;
  int numeric_dims_per_item = 8;
  int interaction_dims = 24;
  std::uint64_t hash_seed = 0;

  int per_item_dims() const { return text_hash_dims_per_item + category_hash_dims_per_item + numeric_dims_per_item; }
  /// 2 * (text + category + numeric) + interaction; 424 with the defaults.
  int dim() const { return 2 * per_item_dims() + interaction_dims; }

  /// Throws ConfigError. At least three interaction slots are required.
  void validate() const;
  bool operator==(const FeaturizerConfig&) const = default;
};

struct FeatureVector {
  std::vector<double> values;
  SchemaId schema_id;
};

struct FeatureMatrix {
  Eigen::MatrixXd values;  // one row per pair
  SchemaId schema_id;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Signed log1p followed by a fixed affine map, one slot per attribute name.
/// Fitted once on the whole catalog at run start.
struct NumericScaling {
  std::vector<std::string> names;  // sorted; at most numeric_dims_per_item
  std::vector<double> mean;
  std::vector<double> scale;

  static NumericScaling fit(const ItemCatalog& catalog, int slots);
  bool operator==(const NumericScaling&) const = default;
};

/// Turns (query, candidate) pairs into fixed-width dense rows:
///
///   [ block(x) | block(y) | cos(text_x, text_y), same_fine, same_broad, 0 ... ]
///
/// where block(item) = signed hashed token counts of title + description,
/// signed hashed one-hot of fine and broad category, and scaled numeric
/// attributes. Per-item blocks are cached; the featurizer is otherwise
/// stateless and safe to share across threads once warm() has run.
class Featurizer {
public:
  Featurizer(FeaturizerConfig config, NumericScaling scaling);
  /// Convenience: fits the numeric scaling on `catalog` and caches every item block.
  Featurizer(FeaturizerConfig config, const ItemCatalog& catalog);

  const FeaturizerConfig& config() const { return config_; }
  const NumericScaling& scaling() const { return scaling_; }
  SchemaId schema_id() const { return schema_id_; }
  int dim() const { return config_.dim(); }

  /// Precomputes item blocks so that later calls are read-only.
  void warm(const ItemCatalog& catalog);

  std::vector<double> item_block(const Item& item) const;
  FeatureVector featurize_pair(const Item& x, const Item& y) const;
  /// Writes one row into `out` (length dim()).
  void featurize_into(const Item& x, const Item& y, std::span<double> out) const;

  FeatureMatrix featurize_batch(std::span<const std::pair<const Item*, const Item*>> pairs) const;
  FeatureMatrix featurize_batch(const ItemCatalog& catalog, std::span<const ItemPair> pairs) const;

private:
  const std::vector<double>& cached_block(const Item& item, std::vector<double>& scratch) const;

  FeaturizerConfig config_;
  NumericScaling scaling_;
  SchemaId schema_id_;
  std::unordered_map<ItemId, std::vector<double>> cache_;
};

/// Lower-cased alphanumeric tokens; bytes >= 0x80 count as word characters.
std::vector<std::string> tokenize(std::string_view text);

/// Hashed index and sign of a token for a given width and seed.
struct HashedSlot {
  std::size_t index;
  double sign;
};
HashedSlot hash_slot(std::string_view token, std::size_t width, std::uint64_t seed);

FeatureVector featurize_pair(const Featurizer& featurizer, const Item& x, const Item& y);
FeatureMatrix featurize_batch(const Featurizer& featurizer, const ItemCatalog& catalog,
                              std::span<const ItemPair> pairs);

}  // namespace karl
