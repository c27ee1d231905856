#pragma once

#include <algorithm>
#include <cstdint>
#include <compare>
#include <concepts>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace karl {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class DuplicateIdError : public ParseError {
public:
  using ParseError::ParseError;
};

class HierarchyError : public Error {
public:
  using Error::Error;
};

class UnknownItemError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

class SchemaMismatch : public Error {
public:
  using Error::Error;
};

class TransportError : public Error {
public:
  using Error::Error;
};

class UnparseableResponse : public Error {
public:
  using Error::Error;
};

class LeakageError : public Error {
public:
  using Error::Error;
};

class CorruptCheckpoint : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

using ItemId = std::string;

/// Unordered item pair used for de-duplication and exclusion. `lo <= hi`.
struct PairKey {
  ItemId lo;
  ItemId hi;

  PairKey() = default;
  PairKey(ItemId a, ItemId b) {
    if (b < a) std::swap(a, b);
    lo = std::move(a);
    hi = std::move(b);
  }

  std::string str() const { return lo + "|" + hi; }

  auto operator<=>(const PairKey&) const = default;
  bool operator==(const PairKey&) const = default;
};

/// Ordered pair as presented to the classifier and annotator: (query, candidate).
struct ItemPair {
  ItemId x;
  ItemId y;

  PairKey key() const { return {x, y}; }
  auto operator<=>(const ItemPair&) const = default;
  bool operator==(const ItemPair&) const = default;
};

/// Identifies a featurizer configuration. Vectors with different ids never mix.
struct SchemaId {
  std::uint64_t value = 0;

  std::string hex() const;
  static SchemaId from_hex(std::string_view s);
  auto operator<=>(const SchemaId&) const = default;
  bool operator==(const SchemaId&) const = default;
};

// ---------------------------------------------------------------------------
// Hashing and seeds
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a, finalized with a splitmix64 mix. Stable across platforms.
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed = 0) noexcept;

std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based seed derivation: derive(master, a, b, ...) is a pure function
/// of its arguments, so adding parallelism never perturbs a stream.
template <std::integral... Ts>
std::uint64_t derive_seed(std::uint64_t master, Ts... parts) noexcept {
  std::uint64_t s = mix64(master ^ 0x6b61726c5eedULL);
  ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(parts) + 0x9e3779b97f4a7c15ULL))), ...);
  return s;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept {
  return mix64(master ^ hash64(tag, 0x5eed));
}

template <std::integral... Ts>
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, Ts... parts) noexcept {
  return derive_seed(derive_seed(master, tag), parts...);
}

/// Deterministic RNG. The engine is std::mt19937_64 (fully specified by the
/// standard); the distribution helpers below are ours, since the standard
/// library distributions are implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// First k elements of a uniform random permutation of v (partial Fisher-Yates).
  template <typename T>
  std::vector<T> sample(std::vector<T> v, std::size_t k) {
    k = std::min(k, v.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(v[i], v[i + below(v.size() - i)]);
    }
    v.resize(k);
    return v;
  }

private:
  std::mt19937_64 engine_;
};

std::string to_hex(std::uint64_t v);

}  // namespace karl

template <>
struct std::hash<karl::PairKey> {
  std::size_t operator()(const karl::PairKey& k) const noexcept {
    return static_cast<std::size_t>(karl::hash64(k.hi, karl::hash64(k.lo)));
  }
};
