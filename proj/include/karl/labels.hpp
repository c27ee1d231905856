#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace karl {

/// Three-way relation target. The integer encoding is stable and used for
/// matrix layouts (row c of a weight matrix belongs to class c).
enum class Rel3 : int { Complementary = 0, Substitute = 1, Unrelated = 2 };

inline constexpr int kNumRel3 = 3;
inline constexpr std::array<Rel3, 3> kAllRel3 = {Rel3::Complementary, Rel3::Substitute,
                                                 Rel3::Unrelated};

/// Nine-way function-based label.
enum class FBL9 : int { A = 0, B1, B2, C1, C2, C3, C4, D, E };

inline constexpr int kNumFBL9 = 9;
inline constexpr std::array<FBL9, 9> kAllFBL9 = {FBL9::A,  FBL9::B1, FBL9::B2, FBL9::C1, FBL9::C2,
                                                 FBL9::C3, FBL9::C4, FBL9::D,  FBL9::E};

constexpr int index_of(Rel3 r) { return static_cast<int>(r); }
constexpr int index_of(FBL9 l) { return static_cast<int>(l); }

/// A -> Substitute; B-*, C-* -> Complementary; D, E -> Unrelated.
constexpr Rel3 map_to_rel3(FBL9 label) {
  switch (label) {
    case FBL9::A:
      return Rel3::Substitute;
    case FBL9::B1:
    case FBL9::B2:
    case FBL9::C1:
    case FBL9::C2:
    case FBL9::C3:
    case FBL9::C4:
      return Rel3::Complementary;
    case FBL9::D:
    case FBL9::E:
      return Rel3::Unrelated;
  }
  return Rel3::Unrelated;
}

/// Label of (y, x) given the label of (x, y).
constexpr FBL9 swap_direction(FBL9 label) {
  switch (label) {
    case FBL9::B1:
      return FBL9::B2;
    case FBL9::B2:
      return FBL9::B1;
    case FBL9::C2:
      return FBL9::C3;
    case FBL9::C3:
      return FBL9::C2;
    default:
      return label;
  }
}

/// Display codes: "A", "B-1", ..., "E".
std::string_view code(FBL9 label);
/// Lower-case names used in label files: "complementary", "substitute", "unrelated".
std::string_view name(Rel3 r);

/// Exact inverse of code(); also accepts the dash-less form ("B1").
std::optional<FBL9> fbl9_from_code(std::string_view s);
std::optional<Rel3> rel3_from_name(std::string_view s);

}  // namespace karl
