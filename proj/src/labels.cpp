#include "karl/labels.hpp"

#include <cctype>

namespace karl {

std::string_view code(FBL9 label) {
  static constexpr std::array<std::string_view, 9> kCodes = {"A",   "B-1", "B-2", "C-1", "C-2",
                                                             "C-3", "C-4", "D",   "E"};
  return kCodes[static_cast<std::size_t>(index_of(label))];
}

std::string_view name(Rel3 r) {
  switch (r) {
    case Rel3::Complementary:
      return "complementary";
    case Rel3::Substitute:
      return "substitute";
    case Rel3::Unrelated:
      return "unrelated";
  }
  return "unrelated";
}

std::optional<FBL9> fbl9_from_code(std::string_view s) {
  for (FBL9 l : kAllFBL9) {
    std::string_view c = code(l);
    if (s == c) return l;
    if (c.size() == 3 && s.size() == 2 && s[0] == c[0] && s[1] == c[2]) return l;
  }
  return std::nullopt;
}

std::optional<Rel3> rel3_from_name(std::string_view s) {
  for (Rel3 r : kAllRel3) {
    if (s == name(r)) return r;
  }
  return std::nullopt;
}

}  // namespace karl
