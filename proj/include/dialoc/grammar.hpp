#pragma once

// Template grammar behind the synthetic dialogs. `{X}` marks the fact slot.

#include <string>
#include <utility>
#include <vector>

#include "dialoc/dialog.hpp"

namespace dialoc::grammar {

inline const std::vector<FactKind>& all_kinds() {
  static const std::vector<FactKind> kinds{FactKind::kRoomLabel, FactKind::kLandmark, FactKind::kNeighbor,
                                           FactKind::kVerticalBand, FactKind::kHorizontalBand};
  return kinds;
}

inline const std::vector<std::string>& vertical_bands() {
  static const std::vector<std::string> v{"north", "middle", "south"};
  return v;
}

inline const std::vector<std::string>& horizontal_bands() {
  static const std::vector<std::string> v{"west", "center", "east"};
  return v;
}

inline const std::vector<std::string>& locator_templates(FactKind kind) {
  static const std::vector<std::string> label{"where are you ?", "what kind of room are you in ?",
                                              "can you describe the room you are in ?"};
  static const std::vector<std::string> landmark{"what do you see around you ?", "is there anything notable near you ?",
                                                 "what objects are in the room ?"};
  static const std::vector<std::string> neighbor{"what room is next to yours ?", "where does the door lead ?",
                                                 "which room is through the doorway ?"};
  static const std::vector<std::string> vertical{"are you near the top or the bottom of the map ?",
                                                 "which part of the map are you in , north or south ?"};
  static const std::vector<std::string> horizontal{"are you on the left or the right of the map ?",
                                                   "which part of the map are you in , west or east ?"};
  switch (kind) {
    case FactKind::kRoomLabel: return label;
    case FactKind::kLandmark: return landmark;
    case FactKind::kNeighbor: return neighbor;
    case FactKind::kVerticalBand: return vertical;
    case FactKind::kHorizontalBand: return horizontal;
  }
  return label;
}

inline const std::vector<std::string>& observer_templates(FactKind kind) {
  static const std::vector<std::string> label{"i am in a {X} .", "i am standing in a {X} .", "it looks like a {X} ."};
  static const std::vector<std::string> landmark{"i can see a {X} .", "there is a {X} here .", "i am close to a {X} ."};
  static const std::vector<std::string> neighbor{"there is a {X} next door .", "the door leads to a {X} .",
                                                 "i can walk into a {X} from here ."};
  static const std::vector<std::string> vertical{"i am in the {X} part of the map .", "my room is on the {X} side ."};
  static const std::vector<std::string> horizontal{"i am in the {X} part of the map .", "my room is on the {X} side ."};
  switch (kind) {
    case FactKind::kRoomLabel: return label;
    case FactKind::kLandmark: return landmark;
    case FactKind::kNeighbor: return neighbor;
    case FactKind::kVerticalBand: return vertical;
    case FactKind::kHorizontalBand: return horizontal;
  }
  return label;
}

inline const std::vector<std::string>& interjections() {
  static const std::vector<std::string> v{"yes", "well", "okay"};
  return v;
}

/// Phrase-level substitutions used by the rule-based paraphraser.
inline const std::vector<std::pair<std::string, std::vector<std::string>>>& synonyms() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> table{
      {"i am", {"i'm"}},
      {"can see", {"notice", "spot"}},
      {"standing in", {"inside"}},
      {"looks like", {"seems like"}},
      {"next door", {"adjacent"}},
      {"leads to", {"opens to"}},
      {"close to", {"near"}},
      {"part", {"area", "region"}},
      {"side", {"half"}},
      {"map", {"floor plan"}},
      {"notable", {"interesting"}},
      {"objects", {"things"}},
      {"describe", {"tell me about"}},
      {"where are you", {"where are you located"}},
      {"okay", {"alright"}},
  };
  return table;
}

}  // namespace dialoc::grammar
