#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialoc/world.hpp"

namespace dialoc {

constexpr int kMaxTurns = 6;

/// Token <-> id table. Ids are dense; 0 is [PAD].
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kLoc = 3;
  static constexpr int kObs = 4;
  static constexpr int kUnk = 5;

  explicit Vocabulary(const std::vector<std::string>& words);
  /// Specials, the template grammar, both label vocabularies and paraphrase synonyms.
  static const Vocabulary& standard();

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int size() const { return static_cast<int>(tokens_.size()); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Lower-cases and splits on whitespace, detaching . , ? ! punctuation.
std::vector<std::string> split_words(const std::string& text);

struct Turn {
  std::string locator;
  std::string observer;
  bool operator==(const Turn&) const = default;
};

/// What one observer answer asserts about the observer's room.
enum class FactKind { kRoomLabel, kLandmark, kNeighbor, kVerticalBand, kHorizontalBand };

struct Fact {
  FactKind kind = FactKind::kRoomLabel;
  std::string value;
  bool operator==(const Fact&) const = default;
};

std::string fact_kind_name(FactKind kind);
FactKind fact_kind_from_name(const std::string& name);

/// Vertical band of a room ("north", "middle", "south") by its center row.
std::string vertical_band(const WorldMap& world, int room_id);
/// Horizontal band of a room ("west", "center", "east") by its center column.
std::string horizontal_band(const WorldMap& world, int room_id);

bool fact_holds(const WorldMap& world, int room_id, const Fact& fact);
/// Exhaustive filter: every waypoint node consistent with all facts. Only room-center
/// nodes can satisfy a room description; ids are returned ascending.
std::vector<int> consistent_nodes(const WorldMap& world, const std::vector<Fact>& facts);

struct DialogSample {
  std::string sample_id;
  std::string world_id;
  std::vector<Turn> turns;
  std::vector<std::vector<int>> turn_tokens;
  std::vector<int> observer_node_per_turn;
  int final_node = 0;
  Point final_pixel;
  /// The fact each observer answer encodes (kept for oracle checks).
  std::vector<Fact> facts;

  int num_turns() const { return static_cast<int>(turns.size()); }
};

/// Thrown when a requested ambiguity schedule cannot be realised on a world.
class DialogGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DialogParams {
  int text_len = 32;
};

DialogSample generate_dialog(const WorldMap& world, std::uint64_t seed, int num_turns,
                             const DialogParams& params = {});

/// Renders the template utterances for a fact. `variant` selects a phrasing.
Turn render_turn(const Fact& fact, int locator_variant, int observer_variant);

/// One turn as [CLS][LOC] locator [SEP][OBS] observer [SEP], padded to `length`.
/// Overlong turns lose trailing observer tokens first, then trailing locator tokens.
std::vector<int> tokenize(const Turn& turn, const Vocabulary& vocab, int length);
/// Whole dialog for the single-shot mode: [CLS] then one [LOC]..[SEP][OBS]..[SEP]
/// segment per turn, each segment limited to length-1 tokens, padded to length*T
/// (capped at max_total). For T=1 this equals tokenize(turn, vocab, length).
std::vector<int> tokenize_dialog(const std::vector<Turn>& turns, const Vocabulary& vocab, int length, int max_total);
std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocabulary& vocab);
/// Recomputes turn_tokens from the utterances.
void retokenize(DialogSample& sample, const Vocabulary& vocab, int length);

std::string sample_to_json(const DialogSample& sample);
DialogSample sample_from_json(const std::string& line);

}  // namespace dialoc
