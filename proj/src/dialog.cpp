#include "dialoc/dialog.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "dialoc/grammar.hpp"
#include "dialoc/util.hpp"

namespace dialoc {

namespace {

using json = nlohmann::json;

std::string replace_slot(const std::string& pattern, const std::string& value) {
  std::string out = pattern;
  const auto pos = out.find("{X}");
  if (pos != std::string::npos) out.replace(pos, 3, value);
  return out;
}

}  // namespace

// ---- vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_ = {"[PAD]", "[CLS]", "[SEP]", "[LOC]", "[OBS]", "[UNK]"};
  std::set<std::string> seen(tokens_.begin(), tokens_.end());
  for (const auto& w : words) {
    if (seen.insert(w).second) tokens_.push_back(w);
  }
  if (tokens_.size() > 512) throw std::invalid_argument("vocabulary exceeds 512 tokens");
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) index_.emplace(tokens_[i], i);
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab = [] {
    std::set<std::string> words;
    auto add_text = [&](const std::string& text) {
      for (auto& w : split_words(text)) {
        if (w != "{x}") words.insert(w);
      }
    };
    for (const auto& kind : grammar::all_kinds()) {
      for (const auto& t : grammar::locator_templates(kind)) add_text(t);
      for (const auto& t : grammar::observer_templates(kind)) add_text(t);
    }
    for (const auto& p : grammar::interjections()) add_text(p);
    for (const auto& [from, alts] : grammar::synonyms()) {
      add_text(from);
      for (const auto& a : alts) add_text(a);
    }
    for (const auto& w : default_room_vocabulary()) words.insert(w);
    for (const auto& w : default_landmark_vocabulary()) words.insert(w);
    for (const auto& w : grammar::vertical_bands()) words.insert(w);
    for (const auto& w : grammar::horizontal_bands()) words.insert(w);
    return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
  }();
  return vocab;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '.' || c == ',' || c == '?' || c == '!') {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

// ---- facts -------------------------------------------------------------------------

std::string fact_kind_name(FactKind kind) {
  switch (kind) {
    case FactKind::kRoomLabel: return "roomLabel";
    case FactKind::kLandmark: return "landmark";
    case FactKind::kNeighbor: return "neighbor";
    case FactKind::kVerticalBand: return "verticalBand";
    case FactKind::kHorizontalBand: return "horizontalBand";
  }
  return "roomLabel";
}

FactKind fact_kind_from_name(const std::string& name) {
  for (FactKind k : grammar::all_kinds()) {
    if (fact_kind_name(k) == name) return k;
  }
  throw DataError("unknown fact kind '" + name + "'");
}

std::string vertical_band(const WorldMap& world, int room_id) {
  const int y = world.rooms.at(room_id).rect.center().y;
  if (3 * y < world.height_px) return "north";
  if (3 * y >= 2 * world.height_px) return "south";
  return "middle";
}

std::string horizontal_band(const WorldMap& world, int room_id) {
  const int x = world.rooms.at(room_id).rect.center().x;
  if (3 * x < world.width_px) return "west";
  if (3 * x >= 2 * world.width_px) return "east";
  return "center";
}

bool fact_holds(const WorldMap& world, int room_id, const Fact& fact) {
  switch (fact.kind) {
    case FactKind::kRoomLabel: return world.rooms.at(room_id).label == fact.value;
    case FactKind::kLandmark:
      return std::any_of(world.landmarks.begin(), world.landmarks.end(),
                         [&](const Landmark& l) { return l.room_id == room_id && l.label == fact.value; });
    case FactKind::kNeighbor: {
      for (int other : world.door_neighbors(room_id)) {
        if (world.rooms[other].label == fact.value) return true;
      }
      return false;
    }
    case FactKind::kVerticalBand: return vertical_band(world, room_id) == fact.value;
    case FactKind::kHorizontalBand: return horizontal_band(world, room_id) == fact.value;
  }
  return false;
}

std::vector<int> consistent_nodes(const WorldMap& world, const std::vector<Fact>& facts) {
  std::vector<int> out;
  for (const auto& node : world.nodes) {
    if (!world.is_room_center(node.node_id)) continue;
    const int room = world.room_at(node.position);
    const bool ok = std::all_of(facts.begin(), facts.end(), [&](const Fact& f) { return fact_holds(world, room, f); });
    if (ok) out.push_back(node.node_id);
  }
  return out;
}

// ---- generation ----------------------------------------------------------------------

Turn render_turn(const Fact& fact, int locator_variant, int observer_variant) {
  const auto& loc = grammar::locator_templates(fact.kind);
  const auto& obs = grammar::observer_templates(fact.kind);
  const auto& pre = grammar::interjections();
  const int core = observer_variant % static_cast<int>(obs.size());
  const int prefix = (observer_variant / static_cast<int>(obs.size())) % static_cast<int>(pre.size() + 1);
  Turn turn;
  turn.locator = loc[locator_variant % loc.size()];
  turn.observer = replace_slot(obs[core], fact.value);
  if (prefix > 0) turn.observer = pre[prefix - 1] + " , " + turn.observer;
  return turn;
}

DialogSample generate_dialog(const WorldMap& world, std::uint64_t seed, int num_turns, const DialogParams& params) {
  if (num_turns < 1 || num_turns > kMaxTurns) {
    throw std::invalid_argument("generate_dialog: T must be in [1, 6], got " + std::to_string(num_turns));
  }
  Rng rng(seed);
  std::map<std::string, int> label_counts;
  for (const auto& r : world.rooms) ++label_counts[r.label];
  std::vector<int> targets;
  for (const auto& r : world.rooms) {
    const int count = label_counts[r.label];
    if ((num_turns >= 2 && count >= 2) || (num_turns == 1 && count == 1)) targets.push_back(r.room_id);
  }
  if (targets.empty()) {
    throw DialogGenerationError(world.world_id + ": no room supports a " + std::to_string(num_turns) +
                                "-turn ambiguity schedule");
  }
  rng.shuffle(targets);

  for (int goal : targets) {
    const int goal_node = world.center_node(goal);
    std::vector<Fact> pool;
    std::set<std::string> seen;
    for (const auto& l : world.landmarks) {
      if (l.room_id == goal && seen.insert("l" + l.label).second) pool.push_back({FactKind::kLandmark, l.label});
    }
    for (int n : world.door_neighbors(goal)) {
      if (seen.insert("n" + world.rooms[n].label).second) pool.push_back({FactKind::kNeighbor, world.rooms[n].label});
    }
    pool.push_back({FactKind::kVerticalBand, vertical_band(world, goal)});
    pool.push_back({FactKind::kHorizontalBand, horizontal_band(world, goal)});

    std::vector<Fact> facts{{FactKind::kRoomLabel, world.rooms[goal].label}};
    std::vector<char> used(pool.size(), 0);
    // Randomized depth-first search: while ambiguous, every turn must shrink the
    // consistent set; once unique, remaining turns restate other true facts.
    std::function<bool()> extend = [&]() -> bool {
      const auto current = consistent_nodes(world, facts);
      if (static_cast<int>(facts.size()) == num_turns) {
        return current.size() == 1 && current[0] == goal_node;
      }
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!used[i]) order.push_back(i);
      }
      rng.shuffle(order);
      for (std::size_t i : order) {
        facts.push_back(pool[i]);
        if (current.size() > 1 && consistent_nodes(world, facts).size() >= current.size()) {
          facts.pop_back();
          continue;
        }
        used[i] = 1;
        if (extend()) return true;
        used[i] = 0;
        facts.pop_back();
      }
      return false;
    };
    if (!extend()) continue;

    DialogSample sample;
    sample.sample_id = "sample_" + std::to_string(seed);
    sample.world_id = world.world_id;
    sample.facts = facts;
    const Vocabulary& vocab = Vocabulary::standard();
    for (const auto& f : facts) {
      const int lv = rng.uniform_int(0, 1000);
      const int ov = rng.uniform_int(0, 1000);
      sample.turns.push_back(render_turn(f, lv, ov));
      sample.turn_tokens.push_back(tokenize(sample.turns.back(), vocab, params.text_len));
      sample.observer_node_per_turn.push_back(goal_node);
    }
    sample.final_node = goal_node;
    sample.final_pixel = world.nodes[goal_node].position;
    return sample;
  }
  throw DialogGenerationError(world.world_id + ": ambiguity schedule infeasible for T=" + std::to_string(num_turns));
}

// ---- tokenization ----------------------------------------------------------------------

namespace {

std::vector<int> turn_segment(const Turn& turn, const Vocabulary& vocab, int max_len) {
  auto loc = split_words(turn.locator);
  auto obs = split_words(turn.observer);
  constexpr int kStructural = 4;  // [LOC] [SEP] [OBS] [SEP]
  const int budget = std::max(0, max_len - kStructural);
  if (static_cast<int>(loc.size() + obs.size()) > budget) {
    const int keep_obs = std::max(0, budget - static_cast<int>(loc.size()));
    obs.resize(std::min<std::size_t>(obs.size(), keep_obs));
    if (static_cast<int>(loc.size()) > budget) loc.resize(budget);
  }
  std::vector<int> out;
  out.push_back(Vocabulary::kLoc);
  for (const auto& w : loc) out.push_back(vocab.id(w));
  out.push_back(Vocabulary::kSep);
  out.push_back(Vocabulary::kObs);
  for (const auto& w : obs) out.push_back(vocab.id(w));
  out.push_back(Vocabulary::kSep);
  return out;
}

}  // namespace

std::vector<int> tokenize(const Turn& turn, const Vocabulary& vocab, int length) {
  if (length < 5) throw std::invalid_argument("tokenize: length must be at least 5");
  std::vector<int> out{Vocabulary::kCls};
  const auto seg = turn_segment(turn, vocab, length - 1);
  out.insert(out.end(), seg.begin(), seg.end());
  out.resize(length, Vocabulary::kPad);
  return out;
}

std::vector<int> tokenize_dialog(const std::vector<Turn>& turns, const Vocabulary& vocab, int length, int max_total) {
  if (turns.empty()) throw std::invalid_argument("tokenize_dialog: empty dialog");
  if (length < 5) throw std::invalid_argument("tokenize_dialog: length must be at least 5");
  const int total = std::min(length * static_cast<int>(turns.size()), std::max(length, max_total));
  std::vector<int> out{Vocabulary::kCls};
  for (const auto& t : turns) {
    const auto seg = turn_segment(t, vocab, length - 1);
    out.insert(out.end(), seg.begin(), seg.end());
  }
  out.resize(total, Vocabulary::kPad);
  return out;
}

std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

void retokenize(DialogSample& sample, const Vocabulary& vocab, int length) {
  sample.turn_tokens.clear();
  for (const auto& t : sample.turns) sample.turn_tokens.push_back(tokenize(t, vocab, length));
}

// ---- serialization ---------------------------------------------------------------------

std::string sample_to_json(const DialogSample& s) {
  json j;
  j["sampleId"] = s.sample_id;
  j["worldId"] = s.world_id;
  j["turns"] = json::array();
  for (const auto& t : s.turns) j["turns"].push_back({{"locator", t.locator}, {"observer", t.observer}});
  j["turnTokens"] = s.turn_tokens;
  j["observerNodePerTurn"] = s.observer_node_per_turn;
  j["finalNode"] = s.final_node;
  j["finalPixel"] = {{"x", s.final_pixel.x}, {"y", s.final_pixel.y}};
  j["facts"] = json::array();
  for (const auto& f : s.facts) j["facts"].push_back({{"kind", fact_kind_name(f.kind)}, {"value", f.value}});
  return j.dump();
}

DialogSample sample_from_json(const std::string& line) {
  DialogSample s;
  try {
    const json j = json::parse(line);
    s.sample_id = j.at("sampleId").get<std::string>();
    s.world_id = j.at("worldId").get<std::string>();
    for (const auto& t : j.at("turns")) {
      s.turns.push_back({t.at("locator").get<std::string>(), t.at("observer").get<std::string>()});
    }
    s.turn_tokens = j.at("turnTokens").get<std::vector<std::vector<int>>>();
    s.observer_node_per_turn = j.at("observerNodePerTurn").get<std::vector<int>>();
    s.final_node = j.at("finalNode").get<int>();
    s.final_pixel = {j.at("finalPixel").at("x").get<int>(), j.at("finalPixel").at("y").get<int>()};
    if (j.contains("facts")) {
      for (const auto& f : j.at("facts")) {
        s.facts.push_back({fact_kind_from_name(f.at("kind").get<std::string>()), f.at("value").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed dialog sample: ") + e.what());
  }
  const int t = s.num_turns();
  if (t < 1 || t > kMaxTurns || static_cast<int>(s.turn_tokens.size()) != t ||
      static_cast<int>(s.observer_node_per_turn.size()) != t || s.observer_node_per_turn.back() != s.final_node) {
    throw DataError("dialog sample " + s.sample_id + " violates its turn invariants");
  }
  return s;
}

}  // namespace dialoc
