#include "dialoc/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/util.hpp"

namespace dialoc {

namespace {

using ojson = nlohmann::ordered_json;

constexpr int kDialogAttempts = 8;

int draw_turns(const std::array<double, kMaxTurns>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (int t = 0; t < kMaxTurns; ++t) {
    if (u < weights[t]) return t + 1;
    u -= weights[t];
  }
  return kMaxTurns;
}

// Tries the drawn T first, then shorter schedules, then longer ones, with several dialog seeds each.
DialogSample make_sample(const WorldMap& world, std::uint64_t master, const std::string& tag, int index, int turns,
                         const DialogParams& params) {
  std::vector<int> order;
  for (int t = turns; t >= 1; --t) order.push_back(t);
  for (int t = turns + 1; t <= kMaxTurns; ++t) order.push_back(t);
  for (int t : order) {
    for (int attempt = 0; attempt < kDialogAttempts; ++attempt) {
      const std::uint64_t seed = derive_seed(master, tag + "-dialog", static_cast<std::uint64_t>(index) * 64 + attempt);
      try {
        return generate_dialog(world, seed, t, params);
      } catch (const DialogGenerationError&) {
      }
    }
  }
  throw DialogGenerationError(world.world_id + ": no feasible dialog for " + tag + " sample " + std::to_string(index));
}

std::string sample_name(const std::string& split, int index) {
  std::ostringstream os;
  os << split << '_';
  os.width(5);
  os.fill('0');
  os << index;
  return os.str();
}

ojson params_to_json(const DatasetParams& p) {
  ojson j;
  j["gridRows"] = p.world.grid_rows;
  j["gridCols"] = p.world.grid_cols;
  j["sizePx"] = p.world.size_px;
  j["metersPerPixel"] = p.world.meters_per_pixel;
  j["textLen"] = p.dialog.text_len;
  j["samplesPerWorld"] = p.samples_per_world;
  j["turnWeights"] = p.turn_weights;
  j["counts"] = {{"train", p.counts.train}, {"valSeen", p.counts.val_seen}, {"valUnseen", p.counts.val_unseen}};
  return j;
}

DatasetParams params_from_json(const ojson& j) {
  DatasetParams p;
  p.world.grid_rows = j.at("gridRows").get<int>();
  p.world.grid_cols = j.at("gridCols").get<int>();
  p.world.size_px = j.at("sizePx").get<int>();
  p.world.meters_per_pixel = j.at("metersPerPixel").get<double>();
  p.dialog.text_len = j.at("textLen").get<int>();
  p.samples_per_world = j.at("samplesPerWorld").get<int>();
  p.turn_weights = j.at("turnWeights").get<std::array<double, kMaxTurns>>();
  p.counts.train = j.at("counts").at("train").get<int>();
  p.counts.val_seen = j.at("counts").at("valSeen").get<int>();
  p.counts.val_unseen = j.at("counts").at("valUnseen").get<int>();
  return p;
}

}  // namespace

const std::vector<DialogSample>& Dataset::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw DataError("unknown split '" + name + "'");
  return it->second;
}

const WorldMap& Dataset::world(const std::string& world_id) const {
  const auto it = worlds.find(world_id);
  if (it == worlds.end()) throw DataError("unknown world '" + world_id + "'");
  return it->second;
}

std::vector<SplitManifest> Dataset::manifest() const {
  std::vector<SplitManifest> out;
  for (const auto& name : split_names()) {
    SplitManifest m;
    m.name = name;
    const auto it = splits.find(name);
    if (it == splits.end()) continue;
    std::set<std::string> seen;
    for (const auto& s : it->second) {
      m.sample_ids.push_back(s.sample_id);
      if (seen.insert(s.world_id).second) m.world_ids.push_back(s.world_id);
    }
    out.push_back(std::move(m));
  }
  return out;
}

Dataset build_splits(std::uint64_t seed, const DatasetParams& params) {
  const SplitCounts& c = params.counts;
  if (c.train < 1 || c.val_seen < 1 || c.val_unseen < 1) throw std::invalid_argument("build_splits: counts must be >= 1");
  if (params.samples_per_world < 1) throw std::invalid_argument("build_splits: samplesPerWorld must be >= 1");

  Dataset ds;
  ds.seed = seed;
  ds.params = params;
  auto make_worlds = [&](const std::string& tag, int count) {
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
      WorldMap w = generate_world(derive_seed(seed, tag, static_cast<std::uint64_t>(i)), params.world);
      w.world_id = tag + "_" + std::to_string(i);
      ids.push_back(w.world_id);
      ds.worlds.emplace(w.world_id, std::move(w));
    }
    return ids;
  };
  const int per = params.samples_per_world;
  const auto train_worlds = make_worlds("world_train", (c.train + per - 1) / per);
  const auto unseen_worlds = make_worlds("world_unseen", (c.val_unseen + per - 1) / per);

  auto fill = [&](const std::string& split, int count, auto world_for) {
    Rng turn_rng(derive_seed(seed, split + "-turns"));
    std::vector<DialogSample> out;
    for (int i = 0; i < count; ++i) {
      const int turns = draw_turns(params.turn_weights, turn_rng);
      const WorldMap& w = ds.worlds.at(world_for(i));
      DialogSample s = make_sample(w, seed, split, i, turns, params.dialog);
      s.sample_id = sample_name(split, i);
      out.push_back(std::move(s));
    }
    ds.splits[split] = std::move(out);
  };
  fill("train", c.train, [&](int i) { return train_worlds[i / per]; });
  Rng seen_rng(derive_seed(seed, "valSeen-worlds"));
  std::vector<std::string> seen_choice;
  for (int i = 0; i < c.val_seen; ++i) {
    seen_choice.push_back(train_worlds[seen_rng.uniform_int(0, static_cast<int>(train_worlds.size()) - 1)]);
  }
  fill("valSeen", c.val_seen, [&](int i) { return seen_choice[i]; });
  fill("valUnseen", c.val_unseen, [&](int i) { return unseen_worlds[i / per]; });
  return ds;
}

std::string dataset_config_hash(const Dataset& dataset) {
  ojson j;
  j["seed"] = dataset.seed;
  j["params"] = params_to_json(dataset.params);
  return hex64(fnv1a64(j.dump()));
}

std::string manifest_to_json(const Dataset& dataset) {
  ojson j;
  j["seed"] = dataset.seed;
  j["params"] = params_to_json(dataset.params);
  j["configHash"] = dataset_config_hash(dataset);
  // Split sizes of the human-dialog benchmark these splits scale down, for reference.
  j["referenceCounts"] = {{"train", 9955}, {"valSeen", 305}, {"valUnseen", 579}};
  j["splits"] = ojson::array();
  for (const auto& m : dataset.manifest()) {
    j["splits"].push_back({{"name", m.name},
                           {"count", m.sample_ids.size()},
                           {"worldIds", m.world_ids},
                           {"sampleIds", m.sample_ids}});
  }
  return j.dump(2) + "\n";
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  for (const auto& [id, w] : dataset.worlds) write_file(dir / "worlds" / (id + ".json"), world_to_json(w) + "\n");
  for (const auto& name : split_names()) {
    std::string lines;
    for (const auto& s : dataset.split(name)) lines += sample_to_json(s) + "\n";
    write_file(dir / (name + ".jsonl"), lines);
  }
  write_file(dir / "manifest.json", manifest_to_json(dataset));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ojson manifest;
  try {
    manifest = ojson::parse(read_file(dir / "manifest.json"));
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.params = params_from_json(manifest.at("params"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  std::set<std::string> needed;
  for (const auto& name : split_names()) {
    std::istringstream in(read_file(dir / (name + ".jsonl")));
    std::vector<DialogSample> samples;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      samples.push_back(sample_from_json(line));
      needed.insert(samples.back().world_id);
    }
    ds.splits[name] = std::move(samples);
  }
  for (const auto& id : needed) ds.worlds.emplace(id, world_from_json(read_file(dir / "worlds" / (id + ".json"))));
  return ds;
}

}  // namespace dialoc
