#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dialoc/dialog.hpp"
#include "dialoc/world.hpp"

namespace dialoc {

inline const std::array<std::string, 3>& split_names() {
  static const std::array<std::string, 3> names{"train", "valSeen", "valUnseen"};
  return names;
}

struct SplitCounts {
  int train = 400;
  int val_seen = 50;
  int val_unseen = 50;
};

struct DatasetParams {
  WorldParams world;
  DialogParams dialog;
  SplitCounts counts;
  int samples_per_world = 4;
  /// Relative frequency of T = 1..6.
  std::array<double, kMaxTurns> turn_weights{0.10, 0.25, 0.25, 0.20, 0.10, 0.10};
};

struct SplitManifest {
  std::string name;
  std::vector<std::string> world_ids;
  std::vector<std::string> sample_ids;
};

struct Dataset {
  std::uint64_t seed = 0;
  DatasetParams params;
  std::map<std::string, WorldMap> worlds;
  std::map<std::string, std::vector<DialogSample>> splits;

  const std::vector<DialogSample>& split(const std::string& name) const;
  const WorldMap& world(const std::string& world_id) const;
  std::vector<SplitManifest> manifest() const;
};

/// Generates all three splits from one master seed. valUnseen worlds are fresh;
/// valSeen reuses train worlds with new dialog seeds.
Dataset build_splits(std::uint64_t seed, const DatasetParams& params);

/// Writes worlds/<id>.json, <split>.jsonl and manifest.json under `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Reads a directory produced by write_dataset. Throws DataError on missing or malformed files.
Dataset load_dataset(const std::filesystem::path& dir);

std::string manifest_to_json(const Dataset& dataset);
/// fnv1a64 of the generation seed and parameters, as 16 hex digits.
std::string dataset_config_hash(const Dataset& dataset);

}  // namespace dialoc
