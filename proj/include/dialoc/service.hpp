#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "dialoc/dialog.hpp"
#include "dialoc/metrics.hpp"
#include "dialoc/model.hpp"
#include "dialoc/world.hpp"

namespace httplib {
class Server;
}

namespace dialoc {

inline constexpr const char* kVersion = "0.1.0";

struct ServiceConfig {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path worlds_dir;  // *.json worlds; the demo world is always registered
  std::filesystem::path static_dir;  // served at "/" when set
  std::filesystem::path history_dir;  // per-session JSONL turn history when set
  int max_turns = kMaxTurns;
  int nms_radius_px = 8;
  int top_k = 3;
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Status code plus JSON body. Errors carry {code, message}.
struct ServiceReply {
  int status = 200;
  std::string body;
};

/// Greedy non-maximum suppression: up to k pixels of `probs` [h, w] in descending
/// order, each farther than `radius` (Euclidean) from the ones already picked.
/// Ties go to the smaller row-major index.
std::vector<std::pair<Point, double>> nms_peaks(const Tensor& probs, int k, int radius);

/// Rounds to `decimals` places so the rounded values sum exactly to the rounded
/// total (largest remainder), returned as integer units of 10^-decimals.
std::vector<long long> round_preserving_sum(std::span<const float> values, int decimals);

class LocalizationService {
 public:
  explicit LocalizationService(ServiceConfig config);
  ~LocalizationService();

  const ServiceConfig& config() const { return config_; }

  ServiceReply create_session(const std::string& body);
  ServiceReply submit_turn(const std::string& session_id, const std::string& body);
  ServiceReply get_session(const std::string& session_id) const;
  ServiceReply close_session(const std::string& session_id);
  ServiceReply list_worlds() const;
  ServiceReply generate_world(const std::string& body);
  ServiceReply list_checkpoints() const;
  ServiceReply health() const;

  /// Registers the routes (and the static mount) on `server`.
  void mount(httplib::Server& server);
  /// Blocks serving on config().host:port.
  void serve();

 private:
  struct Checkpoint {
    std::string id;
    std::string hash;
    std::filesystem::path path;
    std::unique_ptr<DiaLocModel> model;
  };
  struct WorldEntry {
    std::shared_ptr<const WorldMap> world;
    std::shared_ptr<const GeodesicIndex> geodesic;
  };
  struct Session;

  const Checkpoint* find_checkpoint(const std::string& id) const;
  std::optional<WorldEntry> find_world(const std::string& id) const;
  WorldEntry register_world(WorldMap world);
  std::shared_ptr<Session> find_session(const std::string& id) const;
  std::string turn_response(const Session& session, const Tensor& logits, int turn_index) const;

  ServiceConfig config_;
  std::vector<Checkpoint> checkpoints_;
  mutable std::shared_mutex worlds_mutex_;
  std::map<std::string, WorldEntry> worlds_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace dialoc
