#include "dialoc/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/image_io.hpp"
#include "dialoc/losses.hpp"
#include "dialoc/util.hpp"

namespace dialoc {

using ojson = nlohmann::ordered_json;

struct LocalizationService::Session {
  std::string id;
  const Checkpoint* checkpoint = nullptr;
  WorldEntry world;
  Tensor image;
  BeliefState belief;
  std::vector<Turn> turns;
  std::vector<std::string> responses;
  bool closed = false;
  std::string created_at;
  mutable std::mutex mutex;
};

namespace {

ServiceReply error(int status, const std::string& code, const std::string& message) {
  ojson j;
  j["code"] = code;
  j["message"] = message;
  return {status, j.dump()};
}

ServiceReply reply(int status, const ojson& body) { return {status, body.dump()}; }

std::string random_session_id() {
  static std::mutex mu;
  static std::random_device device;
  std::lock_guard lock(mu);
  std::uint64_t hi = (static_cast<std::uint64_t>(device()) << 32) | device();
  std::uint64_t lo = (static_cast<std::uint64_t>(device()) << 32) | device();
  return hex64(hi) + hex64(lo);
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ojson world_summary(const WorldMap& world) {
  ojson j;
  j["worldId"] = world.world_id;
  j["widthPx"] = world.width_px;
  j["heightPx"] = world.height_px;
  j["metersPerPixel"] = world.meters_per_pixel;
  ojson rooms = ojson::array();
  for (const auto& r : world.rooms) rooms.push_back({{"roomId", r.room_id}, {"label", r.label}});
  j["rooms"] = rooms;
  j["landmarkCount"] = world.landmarks.size();
  j["nodeCount"] = world.nodes.size();
  j["edgeCount"] = world.edges.size();
  return j;
}

std::string room_label(const WorldMap& world, Point map_pixel, int node) {
  int room = world.room_at(map_pixel);
  if (room < 0) room = world.room_at(world.nodes[static_cast<std::size_t>(node)].position);
  return room < 0 ? "" : world.rooms[static_cast<std::size_t>(room)].label;
}

Tensor softmax_2d(const Tensor& logits) {
  double peak = -std::numeric_limits<double>::infinity();
  for (float v : logits.data()) peak = std::max(peak, static_cast<double>(v));
  std::vector<double> e(logits.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - peak);
    total += e[i];
  }
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<float>(e[i] / total);
  return out;
}

double round_to(double v, int decimals) {
  const double f = std::pow(10.0, decimals);
  return std::round(v * f) / f;
}

ojson parse_body(const std::string& body) {
  ojson j = ojson::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("request body must be a JSON object");
  return j;
}

}  // namespace

std::vector<std::pair<Point, double>> nms_peaks(const Tensor& probs, int k, int radius) {
  if (probs.rank() != 2) throw DimensionError("nms_peaks: expected [h, w], got " + shape_str(probs.shape()));
  std::vector<std::size_t> order(probs.numel());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  const int w = probs.dim(1);
  std::vector<std::pair<Point, double>> peaks;
  for (std::size_t idx : order) {
    if (static_cast<int>(peaks.size()) >= k) break;
    const Point p{static_cast<int>(idx % w), static_cast<int>(idx / w)};
    const bool suppressed = std::any_of(peaks.begin(), peaks.end(), [&](const auto& q) {
      const int dx = p.x - q.first.x, dy = p.y - q.first.y;
      return dx * dx + dy * dy <= radius * radius;
    });
    if (!suppressed) peaks.emplace_back(p, probs[idx]);
  }
  return peaks;
}

std::vector<long long> round_preserving_sum(std::span<const float> values, int decimals) {
  const double f = std::pow(10.0, decimals);
  double total = 0.0;
  for (float v : values) total += v;
  const auto target = static_cast<long long>(std::llround(total * f));
  std::vector<long long> units(values.size());
  std::vector<double> remainder(values.size());
  long long assigned = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double scaled = static_cast<double>(values[i]) * f;
    units[i] = static_cast<long long>(std::floor(scaled));
    remainder[i] = scaled - static_cast<double>(units[i]);
    assigned += units[i];
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i, ++assigned) ++units[order[i]];
  return units;
}

LocalizationService::LocalizationService(ServiceConfig config) : config_(std::move(config)) {
  if (config_.max_turns < 1 || config_.max_turns > kMaxTurns) {
    throw std::invalid_argument("service: max_turns must be in [1, 6]");
  }
  if (config_.top_k < 1) throw std::invalid_argument("service: top_k must be >= 1");
  if (config_.nms_radius_px < 0) throw std::invalid_argument("service: nms_radius_px must be >= 0");
  for (const auto& path : config_.checkpoints) {
    Checkpoint c;
    c.id = path.stem().string();
    c.path = path;
    c.hash = hex64(fnv1a64(read_file(path)));
    c.model = load_checkpoint(path);
    if (find_checkpoint(c.id)) throw std::invalid_argument("service: duplicate checkpoint id '" + c.id + "'");
    spdlog::info("loaded checkpoint {} ({}, {})", c.id, variant_name(c.model->config().variant), c.hash);
    checkpoints_.push_back(std::move(c));
  }
  register_world(demo_world());
  if (!config_.worlds_dir.empty()) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(config_.worlds_dir)) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      WorldMap w = world_from_json(read_file(f));
      validate_world(w);
      register_world(std::move(w));
    }
  }
  if (!config_.history_dir.empty()) std::filesystem::create_directories(config_.history_dir);
}

LocalizationService::~LocalizationService() = default;

const LocalizationService::Checkpoint* LocalizationService::find_checkpoint(const std::string& id) const {
  for (const auto& c : checkpoints_) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::optional<LocalizationService::WorldEntry> LocalizationService::find_world(const std::string& id) const {
  std::shared_lock lock(worlds_mutex_);
  const auto it = worlds_.find(id);
  if (it == worlds_.end()) return std::nullopt;
  return it->second;
}

LocalizationService::WorldEntry LocalizationService::register_world(WorldMap world) {
  auto w = std::make_shared<const WorldMap>(std::move(world));
  WorldEntry entry{w, std::make_shared<const GeodesicIndex>(*w)};
  std::unique_lock lock(worlds_mutex_);
  worlds_[w->world_id] = entry;
  return entry;
}

std::shared_ptr<LocalizationService::Session> LocalizationService::find_session(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

ServiceReply LocalizationService::create_session(const std::string& body) {
  ojson req;
  try {
    req = parse_body(body);
  } catch (const DataError& e) {
    return error(400, "bad_request", e.what());
  }

  const Checkpoint* ckpt = nullptr;
  if (req.contains("checkpointId")) {
    if (!req["checkpointId"].is_string()) return error(400, "bad_request", "checkpointId must be a string");
    const auto id = req["checkpointId"].get<std::string>();
    ckpt = find_checkpoint(id);
    if (!ckpt) return error(404, "checkpoint_not_found", "no checkpoint '" + id + "'");
  } else if (checkpoints_.size() == 1) {
    ckpt = &checkpoints_.front();
  } else if (checkpoints_.empty()) {
    return error(404, "checkpoint_not_found", "no checkpoint is loaded");
  } else {
    return error(400, "bad_request", "checkpointId is required when several checkpoints are loaded");
  }
  const ModelConfig& mc = ckpt->model->config();
  if (req.contains("variant")) {
    if (!req["variant"].is_string()) return error(400, "bad_request", "variant must be a string");
    const auto v = req["variant"].get<std::string>();
    Variant parsed;
    try {
      parsed = variant_from_name(v);
    } catch (const std::exception&) {
      return error(400, "bad_request", "unknown variant '" + v + "'");
    }
    if (parsed != mc.variant) {
      return error(400, "variant_mismatch",
                   "checkpoint '" + ckpt->id + "' is " + variant_name(mc.variant) + ", not " + v);
    }
  }

  WorldEntry world;
  if (req.contains("world")) {
    try {
      WorldMap w = world_from_json(req["world"].dump());
      validate_world(w);
      auto shared = std::make_shared<const WorldMap>(std::move(w));
      world = {shared, std::make_shared<const GeodesicIndex>(*shared)};
    } catch (const std::exception& e) {
      return error(400, "bad_request", std::string("invalid inline world: ") + e.what());
    }
  } else if (req.contains("worldId")) {
    if (!req["worldId"].is_string()) return error(400, "bad_request", "worldId must be a string");
    const auto id = req["worldId"].get<std::string>();
    const auto found = find_world(id);
    if (!found) return error(404, "world_not_found", "no world '" + id + "'");
    world = *found;
  } else {
    return error(400, "bad_request", "worldId or world is required");
  }

  auto session = std::make_shared<Session>();
  session->id = random_session_id();
  session->checkpoint = ckpt;
  session->world = world;
  session->image = rasterize(*world.world, mc.map_size);
  {
    NoGradGuard guard;
    session->belief = begin_dialog(*ckpt->model, session->image);
  }
  session->created_at = utc_now();

  ojson out;
  out["sessionId"] = session->id;
  out["worldId"] = world.world->world_id;
  out["checkpointId"] = ckpt->id;
  out["variant"] = variant_name(mc.variant);
  out["mapImage"] = base64_encode(encode_png(session->image));
  out["mapImageSize"] = mc.map_size;
  out["heatmapSize"] = {{"height", mc.target_h}, {"width", mc.target_w}};
  out["maxTurns"] = config_.max_turns;
  out["worldSummary"] = world_summary(*world.world);
  {
    std::unique_lock lock(sessions_mutex_);
    sessions_[session->id] = session;
  }
  return reply(201, out);
}

std::string LocalizationService::turn_response(const Session& session, const Tensor& logits, int turn_index) const {
  const WorldMap& world = *session.world.world;
  const int h = logits.dim(0), w = logits.dim(1);
  const Tensor probs = softmax_2d(logits);

  ojson heat;
  heat["height"] = h;
  heat["width"] = w;
  heat["decimals"] = 4;
  ojson values = ojson::array();
  for (long long u : round_preserving_sum(probs.data(), 4)) values.push_back(static_cast<double>(u) / 1e4);
  heat["values"] = std::move(values);

  float peak = 0.0f;
  for (float v : probs.data()) peak = std::max(peak, v);
  Tensor gray(probs.shape());
  for (std::size_t i = 0; i < probs.numel(); ++i) gray[i] = peak > 0.0f ? probs[i] / peak : 0.0f;

  ojson top = ojson::array();
  std::vector<int> nodes;
  int rank = 1;
  for (const auto& [p, prob] : nms_peaks(probs, config_.top_k, config_.nms_radius_px)) {
    const Point map_px = target_to_map(world, p, h, w);
    const int node = snap_to_node(map_px, world);
    nodes.push_back(node);
    ojson entry;
    entry["rank"] = rank++;
    entry["pixel"] = {{"x", p.x}, {"y", p.y}};
    entry["mapPixel"] = {{"x", map_px.x}, {"y", map_px.y}};
    entry["probability"] = round_to(prob, 6);
    entry["snappedNode"] = node;
    entry["roomLabel"] = room_label(world, map_px, node);
    top.push_back(std::move(entry));
  }
  double spread = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) spread = std::max(spread, session.world.geodesic->distance(nodes[i], nodes[j]));
  }

  ojson out;
  out["turnIndex"] = turn_index;
  out["heatmap"] = std::move(heat);
  out["heatmapImage"] = base64_encode(encode_png(gray));
  out["confidenceAtTop1"] = top.empty() ? 0.0 : top[0]["probability"].get<double>();
  out["geodesicSpread"] = round_to(spread, 6);
  out["topK"] = std::move(top);
  return out.dump();
}

ServiceReply LocalizationService::submit_turn(const std::string& session_id, const std::string& body) {
  const auto session = find_session(session_id);
  if (!session) return error(404, "session_not_found", "no session '" + session_id + "'");
  ojson req;
  try {
    req = parse_body(body);
  } catch (const DataError& e) {
    return error(400, "bad_request", e.what());
  }
  if (!req.contains("locator") || !req["locator"].is_string() || !req.contains("observer") ||
      !req["observer"].is_string()) {
    return error(400, "bad_request", "locator and observer strings are required");
  }
  const Turn turn{req["locator"].get<std::string>(), req["observer"].get<std::string>()};

  std::lock_guard lock(session->mutex);
  if (session->closed) return error(409, "session_closed", "session '" + session_id + "' is closed");
  if (session->belief.turn_index >= config_.max_turns) {
    return error(422, "turn_limit", "session already has " + std::to_string(config_.max_turns) + " turns");
  }
  const DiaLocModel& model = *session->checkpoint->model;
  const std::vector<int> tokens = tokenize(turn, Vocabulary::standard(), model.config().text_len);
  {
    NoGradGuard guard;
    advance(model, session->belief, tokens);
  }
  const Tensor& logits = session->belief.heatmaps.back()->value;
  if (!logits.all_finite()) return error(500, "numeric_error", "non-finite heatmap logits");
  std::string response = turn_response(*session, logits, session->belief.turn_index);
  session->turns.push_back(turn);
  session->responses.push_back(response);

  if (!config_.history_dir.empty()) {
    ojson line;
    line["turnIndex"] = session->belief.turn_index;
    line["locator"] = turn.locator;
    line["observer"] = turn.observer;
    line["response"] = ojson::parse(response);
    std::ofstream os(config_.history_dir / (session_id + ".jsonl"), std::ios::app);
    os << line.dump() << '\n';
  }
  return {200, std::move(response)};
}

ServiceReply LocalizationService::get_session(const std::string& session_id) const {
  const auto session = find_session(session_id);
  if (!session) return error(404, "session_not_found", "no session '" + session_id + "'");
  std::lock_guard lock(session->mutex);
  ojson out;
  out["sessionId"] = session->id;
  out["worldId"] = session->world.world->world_id;
  out["checkpointId"] = session->checkpoint->id;
  out["variant"] = variant_name(session->checkpoint->model->config().variant);
  out["status"] = session->closed ? "closed" : "active";
  out["createdAt"] = session->created_at;
  out["turnIndex"] = session->belief.turn_index;
  out["mapImage"] = base64_encode(encode_png(session->image));
  ojson history = ojson::array();
  for (std::size_t i = 0; i < session->turns.size(); ++i) {
    history.push_back({{"turnIndex", i + 1},
                       {"locator", session->turns[i].locator},
                       {"observer", session->turns[i].observer},
                       {"response", ojson::parse(session->responses[i])}});
  }
  out["history"] = std::move(history);
  return reply(200, out);
}

ServiceReply LocalizationService::close_session(const std::string& session_id) {
  const auto session = find_session(session_id);
  if (!session) return error(404, "session_not_found", "no session '" + session_id + "'");
  std::lock_guard lock(session->mutex);
  session->closed = true;
  ojson out;
  out["sessionId"] = session->id;
  out["status"] = "closed";
  out["turnIndex"] = session->belief.turn_index;
  return reply(200, out);
}

ServiceReply LocalizationService::list_worlds() const {
  ojson worlds = ojson::array();
  std::shared_lock lock(worlds_mutex_);
  for (const auto& [id, entry] : worlds_) worlds.push_back(world_summary(*entry.world));
  return reply(200, ojson{{"worlds", worlds}});
}

ServiceReply LocalizationService::generate_world(const std::string& body) {
  ojson req;
  try {
    req = parse_body(body);
  } catch (const DataError& e) {
    return error(400, "bad_request", e.what());
  }
  if (!req.contains("seed") || !req["seed"].is_number_unsigned()) {
    return error(400, "bad_request", "seed must be a non-negative integer");
  }
  WorldParams params;
  try {
    if (req.contains("params")) {
      const ojson& p = req["params"];
      if (!p.is_object()) return error(400, "bad_request", "params must be an object");
      params.grid_rows = p.value("gridRows", params.grid_rows);
      params.grid_cols = p.value("gridCols", params.grid_cols);
      params.size_px = p.value("sizePx", params.size_px);
      params.meters_per_pixel = p.value("metersPerPixel", params.meters_per_pixel);
      params.min_landmarks = p.value("minLandmarks", params.min_landmarks);
      params.max_landmarks = p.value("maxLandmarks", params.max_landmarks);
      params.extra_door_probability = p.value("extraDoorProbability", params.extra_door_probability);
    }
    WorldMap w = dialoc::generate_world(req["seed"].get<std::uint64_t>(), params);
    const std::string world_json = world_to_json(w);
    const WorldEntry entry = register_world(std::move(w));
    ojson out;
    out["worldId"] = entry.world->world_id;
    out["worldSummary"] = world_summary(*entry.world);
    out["world"] = ojson::parse(world_json);
    return reply(201, out);
  } catch (const std::exception& e) {
    return error(400, "bad_request", e.what());
  }
}

ServiceReply LocalizationService::list_checkpoints() const {
  ojson list = ojson::array();
  for (const auto& c : checkpoints_) {
    const ModelConfig& mc = c.model->config();
    list.push_back({{"checkpointId", c.id},
                    {"hash", c.hash},
                    {"variant", variant_name(mc.variant)},
                    {"fusionDepth", mc.fusion_depth},
                    {"parameterCount", c.model->parameter_count()}});
  }
  return reply(200, ojson{{"checkpoints", list}});
}

ServiceReply LocalizationService::health() const {
  ojson out;
  out["status"] = "ok";
  out["version"] = kVersion;
  out["checkpointHash"] = checkpoints_.size() == 1 ? ojson(checkpoints_.front().hash) : ojson(nullptr);
  ojson list = ojson::array();
  for (const auto& c : checkpoints_) list.push_back({{"checkpointId", c.id}, {"hash", c.hash}});
  out["checkpoints"] = std::move(list);
  return reply(200, out);
}

void LocalizationService::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const ServiceReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  auto guarded = [send](auto fn) {
    return [send, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const std::exception& e) {
        spdlog::error("request {} {} failed: {}", req.method, req.path, e.what());
        send(res, error(500, "internal", e.what()));
      }
    };
  };
  server.Post("/v1/sessions", guarded([this](const httplib::Request& r) { return create_session(r.body); }));
  server.Post(R"(/v1/sessions/([0-9A-Za-z]+)/turns)",
              guarded([this](const httplib::Request& r) { return submit_turn(r.matches[1], r.body); }));
  server.Get(R"(/v1/sessions/([0-9A-Za-z]+))",
             guarded([this](const httplib::Request& r) { return get_session(r.matches[1]); }));
  server.Delete(R"(/v1/sessions/([0-9A-Za-z]+))",
                guarded([this](const httplib::Request& r) { return close_session(r.matches[1]); }));
  server.Get("/v1/worlds", guarded([this](const httplib::Request&) { return list_worlds(); }));
  server.Post("/v1/worlds/generate", guarded([this](const httplib::Request& r) { return generate_world(r.body); }));
  server.Get("/v1/checkpoints", guarded([this](const httplib::Request&) { return list_checkpoints(); }));
  server.Get("/v1/healthz", guarded([this](const httplib::Request&) { return health(); }));
  if (!config_.static_dir.empty()) {
    if (!server.set_mount_point("/", config_.static_dir.string())) {
      throw DataError("static directory '" + config_.static_dir.string() + "' does not exist");
    }
  }
}

void LocalizationService::serve() {
  httplib::Server server;
  mount(server);
  spdlog::info("serving on http://{}:{}", config_.host, config_.port);
  if (!server.listen(config_.host, config_.port)) {
    throw std::runtime_error("cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  }
}

}  // namespace dialoc
