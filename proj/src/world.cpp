#include "dialoc/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dialoc/util.hpp"

namespace dialoc {

namespace {

using json = nlohmann::json;

double pixel_distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::size_t index_of(const std::vector<std::string>& vocab, const std::string& label) {
  const auto it = std::find(vocab.begin(), vocab.end(), label);
  if (it == vocab.end()) throw DataError("label '" + label + "' is not in the vocabulary");
  return static_cast<std::size_t>(it - vocab.begin());
}

}  // namespace

const std::vector<std::string>& default_room_vocabulary() {
  static const std::vector<std::string> vocab{"bedroom", "kitchen", "bathroom", "office",  "hallway", "lounge",
                                              "dining",  "garage",  "closet",   "library", "laundry", "studio"};
  return vocab;
}

const std::vector<std::string>& default_landmark_vocabulary() {
  static const std::vector<std::string> vocab{"lamp",  "sofa",   "table",     "bed",    "sink",     "piano",
                                              "plant", "tv",     "desk",      "chair",  "bookshelf", "fridge",
                                              "painting", "mirror", "rug",    "clock"};
  return vocab;
}

const std::vector<Rgb>& room_palette() {
  static const std::vector<Rgb> palette{
      {0.93f, 0.62f, 0.62f}, {0.96f, 0.82f, 0.47f}, {0.56f, 0.80f, 0.96f}, {0.70f, 0.90f, 0.58f},
      {0.86f, 0.86f, 0.72f}, {0.80f, 0.66f, 0.92f}, {0.97f, 0.70f, 0.87f}, {0.66f, 0.66f, 0.66f},
      {0.58f, 0.86f, 0.80f}, {0.82f, 0.74f, 0.58f}, {0.76f, 0.92f, 0.97f}, {0.97f, 0.96f, 0.62f}};
  return palette;
}

const std::vector<Rgb>& landmark_palette() {
  static const std::vector<Rgb> palette{
      {1.00f, 0.85f, 0.00f}, {0.60f, 0.20f, 0.10f}, {0.40f, 0.26f, 0.05f}, {0.10f, 0.20f, 0.75f},
      {0.00f, 0.60f, 0.90f}, {0.35f, 0.00f, 0.45f}, {0.00f, 0.55f, 0.10f}, {0.25f, 0.25f, 0.50f},
      {0.90f, 0.45f, 0.00f}, {0.85f, 0.00f, 0.25f}, {0.50f, 0.50f, 0.00f}, {0.00f, 0.40f, 0.40f},
      {0.95f, 0.20f, 0.80f}, {0.55f, 0.75f, 1.00f}, {0.80f, 0.10f, 0.05f}, {0.30f, 0.85f, 0.45f}};
  return palette;
}

Rgb room_color(const std::string& label) {
  return room_palette()[index_of(default_room_vocabulary(), label) % room_palette().size()];
}

Rgb landmark_color(const std::string& label) {
  return landmark_palette()[index_of(default_landmark_vocabulary(), label) % landmark_palette().size()];
}

// ---- WorldMap queries ------------------------------------------------------------

int WorldMap::room_at(Point p) const {
  for (const auto& r : rooms) {
    if (r.rect.contains(p)) return r.room_id;
  }
  return -1;
}

bool WorldMap::is_room_center(int node_id) const {
  if (node_id < 0 || node_id >= static_cast<int>(nodes.size())) return false;
  const Point p = nodes[node_id].position;
  const int r = room_at(p);
  return r >= 0 && rooms[r].rect.center() == p;
}

int WorldMap::center_node(int room_id) const {
  const Point c = rooms.at(room_id).rect.center();
  for (const auto& n : nodes) {
    if (n.position == c) return n.node_id;
  }
  return -1;
}

std::vector<int> WorldMap::node_neighbors(int node_id) const {
  std::vector<int> out;
  for (const auto& e : edges) {
    if (e.node_a == node_id) out.push_back(e.node_b);
    if (e.node_b == node_id) out.push_back(e.node_a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> WorldMap::door_neighbors(int room_id) const {
  // center -> doorway -> other center
  std::vector<int> out;
  const int c = center_node(room_id);
  for (int door : node_neighbors(c)) {
    if (is_room_center(door)) continue;
    for (int other : node_neighbors(door)) {
      if (other != c && is_room_center(other)) out.push_back(room_at(nodes[other].position));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool WorldMap::connected() const {
  if (nodes.empty()) return false;
  std::vector<char> seen(nodes.size(), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!frontier.empty()) {
    const int n = frontier.front();
    frontier.pop();
    for (int m : node_neighbors(n)) {
      if (!seen[m]) {
        seen[m] = 1;
        ++count;
        frontier.push(m);
      }
    }
  }
  return count == nodes.size();
}

void validate_world(const WorldMap& world) {
  if (world.width_px <= 0 || world.height_px <= 0) throw DataError(world.world_id + ": non-positive map size");
  if (!(world.meters_per_pixel > 0.0)) throw DataError(world.world_id + ": metersPerPixel must be > 0");
  const Rect bounds{0, 0, world.width_px, world.height_px};
  for (std::size_t i = 0; i < world.rooms.size(); ++i) {
    const Rect& r = world.rooms[i].rect;
    if (world.rooms[i].room_id != static_cast<int>(i)) throw DataError(world.world_id + ": room ids must be dense");
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > bounds.x1 || r.y1 > bounds.y1 || r.x0 >= r.x1 || r.y0 >= r.y1) {
      throw DataError(world.world_id + ": room " + std::to_string(i) + " lies outside the map");
    }
    for (std::size_t j = i + 1; j < world.rooms.size(); ++j) {
      if (r.overlaps(world.rooms[j].rect)) {
        throw DataError(world.world_id + ": rooms " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
      }
    }
  }
  for (std::size_t i = 0; i < world.nodes.size(); ++i) {
    if (world.nodes[i].node_id != static_cast<int>(i)) throw DataError(world.world_id + ": node ids must be dense");
    if (world.room_at(world.nodes[i].position) < 0) {
      throw DataError(world.world_id + ": node " + std::to_string(i) + " is not inside any room");
    }
  }
  for (const auto& e : world.edges) {
    if (e.node_a < 0 || e.node_b < 0 || e.node_a >= static_cast<int>(world.nodes.size()) ||
        e.node_b >= static_cast<int>(world.nodes.size())) {
      throw DataError(world.world_id + ": edge references unknown node");
    }
    const double expected =
        pixel_distance(world.nodes[e.node_a].position, world.nodes[e.node_b].position) * world.meters_per_pixel;
    if (std::abs(expected - e.length_m) > 1e-6) {
      throw DataError(world.world_id + ": edge " + std::to_string(e.node_a) + "-" + std::to_string(e.node_b) +
                      " length does not match its pixel distance");
    }
  }
  if (!world.connected()) throw DataError(world.world_id + ": waypoint graph is not connected");
}

// ---- generation ----------------------------------------------------------------------

WorldMap generate_world(std::uint64_t seed, const WorldParams& params) {
  if (params.grid_rows < 2 || params.grid_cols < 2) {
    throw std::invalid_argument("generate_world: gridRooms must be at least 2x2");
  }
  if (!(params.meters_per_pixel > 0.0)) throw std::invalid_argument("generate_world: metersPerPixel must be > 0");
  if (params.room_vocab.empty() || params.landmark_vocab.empty()) {
    throw std::invalid_argument("generate_world: vocabularies must be non-empty");
  }
  if (params.min_landmarks < 0 || params.max_landmarks < params.min_landmarks ||
      params.max_landmarks > static_cast<int>(params.landmark_vocab.size())) {
    throw std::invalid_argument("generate_world: invalid landmark count range");
  }
  constexpr int kMargin = 2;
  const int inner = params.size_px - 2 * kMargin;
  const int cell_w = inner / params.grid_cols;
  const int cell_h = inner / params.grid_rows;
  if (cell_w < 12 || cell_h < 12) throw std::invalid_argument("generate_world: map too small for the requested grid");

  Rng rng(seed);
  WorldMap world;
  world.world_id = "world_" + std::to_string(seed);
  world.width_px = params.size_px;
  world.height_px = params.size_px;
  world.meters_per_pixel = params.meters_per_pixel;

  auto boundaries = [&](int count, int cell) {
    std::vector<int> b(count + 1);
    const int jitter = std::max(1, cell / 6);
    b[0] = kMargin;
    b[count] = kMargin + inner;
    for (int i = 1; i < count; ++i) b[i] = kMargin + (inner * i) / count + rng.uniform_int(-jitter, jitter);
    return b;
  };
  const std::vector<int> ys = boundaries(params.grid_rows, cell_h);
  std::vector<std::vector<int>> xs;
  for (int r = 0; r < params.grid_rows; ++r) xs.push_back(boundaries(params.grid_cols, cell_w));

  const int room_count = params.grid_rows * params.grid_cols;
  for (int r = 0; r < params.grid_rows; ++r) {
    for (int c = 0; c < params.grid_cols; ++c) {
      Room room;
      room.room_id = r * params.grid_cols + c;
      room.rect = {xs[r][c], ys[r], xs[r][c + 1], ys[r + 1]};
      room.label = params.room_vocab[rng.uniform_int(0, static_cast<int>(params.room_vocab.size()) - 1)];
      world.rooms.push_back(room);
    }
  }
  // Guarantee at least one duplicated label so ambiguous dialogs are possible.
  {
    std::vector<std::string> labels;
    for (const auto& r : world.rooms) labels.push_back(r.label);
    std::sort(labels.begin(), labels.end());
    if (std::adjacent_find(labels.begin(), labels.end()) == labels.end()) {
      const int src = rng.uniform_int(0, room_count - 1);
      int dst = rng.uniform_int(0, room_count - 2);
      if (dst >= src) ++dst;
      world.rooms[dst].label = world.rooms[src].label;
    }
  }

  // Landmarks: distinct labels per room, 3x3 footprints kept off the walls and apart.
  for (const auto& room : world.rooms) {
    const int count = rng.uniform_int(params.min_landmarks, params.max_landmarks);
    std::vector<std::string> pool = params.landmark_vocab;
    rng.shuffle(pool);
    std::vector<Point> placed;
    for (int k = 0, tries = 0; k < count && tries < 200; ++tries) {
      const Point p{rng.uniform_int(room.rect.x0 + 3, room.rect.x1 - 4), rng.uniform_int(room.rect.y0 + 3, room.rect.y1 - 4)};
      const bool clear = std::all_of(placed.begin(), placed.end(), [&](Point q) {
        return std::max(std::abs(p.x - q.x), std::abs(p.y - q.y)) >= 4;
      });
      if (!clear || p == room.rect.center()) continue;
      placed.push_back(p);
      world.landmarks.push_back({pool[k], room.room_id, p});
      ++k;
    }
  }

  // Candidate doorways between grid neighbours.
  struct Door {
    int a, b;
    Point pos;
  };
  std::vector<Door> candidates;
  for (int r = 0; r < params.grid_rows; ++r) {
    for (int c = 0; c < params.grid_cols; ++c) {
      const int a = r * params.grid_cols + c;
      const Rect& ra = world.rooms[a].rect;
      if (c + 1 < params.grid_cols) {
        candidates.push_back({a, a + 1, {ra.x1 - 1, (ra.y0 + ra.y1) / 2}});
      }
      if (r + 1 < params.grid_rows) {
        for (int c2 = 0; c2 < params.grid_cols; ++c2) {
          const int b = (r + 1) * params.grid_cols + c2;
          const Rect& rb = world.rooms[b].rect;
          const int lo = std::max(ra.x0, rb.x0), hi = std::min(ra.x1, rb.x1);
          if (c2 == c && hi - lo >= 6) candidates.push_back({a, b, {(lo + hi) / 2, ra.y1 - 1}});
        }
      }
    }
  }
  rng.shuffle(candidates);
  std::vector<int> parent(room_count);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<Door> doors;
  std::vector<Door> extras;
  for (const auto& d : candidates) {
    const int ra = find(d.a), rb = find(d.b);
    if (ra != rb) {
      parent[ra] = rb;
      doors.push_back(d);
    } else {
      extras.push_back(d);
    }
  }
  for (const auto& d : extras) {
    if (rng.bernoulli(params.extra_door_probability)) doors.push_back(d);
  }
  std::sort(doors.begin(), doors.end(), [](const Door& x, const Door& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });

  for (const auto& room : world.rooms) {
    world.nodes.push_back({room.room_id, room.rect.center()});
  }
  auto add_edge = [&](int a, int b) {
    const double len = pixel_distance(world.nodes[a].position, world.nodes[b].position) * world.meters_per_pixel;
    world.edges.push_back({a, b, len});
  };
  for (const auto& d : doors) {
    const int id = static_cast<int>(world.nodes.size());
    world.nodes.push_back({id, d.pos});
    add_edge(d.a, id);
    add_edge(id, d.b);
  }
  validate_world(world);
  return world;
}

WorldMap demo_world() {
  WorldMap world;
  world.world_id = "world_demo";
  world.width_px = 64;
  world.height_px = 64;
  world.meters_per_pixel = 0.25;
  world.rooms = {{0, "bedroom", {2, 2, 32, 32}},
                 {1, "kitchen", {32, 2, 62, 32}},
                 {2, "bedroom", {2, 32, 32, 62}},
                 {3, "office", {32, 32, 62, 62}}};
  world.landmarks = {{"lamp", 0, {10, 10}}, {"fridge", 1, {52, 9}}, {"bed", 2, {10, 52}}, {"desk", 3, {52, 52}}};
  for (const auto& room : world.rooms) world.nodes.push_back({room.room_id, room.rect.center()});
  const std::vector<std::pair<std::pair<int, int>, Point>> doors{{{0, 1}, {31, 17}}, {{1, 3}, {47, 31}}, {{2, 3}, {31, 47}}};
  for (const auto& [rooms, pos] : doors) {
    const int id = static_cast<int>(world.nodes.size());
    world.nodes.push_back({id, pos});
    for (int end : {rooms.first, rooms.second}) {
      const int a = end == rooms.first ? end : id, b = end == rooms.first ? id : end;
      world.edges.push_back(
          {a, b, pixel_distance(world.nodes[a].position, world.nodes[b].position) * world.meters_per_pixel});
    }
  }
  validate_world(world);
  return world;
}

// ---- rasterization ---------------------------------------------------------------

namespace {

struct Canvas {
  int w, h;
  std::vector<Rgb> px;
  Canvas(int width, int height) : w(width), h(height), px(static_cast<std::size_t>(width) * height, kBackgroundColor) {}
  void set(int x, int y, Rgb c) {
    if (x >= 0 && x < w && y >= 0 && y < h) px[static_cast<std::size_t>(y) * w + x] = c;
  }
};

// Doorway gap: the two wall pixels on either side of the shared boundary get floor colour.
void open_door(Canvas& canvas, const WorldMap& world, int door_node) {
  const Point p = world.nodes[door_node].position;
  const auto neighbours = world.node_neighbors(door_node);
  if (neighbours.size() < 2) return;
  const int ra = world.room_at(world.nodes[neighbours[0]].position);
  const int rb = world.room_at(world.nodes[neighbours[1]].position);
  if (ra < 0 || rb < 0) return;
  const Rect& a = world.rooms[ra].rect;
  const Rect& b = world.rooms[rb].rect;
  const Rgb ca = room_color(world.rooms[ra].label);
  const Rgb cb = room_color(world.rooms[rb].label);
  const bool vertical_wall = (a.x1 == b.x0) || (b.x1 == a.x0);
  for (int k = -2; k < 2; ++k) {
    if (vertical_wall) {
      const int boundary = a.x1 == b.x0 ? a.x1 : b.x1;
      const Rgb left = a.x1 == b.x0 ? ca : cb;
      const Rgb right = a.x1 == b.x0 ? cb : ca;
      canvas.set(boundary - 1, p.y + k, left);
      canvas.set(boundary, p.y + k, right);
    } else {
      const int boundary = a.y1 == b.y0 ? a.y1 : b.y1;
      const Rgb top = a.y1 == b.y0 ? ca : cb;
      const Rgb bottom = a.y1 == b.y0 ? cb : ca;
      canvas.set(p.x + k, boundary - 1, top);
      canvas.set(p.x + k, boundary, bottom);
    }
  }
}

}  // namespace

Tensor rasterize(const WorldMap& world, int size_px) {
  if (size_px != 64 && size_px != 224) throw std::invalid_argument("rasterize: size must be 64 or 224");
  Canvas canvas(world.width_px, world.height_px);
  for (const auto& room : world.rooms) {
    const Rgb fill = room_color(room.label);
    const Rect& r = room.rect;
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        const bool wall = x == r.x0 || x == r.x1 - 1 || y == r.y0 || y == r.y1 - 1;
        canvas.set(x, y, wall ? kWallColor : fill);
      }
    }
  }
  for (const auto& n : world.nodes) {
    if (!world.is_room_center(n.node_id)) open_door(canvas, world, n.node_id);
  }
  for (const auto& lm : world.landmarks) {
    const Rgb c = landmark_color(lm.label);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) canvas.set(lm.position.x + dx, lm.position.y + dy, c);
    }
  }
  Tensor image({3, size_px, size_px});
  for (int i = 0; i < size_px; ++i) {
    const int sy = std::min(world.height_px - 1, (2 * i + 1) * world.height_px / (2 * size_px));
    for (int j = 0; j < size_px; ++j) {
      const int sx = std::min(world.width_px - 1, (2 * j + 1) * world.width_px / (2 * size_px));
      const Rgb& c = canvas.px[static_cast<std::size_t>(sy) * canvas.w + sx];
      for (int ch = 0; ch < 3; ++ch) image.at(ch, i, j) = c[ch];
    }
  }
  return image;
}

// ---- serialization ---------------------------------------------------------------

std::string world_to_json(const WorldMap& world) {
  std::ostringstream os;
  auto point = [&](Point p) { os << "{\"x\":" << p.x << ",\"y\":" << p.y << '}'; };
  os << "{\"worldId\":" << json(world.world_id).dump() << ",\"widthPx\":" << world.width_px
     << ",\"heightPx\":" << world.height_px << ",\"metersPerPixel\":" << format_fixed(world.meters_per_pixel, 6)
     << ",\"rooms\":[";
  for (std::size_t i = 0; i < world.rooms.size(); ++i) {
    const Room& r = world.rooms[i];
    if (i) os << ',';
    os << "{\"roomId\":" << r.room_id << ",\"label\":" << json(r.label).dump() << ",\"rect\":{\"x0\":" << r.rect.x0
       << ",\"y0\":" << r.rect.y0 << ",\"x1\":" << r.rect.x1 << ",\"y1\":" << r.rect.y1 << "}}";
  }
  os << "],\"landmarks\":[";
  for (std::size_t i = 0; i < world.landmarks.size(); ++i) {
    const Landmark& l = world.landmarks[i];
    if (i) os << ',';
    os << "{\"label\":" << json(l.label).dump() << ",\"roomId\":" << l.room_id << ",\"position\":";
    point(l.position);
    os << '}';
  }
  os << "],\"waypointGraph\":{\"nodes\":[";
  for (std::size_t i = 0; i < world.nodes.size(); ++i) {
    if (i) os << ',';
    os << "{\"nodeId\":" << world.nodes[i].node_id << ",\"position\":";
    point(world.nodes[i].position);
    os << '}';
  }
  os << "],\"edges\":[";
  for (std::size_t i = 0; i < world.edges.size(); ++i) {
    const WaypointEdge& e = world.edges[i];
    if (i) os << ',';
    os << "{\"nodeA\":" << e.node_a << ",\"nodeB\":" << e.node_b << ",\"length\":" << format_fixed(e.length_m, 6) << '}';
  }
  os << "]}}";
  return os.str();
}

WorldMap world_from_json(const std::string& text) {
  WorldMap world;
  try {
    const json j = json::parse(text);
    auto point = [](const json& p) { return Point{p.at("x").get<int>(), p.at("y").get<int>()}; };
    world.world_id = j.at("worldId").get<std::string>();
    world.width_px = j.at("widthPx").get<int>();
    world.height_px = j.at("heightPx").get<int>();
    world.meters_per_pixel = j.at("metersPerPixel").get<double>();
    for (const auto& r : j.at("rooms")) {
      const auto& rc = r.at("rect");
      world.rooms.push_back({r.at("roomId").get<int>(), r.at("label").get<std::string>(),
                             {rc.at("x0").get<int>(), rc.at("y0").get<int>(), rc.at("x1").get<int>(), rc.at("y1").get<int>()}});
    }
    for (const auto& l : j.at("landmarks")) {
      world.landmarks.push_back({l.at("label").get<std::string>(), l.at("roomId").get<int>(), point(l.at("position"))});
    }
    const auto& graph = j.at("waypointGraph");
    for (const auto& n : graph.at("nodes")) world.nodes.push_back({n.at("nodeId").get<int>(), point(n.at("position"))});
    for (const auto& e : graph.at("edges")) {
      world.edges.push_back({e.at("nodeA").get<int>(), e.at("nodeB").get<int>(), e.at("length").get<double>()});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed world JSON: ") + e.what());
  }
  validate_world(world);
  return world;
}

}  // namespace dialoc
