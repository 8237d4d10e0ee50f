#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dialoc/tensor.hpp"

namespace dialoc {

struct Point {
  int x = 0;  // column
  int y = 0;  // row
  bool operator==(const Point&) const = default;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(Point p) const { return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1; }
  bool overlaps(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
  Point center() const { return {(x0 + x1) / 2, (y0 + y1) / 2}; }
  bool operator==(const Rect&) const = default;
};

struct Room {
  int room_id = 0;
  std::string label;
  Rect rect;
};

struct Landmark {
  std::string label;
  int room_id = 0;
  Point position;
};

struct WaypointNode {
  int node_id = 0;
  Point position;
};

struct WaypointEdge {
  int node_a = 0;
  int node_b = 0;
  double length_m = 0.0;
};

/// A synthetic single floor. Room-center waypoints come first (node id == room id),
/// doorway waypoints follow.
struct WorldMap {
  std::string world_id;
  int width_px = 0;
  int height_px = 0;
  double meters_per_pixel = 0.25;
  std::vector<Room> rooms;
  std::vector<Landmark> landmarks;
  std::vector<WaypointNode> nodes;
  std::vector<WaypointEdge> edges;

  /// Room whose rectangle contains the point, or -1.
  int room_at(Point p) const;
  /// True when the node sits at its room's center.
  bool is_room_center(int node_id) const;
  /// Room-center node id for a room.
  int center_node(int room_id) const;
  /// Rooms joined to `room_id` through a doorway.
  std::vector<int> door_neighbors(int room_id) const;
  std::vector<int> node_neighbors(int node_id) const;
  bool connected() const;
};

/// Throws DataError describing the first violated invariant.
void validate_world(const WorldMap& world);

/// Room labels, in palette order.
const std::vector<std::string>& default_room_vocabulary();
/// Landmark labels, in palette order.
const std::vector<std::string>& default_landmark_vocabulary();

struct WorldParams {
  int grid_rows = 3;
  int grid_cols = 3;
  int size_px = 64;
  double meters_per_pixel = 0.25;
  std::vector<std::string> room_vocab = default_room_vocabulary();
  std::vector<std::string> landmark_vocab = default_landmark_vocabulary();
  int min_landmarks = 1;
  int max_landmarks = 3;
  double extra_door_probability = 0.35;
};

WorldMap generate_world(std::uint64_t seed, const WorldParams& params);

/// Hand-built 2x2 floor with two bedrooms (north-west with a lamp, south-west with
/// a bed), a kitchen and an office; id "world_demo".
WorldMap demo_world();

// ---- rendering ----------------------------------------------------------------
//
// Palette (RGB in [0,1]): background white, walls black, doorway gaps use the
// room's floor color. Room labels map to room_palette()[i] and landmark labels
// to landmark_palette()[i] where i is the label's index in the default vocabularies.

using Rgb = std::array<float, 3>;
constexpr Rgb kBackgroundColor{1.0f, 1.0f, 1.0f};
constexpr Rgb kWallColor{0.0f, 0.0f, 0.0f};
const std::vector<Rgb>& room_palette();
const std::vector<Rgb>& landmark_palette();
Rgb room_color(const std::string& label);
Rgb landmark_color(const std::string& label);

/// Renders [3, size_px, size_px]; size_px must be 64 or 224.
Tensor rasterize(const WorldMap& world, int size_px);

// ---- serialization --------------------------------------------------------------

std::string world_to_json(const WorldMap& world);
WorldMap world_from_json(const std::string& text);

}  // namespace dialoc
