#include <gtest/gtest.h>

#include <cmath>
#include <queue>
#include <set>

#include "dialoc/util.hpp"
#include "dialoc/world.hpp"

using namespace dialoc;

namespace {

// Independent BFS connectivity check over the edge list.
bool bfs_connected(const WorldMap& w) {
  if (w.nodes.empty()) return false;
  std::vector<std::vector<int>> adj(w.nodes.size());
  for (const auto& e : w.edges) {
    adj[e.node_a].push_back(e.node_b);
    adj[e.node_b].push_back(e.node_a);
  }
  std::vector<char> seen(w.nodes.size(), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    const int n = q.front();
    q.pop();
    for (int m : adj[n]) {
      if (!seen[m]) {
        seen[m] = 1;
        ++count;
        q.push(m);
      }
    }
  }
  return count == w.nodes.size();
}

bool inside_some_room(const WorldMap& w, Point p) {
  for (const auto& r : w.rooms) {
    if (p.x >= r.rect.x0 && p.x < r.rect.x1 && p.y >= r.rect.y0 && p.y < r.rect.y1) return true;
  }
  return false;
}

}  // namespace

TEST(GenerateWorld, Seed7Grid3x3) {
  const WorldMap w = generate_world(7, WorldParams{});
  EXPECT_EQ(w.rooms.size(), 9u);
  EXPECT_TRUE(bfs_connected(w));
}

TEST(GenerateWorld, SameSeedIsBitwiseIdentical) {
  EXPECT_EQ(world_to_json(generate_world(42, WorldParams{})), world_to_json(generate_world(42, WorldParams{})));
  EXPECT_NE(world_to_json(generate_world(42, WorldParams{})), world_to_json(generate_world(43, WorldParams{})));
}

TEST(GenerateWorld, EdgeLengthsScaleWithMetersPerPixel) {
  WorldParams params;
  params.meters_per_pixel = 0.1;
  const WorldMap w = generate_world(11, params);
  for (const auto& e : w.edges) {
    const Point a = w.nodes[e.node_a].position, b = w.nodes[e.node_b].position;
    EXPECT_NEAR(e.length_m, std::hypot(a.x - b.x, a.y - b.y) * 0.1, 1e-6);
  }
  // Two nodes 50 px apart on a straight line.
  WorldMap manual;
  manual.world_id = "manual";
  manual.width_px = manual.height_px = 64;
  manual.meters_per_pixel = 0.1;
  manual.rooms = {{0, "bedroom", {0, 0, 64, 64}}};
  manual.nodes = {{0, {5, 10}}, {1, {55, 10}}};
  manual.edges = {{0, 1, 5.0}};
  EXPECT_NO_THROW(validate_world(manual));
  manual.edges[0].length_m = 5.01;
  EXPECT_THROW(validate_world(manual), DataError);
}

TEST(GenerateWorld, InvariantsAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    WorldParams params;
    params.grid_rows = 2 + static_cast<int>(seed % 3);
    params.grid_cols = 2 + static_cast<int>((seed / 3) % 2);
    const WorldMap w = generate_world(seed, params);
    ASSERT_EQ(static_cast<int>(w.rooms.size()), params.grid_rows * params.grid_cols);
    for (std::size_t i = 0; i < w.rooms.size(); ++i) {
      const Rect& a = w.rooms[i].rect;
      EXPECT_TRUE(a.x0 >= 0 && a.y0 >= 0 && a.x1 <= w.width_px && a.y1 <= w.height_px);
      for (std::size_t j = i + 1; j < w.rooms.size(); ++j) {
        const Rect& b = w.rooms[j].rect;
        const bool disjoint = a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0;
        EXPECT_TRUE(disjoint) << "seed " << seed << " rooms " << i << "," << j;
      }
    }
    for (const auto& n : w.nodes) EXPECT_TRUE(inside_some_room(w, n.position));
    EXPECT_TRUE(bfs_connected(w)) << "seed " << seed;
    std::set<std::string> labels;
    bool duplicate = false;
    for (const auto& r : w.rooms) duplicate = duplicate || !labels.insert(r.label).second;
    EXPECT_TRUE(duplicate) << "seed " << seed;
    for (const auto& r : w.rooms) {
      int count = 0;
      for (const auto& l : w.landmarks) count += l.room_id == r.room_id;
      EXPECT_GE(count, 1);
      EXPECT_LE(count, 3);
    }
  }
}

TEST(GenerateWorld, RejectsBadParameters) {
  WorldParams p;
  p.grid_rows = 1;
  EXPECT_THROW(generate_world(1, p), std::invalid_argument);
  WorldParams q;
  q.meters_per_pixel = 0.0;
  EXPECT_THROW(generate_world(1, q), std::invalid_argument);
}

TEST(Rasterize, EmptyRoomWorldUsesOnlyThreeColors) {
  WorldMap w;
  w.world_id = "empty";
  w.width_px = w.height_px = 64;
  w.rooms = {{0, "kitchen", {8, 8, 40, 40}}};
  w.nodes = {{0, {24, 24}}};
  const Tensor img = rasterize(w, 64);
  const Rgb floor = room_color("kitchen");
  std::set<std::tuple<float, float, float>> colors;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) colors.insert({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
  const std::set<std::tuple<float, float, float>> expected{{kBackgroundColor[0], kBackgroundColor[1], kBackgroundColor[2]},
                                                           {kWallColor[0], kWallColor[1], kWallColor[2]},
                                                           {floor[0], floor[1], floor[2]}};
  EXPECT_EQ(colors, expected);
}

TEST(Rasterize, DeterministicAndLandmarkColored) {
  const WorldMap w = generate_world(5, WorldParams{});
  for (int size : {64, 224}) {
    const Tensor a = rasterize(w, size);
    EXPECT_EQ(a, rasterize(w, size));
    EXPECT_EQ(a.shape(), (Shape{3, size, size}));
    for (float v : a.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  const Tensor img = rasterize(w, 64);
  for (const auto& l : w.landmarks) {
    const Rgb c = landmark_color(l.label);
    for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(img.at(ch, l.position.y, l.position.x), c[ch]) << l.label;
  }
  EXPECT_THROW(rasterize(w, 100), std::invalid_argument);
}

TEST(WorldJson, RoundTripAndSixDecimals) {
  const WorldMap w = generate_world(9, WorldParams{});
  const std::string text = world_to_json(w);
  EXPECT_NE(text.find("\"metersPerPixel\":0.250000"), std::string::npos);
  const WorldMap back = world_from_json(text);
  EXPECT_EQ(world_to_json(back), text);
  EXPECT_THROW(world_from_json("{\"worldId\": 3}"), DataError);
}

TEST(DemoWorld, TwoBedroomsDistinguishedByLandmark) {
  const WorldMap w = demo_world();
  int bedrooms = 0;
  for (const auto& r : w.rooms) bedrooms += r.label == "bedroom";
  EXPECT_EQ(bedrooms, 2);
  EXPECT_TRUE(bfs_connected(w));
}
