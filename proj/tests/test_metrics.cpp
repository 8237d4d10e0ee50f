#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "dialoc/metrics.hpp"
#include "oracles.hpp"
#include "toy_model.hpp"

using namespace dialoc;
using dialoc::testing::brute_force_path;
using dialoc::testing::graph_world;

namespace {

int brute_force_snap(Point p, const WorldMap& w) {
  int best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < w.nodes.size(); ++i) {
    const double d = std::hypot(w.nodes[i].position.x - p.x, w.nodes[i].position.y - p.y);
    if (d < best_d) {
      best_d = d;
      best = w.nodes[i].node_id;
    }
  }
  return best;
}

}  // namespace

TEST(Snap, ExactAndTies) {
  WorldMap w = graph_world(0, {});
  w.nodes = {{0, {10, 10}}, {1, {20, 10}}, {2, {30, 10}}, {3, {40, 40}}};
  EXPECT_EQ(snap_to_node({40, 40}, w), 3);
  EXPECT_EQ(snap_to_node({25, 10}, w), 1);  // equidistant between 1 and 2
  EXPECT_EQ(snap_to_node({15, 12}, w), 0);
  EXPECT_THROW(snap_to_node({64, 0}, w), std::out_of_range);
  w.nodes.clear();
  EXPECT_THROW(snap_to_node({1, 1}, w), DataError);
}

TEST(Snap, MatchesExhaustiveOracle) {
  Rng rng(5);
  for (int wi = 0; wi < 10; ++wi) {
    const WorldMap w = generate_world(100 + wi, WorldParams{});
    for (int i = 0; i < 100; ++i) {
      const Point p{rng.uniform_int(0, 63), rng.uniform_int(0, 63)};
      EXPECT_EQ(snap_to_node(p, w), brute_force_snap(p, w));
    }
  }
}

TEST(Geodesic, Examples) {
  const WorldMap w = graph_world(3, {{0, 1, 5.0}, {1, 2, 2.5}});
  const GeodesicIndex g(w);
  EXPECT_EQ(g.distance(1, 1), 0.0);
  EXPECT_EQ(g.distance(0, 1), 5.0);
  EXPECT_EQ(g.distance(2, 0), 7.5);
  const WorldMap split = graph_world(3, {{0, 1, 1.0}});
  EXPECT_EQ(GeodesicIndex(split).distance(0, 2), kUnreachable);
  EXPECT_THROW(g.distance(0, 3), std::out_of_range);
}

TEST(Geodesic, DijkstraEqualsSimplePathEnumeration) {
  Rng rng(77);
  for (int gi = 0; gi < 50; ++gi) {
    const WorldMap w = dialoc::testing::random_graph_world(rng);
    const int n = static_cast<int>(w.nodes.size());
    const GeodesicIndex g(w);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const double want = brute_force_path(w, a, b);
        if (want == kUnreachable) {
          EXPECT_EQ(g.distance(a, b), kUnreachable);
        } else {
          EXPECT_NEAR(g.distance(a, b), want, 1e-9);
        }
      }
  }
}

TEST(Geodesic, MetricAxiomsOnGeneratedWorlds) {
  for (int seed = 0; seed < 50; ++seed) {
    const WorldMap w = generate_world(seed, WorldParams{});
    EXPECT_EQ(GeodesicIndex(w).metric_violation(), "") << w.world_id;
  }
  EXPECT_EQ(GeodesicIndex(demo_world()).metric_violation(), "");
}

TEST(Accuracy, Examples) {
  const std::vector<double> les{0, 3, 7};
  EXPECT_DOUBLE_EQ(acc_at_k(les, 5), 2.0 / 3.0);
  EXPECT_EQ(acc_at_k(les, kUnreachable), 1.0);
  EXPECT_DOUBLE_EQ(acc_at_k(les, 0), 1.0 / 3.0);
  EXPECT_THROW(acc_at_k(std::vector<double>{}, 5), std::invalid_argument);
  EXPECT_THROW(acc_at_k(les, -1), std::invalid_argument);
}

TEST(Cmc, FlatMonotoneAndConsistent) {
  const std::vector<double> zeros(7, 0.0);
  for (const auto& [k, rate] : cmc_curve(zeros, 10)) EXPECT_EQ(rate, 1.0);
  Rng rng(8);
  std::vector<double> les;
  for (int i = 0; i < 200; ++i) les.push_back(rng.uniform(0, 25));
  const auto curve = cmc_curve(les, 20);
  ASSERT_EQ(curve.size(), 21u);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].second, curve[i - 1].second);
  EXPECT_EQ(curve[5].second, acc_at_k(les, 5));
}

TEST(Confidence, Examples) {
  Tensor onehot({64, 64}, -50.0f);
  onehot.at(3, 4) = 50.0f;
  EXPECT_NEAR(confidence_at_gt(onehot, {4, 3}), 1.0, 1e-12);
  EXPECT_NEAR(confidence_at_gt(Tensor({64, 64}, 2.0f), {10, 10}), 1.0 / 4096, 1e-15);
  Rng rng(3);
  const Tensor r = dialoc::testing::random_tensor({8, 8}, rng, -5, 5);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double c = confidence_at_gt(r, {x, y});
      EXPECT_GT(c, 0.0);
      EXPECT_LT(c, 1.0);
    }
  EXPECT_THROW(confidence_at_gt(r, {8, 0}), std::out_of_range);
}

TEST(PerTurn, ExampleAndPartition) {
  SampleRecord a;
  a.num_turns = 2;
  a.turns = {{{}, 0, 8.0, 0.1}, {{}, 0, 2.0, 0.2}};
  SampleRecord b;
  b.num_turns = 1;
  b.turns = {{{}, 0, 4.0, 0.5}};
  const auto groups = per_turn_analysis({a, b, b});
  EXPECT_EQ(groups.at(2).mean_le, (std::vector<double>{8.0, 2.0}));
  EXPECT_EQ(groups.at(1).count + groups.at(2).count, 3);
}

TEST(PerTurn, ConsistentSetOracleLocalizerImproves) {
  DatasetParams params;
  params.counts = {300, 1, 1};
  const Dataset ds = build_splits(21, params);
  std::vector<SampleRecord> records;
  for (const auto& s : ds.split("train")) {
    const WorldMap& w = ds.world(s.world_id);
    const GeodesicIndex geo(w);
    std::vector<Tensor> logits;
    for (int t = 1; t <= s.num_turns(); ++t) {
      const std::vector<Fact> facts(s.facts.begin(), s.facts.begin() + t);
      Tensor h({64, 64}, -1e4f);
      for (int node : consistent_nodes(w, facts)) {
        const Point p = map_to_target(w, w.nodes[node].position, 64, 64);
        h.at(p.y, p.x) = 0.0f;
      }
      logits.push_back(h);
    }
    records.push_back(score_sample(w, geo, s, logits));
  }
  for (const auto& [T, g] : per_turn_analysis(records)) {
    for (std::size_t t = 1; t < g.mean_le.size(); ++t) EXPECT_LE(g.mean_le[t], g.mean_le[t - 1]) << "T=" << T;
    EXPECT_EQ(g.mean_le.back(), 0.0) << "T=" << T;
  }
}

TEST(Report, EvaluateRoundTripAndModes) {
  DatasetParams params;
  params.counts = {4, 4, 6};
  const Dataset ds = build_splits(3, params);
  const DiaLocModel model(ModelConfig{}, 4);
  EvalOptions opt;
  opt.config_hash = "abc";
  const auto multi = evaluate(model, ds, "valUnseen", opt);
  ASSERT_EQ(multi.samples.size(), 6u);
  for (std::size_t i = 0; i < multi.samples.size(); ++i) {
    EXPECT_EQ(static_cast<int>(multi.samples[i].turns.size()), ds.split("valUnseen")[i].num_turns());
  }
  opt.mode = EvalMode::kSingleShot;
  const auto single = evaluate(model, ds, "valUnseen", opt);
  for (const auto& r : single.samples) EXPECT_EQ(r.turns.size(), 1u);

  for (const auto* r : {&multi, &single}) {
    EXPECT_LE(r->summary.acc0, r->summary.acc5);
    const auto back = report_from_json(report_to_json(*r));
    EXPECT_EQ(back.summary, r->summary);
    EXPECT_EQ(back.cmc, r->cmc);
    EXPECT_EQ(report_to_json(back), report_to_json(*r));
  }
  const std::string csv = report_csv({multi, single});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,mode,split,Acc0,Acc5,meanLE");
  EXPECT_NE(csv.find("explicit,singleShot,valUnseen,"), std::string::npos);
  EXPECT_THROW(report_from_json("{\"report_version\":2}"), DataError);
  EXPECT_THROW(mode_from_name("both"), std::invalid_argument);
}

TEST(UniformBaseline, MonteCarloMatchesExactEnumeration) {
  DatasetParams params;
  params.counts = {1, 1, 50};
  const Dataset ds = build_splits(9, params);
  const double exact = uniform_baseline_acc_exact(ds, "valUnseen", 5.0, 64, 64);
  const auto mc = uniform_baseline_acc(ds, "valUnseen", 5.0, 64, 64, 100000, 1234);
  EXPECT_NEAR(mc.mean, exact, 2 * mc.stderr_);
  EXPECT_GT(exact, 0.0);
  EXPECT_LT(exact, 1.0);
}
