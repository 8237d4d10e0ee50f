#include "dialoc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/losses.hpp"
#include "dialoc/util.hpp"

namespace dialoc {

namespace {

using ojson = nlohmann::ordered_json;

std::vector<std::vector<std::pair<int, double>>> adjacency(const WorldMap& world) {
  std::vector<std::vector<std::pair<int, double>>> adj(world.nodes.size());
  for (const auto& e : world.edges) {
    adj[static_cast<std::size_t>(e.node_a)].emplace_back(e.node_b, e.length_m);
    adj[static_cast<std::size_t>(e.node_b)].emplace_back(e.node_a, e.length_m);
  }
  return adj;
}

}  // namespace

std::vector<double> shortest_paths(const WorldMap& world, int source) {
  const int n = static_cast<int>(world.nodes.size());
  if (source < 0 || source >= n) throw std::out_of_range("shortest_paths: node " + std::to_string(source));
  const auto adj = adjacency(world);
  std::vector<double> dist(static_cast<std::size_t>(n), kUnreachable);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[static_cast<std::size_t>(source)] = 0.0;
  queue.emplace(0.0, source);
  while (!queue.empty()) {
    const auto [d, u] = queue.top();
    queue.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    for (const auto& [v, w] : adj[static_cast<std::size_t>(u)]) {
      const double nd = d + w;
      if (nd < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = nd;
        queue.emplace(nd, v);
      }
    }
  }
  return dist;
}

GeodesicIndex::GeodesicIndex(const WorldMap& world) : n_(static_cast<int>(world.nodes.size())) {
  d_.reserve(static_cast<std::size_t>(n_) * n_);
  bool disconnected = false;
  for (int s = 0; s < n_; ++s) {
    const auto row = shortest_paths(world, s);
    for (double v : row) disconnected = disconnected || v == kUnreachable;
    d_.insert(d_.end(), row.begin(), row.end());
  }
  // Summation order differs between the two directions; keep one value per pair.
  for (int i = 0; i < n_; ++i) {
    for (int j = i + 1; j < n_; ++j) {
      const double v = std::min(d_[static_cast<std::size_t>(i) * n_ + j], d_[static_cast<std::size_t>(j) * n_ + i]);
      d_[static_cast<std::size_t>(i) * n_ + j] = d_[static_cast<std::size_t>(j) * n_ + i] = v;
    }
  }
  if (disconnected) spdlog::warn("world {}: waypoint graph is disconnected", world.world_id);
}

double GeodesicIndex::distance(int a, int b) const {
  if (a < 0 || a >= n_ || b < 0 || b >= n_) {
    throw std::out_of_range("geodesic distance: node pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  return d_[static_cast<std::size_t>(a) * n_ + b];
}

std::string GeodesicIndex::metric_violation(double tolerance) const {
  for (int i = 0; i < n_; ++i) {
    if (distance(i, i) != 0.0) return "nonzero diagonal at " + std::to_string(i);
    for (int j = 0; j < n_; ++j) {
      if (distance(i, j) != distance(j, i)) return "asymmetric pair " + std::to_string(i) + "," + std::to_string(j);
      if (i != j && !(distance(i, j) > 0.0)) return "non-positive distance " + std::to_string(i) + "," + std::to_string(j);
      for (int k = 0; k < n_; ++k) {
        if (distance(i, k) > distance(i, j) + distance(j, k) + tolerance) {
          return "triangle violated " + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k);
        }
      }
    }
  }
  return {};
}

int snap_to_node(Point pixel, const WorldMap& world) {
  if (world.nodes.empty()) throw DataError("snap_to_node: world " + world.world_id + " has no waypoints");
  if (pixel.x < 0 || pixel.y < 0 || pixel.x >= world.width_px || pixel.y >= world.height_px) {
    throw std::out_of_range("snap_to_node: pixel outside the map");
  }
  int best = -1;
  long best_d = 0;
  for (const auto& n : world.nodes) {
    const long dx = n.position.x - pixel.x, dy = n.position.y - pixel.y;
    const long d = dx * dx + dy * dy;
    if (best < 0 || d < best_d || (d == best_d && n.node_id < best)) {
      best = n.node_id;
      best_d = d;
    }
  }
  return best;
}

double acc_at_k(std::span<const double> les, double k) {
  if (les.empty()) throw std::invalid_argument("acc_at_k: empty list");
  if (k < 0) throw std::invalid_argument("acc_at_k: negative threshold");
  std::size_t hits = 0;
  for (double le : les) hits += le <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(les.size());
}

std::vector<std::pair<int, double>> cmc_curve(std::span<const double> les, int max_k) {
  std::vector<std::pair<int, double>> curve;
  for (int k = 0; k <= max_k; ++k) curve.emplace_back(k, acc_at_k(les, k));
  return curve;
}

double confidence_at_gt(const Tensor& logits, Point gt) {
  if (logits.rank() != 2 || gt.x < 0 || gt.y < 0 || gt.y >= logits.dim(0) || gt.x >= logits.dim(1)) {
    throw std::out_of_range("confidence_at_gt: pixel outside the heatmap");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits.data()) mx = std::max<double>(mx, v);
  double z = 0.0;
  for (float v : logits.data()) z += std::exp(v - mx);
  return std::exp(logits.at(gt.y, gt.x) - mx) / z;
}

std::string mode_name(EvalMode mode) { return mode == EvalMode::kSingleShot ? "singleShot" : "multiShot"; }

EvalMode mode_from_name(const std::string& name) {
  if (name == "singleShot") return EvalMode::kSingleShot;
  if (name == "multiShot") return EvalMode::kMultiShot;
  throw std::invalid_argument("unknown mode '" + name + "' (expected singleShot or multiShot)");
}

SampleRecord score_sample(const WorldMap& world, const GeodesicIndex& geo, const DialogSample& sample,
                          const std::vector<Tensor>& logits) {
  SampleRecord rec;
  rec.sample_id = sample.sample_id;
  rec.world_id = sample.world_id;
  rec.num_turns = sample.num_turns();
  rec.gt_node = sample.final_node;
  rec.gt_pixel = sample.final_pixel;
  for (const auto& h : logits) {
    const int h0 = h.dim(0), w0 = h.dim(1);
    TurnRecord t;
    t.pred_pixel = target_to_map(world, predict_location(h), h0, w0);
    t.pred_node = snap_to_node(t.pred_pixel, world);
    t.le_m = geo.distance(t.pred_node, rec.gt_node);
    t.confidence = confidence_at_gt(h, map_to_target(world, rec.gt_pixel, h0, w0));
    rec.turns.push_back(t);
  }
  return rec;
}

SplitSummary summarize(const std::vector<SampleRecord>& samples) {
  SplitSummary s;
  s.count = static_cast<int>(samples.size());
  if (samples.empty()) return s;
  std::vector<double> les;
  int exact = 0;
  double total = 0.0;
  for (const auto& r : samples) {
    const TurnRecord& last = r.turns.back();
    les.push_back(last.le_m);
    exact += last.pred_node == r.gt_node ? 1 : 0;
    total += last.le_m;
  }
  s.acc0 = static_cast<double>(exact) / s.count;
  s.acc5 = acc_at_k(les, 5.0);
  s.mean_le = total / s.count;
  return s;
}

std::map<int, TurnGroup> per_turn_analysis(const std::vector<SampleRecord>& samples) {
  std::map<int, TurnGroup> groups;
  for (const auto& r : samples) {
    TurnGroup& g = groups[r.num_turns];
    if (g.mean_le.size() < r.turns.size()) g.mean_le.resize(r.turns.size(), 0.0);
    ++g.count;
    for (std::size_t t = 0; t < r.turns.size(); ++t) g.mean_le[t] += r.turns[t].le_m;
  }
  for (auto& [T, g] : groups) {
    for (auto& v : g.mean_le) v /= g.count;
  }
  return groups;
}

void finalize_report(LocalizationReport& report) {
  report.summary = summarize(report.samples);
  report.per_turn = per_turn_analysis(report.samples);
  report.confidence.clear();
  std::vector<double> les;
  for (const auto& r : report.samples) {
    les.push_back(r.turns.back().le_m);
    report.confidence.push_back(r.turns.back().confidence);
  }
  report.cmc = les.empty() ? std::vector<std::pair<int, double>>{} : cmc_curve(les, report.cmc_max_k);
}

LocalizationReport evaluate(const DiaLocModel& model, const Dataset& dataset, const std::string& split,
                            const EvalOptions& options) {
  const ModelConfig& cfg = model.config();
  LocalizationReport report;
  report.method = options.method.empty() ? variant_name(cfg.variant) : options.method;
  report.mode = mode_name(options.mode);
  report.split = split;
  report.config_hash = options.config_hash;
  report.cmc_max_k = options.cmc_max_k;
  std::map<std::string, std::pair<Tensor, GeodesicIndex>> cache;
  NoGradGuard guard;
  for (const auto& sample : dataset.split(split)) {
    const WorldMap& world = dataset.world(sample.world_id);
    auto it = cache.find(sample.world_id);
    if (it == cache.end()) {
      it = cache.emplace(sample.world_id, std::make_pair(rasterize(world, cfg.map_size), GeodesicIndex(world))).first;
    }
    const Tensor& image = it->second.first;
    std::vector<Tensor> logits;
    if (options.mode == EvalMode::kMultiShot) {
      for (const auto& h : run_dialog(model, image, sample.turn_tokens).heatmaps) logits.push_back(h->value);
    } else {
      const auto tokens = tokenize_dialog(sample.turns, Vocabulary::standard(), cfg.text_len, cfg.max_text_tokens);
      logits.push_back(single_shot_forward(model, image, tokens)->value);
    }
    report.samples.push_back(score_sample(world, it->second.second, sample, logits));
  }
  finalize_report(report);
  return report;
}

std::string report_to_json(const LocalizationReport& report) {
  ojson j;
  j["report_version"] = 1;
  j["method"] = report.method;
  j["mode"] = report.mode;
  j["split"] = report.split;
  j["configHash"] = report.config_hash;
  j["summary"] = {{"count", report.summary.count},
                  {"acc0", report.summary.acc0},
                  {"acc5", report.summary.acc5},
                  {"meanLE", report.summary.mean_le}};
  j["cmcMaxK"] = report.cmc_max_k;
  ojson cmc = ojson::array();
  for (const auto& [k, rate] : report.cmc) cmc.push_back({k, rate});
  j["cmc"] = cmc;
  ojson groups = ojson::array();
  for (const auto& [T, g] : report.per_turn) groups.push_back({{"T", T}, {"count", g.count}, {"meanLE", g.mean_le}});
  j["perTurn"] = groups;
  j["confidenceAtGt"] = report.confidence;
  ojson samples = ojson::array();
  for (const auto& r : report.samples) {
    ojson turns = ojson::array();
    for (const auto& t : r.turns) {
      turns.push_back({{"predPixel", {t.pred_pixel.x, t.pred_pixel.y}},
                       {"predNode", t.pred_node},
                       {"le", t.le_m},
                       {"confidence", t.confidence}});
    }
    samples.push_back({{"sampleId", r.sample_id},
                       {"worldId", r.world_id},
                       {"T", r.num_turns},
                       {"gtNode", r.gt_node},
                       {"gtPixel", {r.gt_pixel.x, r.gt_pixel.y}},
                       {"turns", turns}});
  }
  j["samples"] = samples;
  return j.dump(2);
}

LocalizationReport report_from_json(const std::string& text) {
  try {
    const auto j = ojson::parse(text);
    if (j.at("report_version").get<int>() != 1) throw DataError("unsupported report_version");
    LocalizationReport r;
    r.method = j.at("method").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.config_hash = j.value("configHash", "");
    r.cmc_max_k = j.at("cmcMaxK").get<int>();
    for (const auto& s : j.at("samples")) {
      SampleRecord rec;
      rec.sample_id = s.at("sampleId").get<std::string>();
      rec.world_id = s.at("worldId").get<std::string>();
      rec.num_turns = s.at("T").get<int>();
      rec.gt_node = s.at("gtNode").get<int>();
      rec.gt_pixel = {s.at("gtPixel").at(0).get<int>(), s.at("gtPixel").at(1).get<int>()};
      for (const auto& t : s.at("turns")) {
        TurnRecord tr;
        tr.pred_pixel = {t.at("predPixel").at(0).get<int>(), t.at("predPixel").at(1).get<int>()};
        tr.pred_node = t.at("predNode").get<int>();
        tr.le_m = t.at("le").get<double>();
        tr.confidence = t.at("confidence").get<double>();
        rec.turns.push_back(tr);
      }
      if (rec.turns.empty()) throw DataError("sample " + rec.sample_id + " has no turns");
      r.samples.push_back(std::move(rec));
    }
    finalize_report(r);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string report_csv(const std::vector<LocalizationReport>& reports) {
  std::ostringstream out;
  out << "method,mode,split,Acc0,Acc5,meanLE\n";
  for (const auto& r : reports) {
    out << r.method << ',' << r.mode << ',' << r.split << ',' << format_fixed(r.summary.acc0, 6) << ','
        << format_fixed(r.summary.acc5, 6) << ',' << format_fixed(r.summary.mean_le, 6) << '\n';
  }
  return out.str();
}

std::string report_table(const std::vector<LocalizationReport>& reports) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "method" << std::setw(12) << "mode" << std::setw(11) << "split"
      << std::right << std::setw(8) << "Acc0" << std::setw(8) << "Acc5" << std::setw(9) << "LE(m)" << std::setw(7)
      << "n" << '\n';
  for (const auto& r : reports) {
    out << std::left << std::setw(14) << r.method << std::setw(12) << r.mode << std::setw(11) << r.split
        << std::right << std::setw(8) << format_fixed(100.0 * r.summary.acc0, 2) << std::setw(8)
        << format_fixed(100.0 * r.summary.acc5, 2) << std::setw(9) << format_fixed(r.summary.mean_le, 2)
        << std::setw(7) << r.summary.count << '\n';
  }
  return out.str();
}

MonteCarloEstimate uniform_baseline_acc(const Dataset& dataset, const std::string& split, double k, int h0, int w0,
                                        int draws, std::uint64_t seed) {
  const auto& samples = dataset.split(split);
  if (samples.empty() || draws < 1) throw std::invalid_argument("uniform_baseline_acc: nothing to sample");
  std::map<std::string, GeodesicIndex> geo;
  Rng rng(seed);
  int hits = 0;
  for (int i = 0; i < draws; ++i) {
    const auto& s = samples[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(samples.size()) - 1))];
    const WorldMap& world = dataset.world(s.world_id);
    auto it = geo.find(s.world_id);
    if (it == geo.end()) it = geo.emplace(s.world_id, GeodesicIndex(world)).first;
    const Point p{rng.uniform_int(0, w0 - 1), rng.uniform_int(0, h0 - 1)};
    const int node = snap_to_node(target_to_map(world, p, h0, w0), world);
    hits += it->second.distance(node, s.final_node) <= k ? 1 : 0;
  }
  MonteCarloEstimate e;
  e.draws = draws;
  e.mean = static_cast<double>(hits) / draws;
  e.stderr_ = std::sqrt(e.mean * (1.0 - e.mean) / draws);
  return e;
}

double uniform_baseline_acc_exact(const Dataset& dataset, const std::string& split, double k, int h0, int w0) {
  const auto& samples = dataset.split(split);
  if (samples.empty()) throw std::invalid_argument("uniform_baseline_acc_exact: empty split");
  double total = 0.0;
  for (const auto& s : samples) {
    const WorldMap& world = dataset.world(s.world_id);
    const auto dist = shortest_paths(world, s.final_node);
    int hits = 0;
    for (int y = 0; y < h0; ++y) {
      for (int x = 0; x < w0; ++x) {
        const int node = snap_to_node(target_to_map(world, {x, y}, h0, w0), world);
        hits += dist[static_cast<std::size_t>(node)] <= k ? 1 : 0;
      }
    }
    total += static_cast<double>(hits) / (h0 * w0);
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace dialoc
