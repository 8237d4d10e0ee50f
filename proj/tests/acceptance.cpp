// Acceptance suite: runs criteria 1-10 and prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/dataset.hpp"
#include "dialoc/losses.hpp"
#include "dialoc/metrics.hpp"
#include "dialoc/model.hpp"
#include "dialoc/service.hpp"
#include "dialoc/train.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"
#include "toy_model.hpp"

using namespace dialoc;
using namespace dialoc::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 100;
constexpr std::uint64_t kDataSeed = 11;
constexpr std::uint64_t kTrainSeed = 1;

std::string format(const char* fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct TrainedRun {
  Variant variant = Variant::kExplicit;
  fs::path dir;
  TrainResult result;
  std::unique_ptr<DiaLocModel> model;
  LocalizationReport report;
  double seconds = 0.0;
};

/// State handed from earlier criteria to later ones.
struct Context {
  fs::path work;
  std::unique_ptr<Dataset> generalization;
  fs::path overfit_checkpoint;
  std::map<Variant, TrainedRun> runs;
  std::vector<LocalizationReport> reports;

  const Dataset& dataset() {
    if (!generalization) {
      DatasetParams params;
      params.counts = {400, 50, 50};
      generalization = std::make_unique<Dataset>(build_splits(kDataSeed, params));
    }
    return *generalization;
  }
};

// ---- 1. gradients ----------------------------------------------------------------------

Outcome criterion1(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  std::size_t op_failures = 0;
  for (const auto& c : op_cases()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(1000 + seed);
      auto [fn, inputs] = c.make(rng);
      const double err = grad_check(fn, inputs, rng).max_rel_error;
      if (err > worst_op) {
        worst_op = err;
        worst_name = c.name;
      }
      if (!(err <= 1e-3)) ++op_failures;
    }
  }
  double worst_e2e = 0.0;
  std::size_t e2e_failures = 0;
  for (Variant variant : {Variant::kExplicit, Variant::kImplicit}) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      const auto r = end_to_end_grad_check(variant, seed);
      worst_e2e = std::max(worst_e2e, r.max_rel_error);
      if (!(r.max_rel_error <= 1e-2) || r.max_abs_grad <= 0.0) ++e2e_failures;
    }
  }
  const double secs = seconds_since(t0);
  return {op_failures == 0 && e2e_failures == 0 && secs < 120.0,
          format("%zu ops x %d seeds worst %.2e (%s), e2e explicit+implicit x %d seeds worst %.2e, %zu+%zu failures, "
                 "%.1fs",
                 op_cases().size(), kSeeds, worst_op, worst_name.c_str(), kSeeds, worst_e2e, op_failures,
                 e2e_failures, secs)};
}

// ---- 2. loss identities ------------------------------------------------------------------

Outcome criterion2(Context&) {
  double worst = 0.0;
  double min_kl = 1e300;
  bool beta_exact = true;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(500 + seed);
    const int T = 1 + seed % kMaxTurns;
    const Tensor target = random_distribution({8, 8}, rng);
    std::vector<Var> heat;
    std::vector<double> kl;
    for (int t = 0; t < T; ++t) {
      heat.push_back(constant(random_tensor({8, 8}, rng, -3, 3)));
      kl.push_back(kl_oracle(heat.back()->value, target));
      min_kl = std::min<double>(min_kl, kl_loss(heat.back(), target)->value[0]);
    }
    Tensor identity = target;
    for (auto& v : identity.data()) v = std::log(v);
    worst = std::max(worst, std::abs(static_cast<double>(kl_loss(constant(identity), target)->value[0])));

    const std::vector<const Tensor*> targets{&target};
    worst = std::max(worst, std::abs(multishot_loss(heat, targets, 0.0)->value[0] - kl.back() / T));
    double mean = 0.0;
    for (double k : kl) mean += k / T;
    worst = std::max(worst, std::abs(multishot_loss(heat, targets, 1.0)->value[0] - mean));

    const TargetHeatmap th = make_target_px(8, 8, {rng.uniform_int(0, 7), rng.uniform_int(0, 7)}, 1.0, 1.0);
    const LossTerms terms = total_loss(heat, {&th}, LossConfig{rng.uniform(0.0, 1.0), 0.0, false});
    beta_exact = beta_exact && terms.total->value == terms.multishot->value;
  }
  return {worst <= 1e-6 && min_kl >= -1e-6 && beta_exact,
          format("%d seeds: max identity error %.2e, min KL %.2e, beta=0 exact %s", kSeeds, worst, min_kl,
                 beta_exact ? "yes" : "no")};
}

// ---- 3. target contract -------------------------------------------------------------------

Outcome criterion3(Context&) {
  DatasetParams params;
  params.counts = {500, 1, 1};
  const Dataset ds = build_splits(17, params);
  int checked = 0, good = 0;
  double worst_sum = 0.0;
  for (const auto& s : ds.split("train")) {
    const WorldMap& w = ds.world(s.world_id);
    const TargetHeatmap t = make_target(w, s.final_pixel, 3.0, 64, 64);
    double total = 0.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < t.heat.numel(); ++i) {
      total += t.heat[i];
      if (t.heat[i] > t.heat[best]) best = i;
    }
    // The map and target grids are both 64 px, so the argmax must sit on the GT pixel itself.
    const bool argmax_ok = static_cast<int>(best) / 64 == s.final_pixel.y && static_cast<int>(best) % 64 == s.final_pixel.x;
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    ++checked;
    if (argmax_ok && std::abs(total - 1.0) <= 1e-6) ++good;
  }
  return {checked == 500 && good == checked,
          format("%d/%d samples sum to 1 and peak at GT (max |sum-1| %.2e)", good, checked, worst_sum)};
}

// ---- 4. geodesic oracle --------------------------------------------------------------------

std::string metric_axioms(const WorldMap& w) {
  const GeodesicIndex g(w);
  const int n = static_cast<int>(w.nodes.size());
  for (int a = 0; a < n; ++a) {
    if (g.distance(a, a) != 0.0) return format("d(%d,%d) != 0", a, a);
    for (int b = 0; b < n; ++b) {
      const double ab = g.distance(a, b);
      if (ab < 0.0 || ab != g.distance(b, a)) return format("asymmetric at (%d,%d)", a, b);
      if (a != b && ab == 0.0) return format("d(%d,%d) == 0", a, b);
      for (int c = 0; c < n; ++c)
        if (ab > g.distance(a, c) + g.distance(c, b) + 1e-9) return format("triangle at (%d,%d,%d)", a, b, c);
    }
  }
  return "";
}

Outcome criterion4(Context& ctx) {
  Rng rng(77);
  int pairs = 0, mismatches = 0;
  for (int gi = 0; gi < 50; ++gi) {
    const WorldMap w = random_graph_world(rng);
    const GeodesicIndex g(w);
    const int n = static_cast<int>(w.nodes.size());
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const double want = brute_force_path(w, a, b);
        const double got = g.distance(a, b);
        const bool ok = want == kUnreachable ? got == kUnreachable : std::abs(got - want) <= 1e-9;
        ++pairs;
        if (!ok) ++mismatches;
      }
  }
  int worlds = 0;
  std::string violation;
  std::vector<const WorldMap*> all;
  for (const auto& [id, w] : ctx.dataset().worlds) all.push_back(&w);
  const WorldMap demo = demo_world();
  all.push_back(&demo);
  for (const WorldMap* w : all) {
    ++worlds;
    const std::string v = metric_axioms(*w);
    if (!v.empty() && violation.empty()) violation = w->world_id + ": " + v;
  }
  return {mismatches == 0 && violation.empty(),
          format("50 graphs, %d pairs, %d mismatches; metric axioms on %d worlds%s%s", pairs, mismatches, worlds,
                 violation.empty() ? "" : ", violation ", violation.c_str())};
}

// ---- 5. overfit -----------------------------------------------------------------------------

Outcome criterion5(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetParams params;
  params.counts = {8, 1, 1};
  const Dataset ds = build_splits(5, params);
  TrainConfig c;
  c.model.fusion_depth = 1;
  c.epochs = 500;
  c.batch_size = 8;
  c.max_steps = 500;
  c.eval_every = 10;
  c.eval_splits = {"train"};
  c.best_split = "train";
  c.augmentation.enabled = false;
  double acc0 = 0.0;
  int steps = 0;
  TrainHooks hooks;
  hooks.on_eval = [&](const EpochEval& e) {
    acc0 = e.summary.acc0;
    steps = e.step;
    return acc0 < 1.0;
  };
  const TrainResult r = train(c, ds, ctx.work / "overfit", hooks);
  ctx.overfit_checkpoint = r.last_checkpoint;
  const auto model = load_checkpoint(r.last_checkpoint);
  const LocalizationReport report = evaluate(*model, ds, "train", {});
  ctx.reports.push_back(report);
  const double secs = seconds_since(t0);
  return {report.summary.acc0 == 1.0 && steps <= 500 && secs < 300.0,
          format("train Acc0 %.0f%% after %d steps, %.1fs", 100.0 * report.summary.acc0, steps, secs)};
}

// ---- 6. generalization smoke -----------------------------------------------------------------

TrainConfig generalization_config(Variant variant) {
  TrainConfig c;
  c.seed = kTrainSeed;
  c.model.variant = variant;
  return c;
}

TrainedRun train_variant(Context& ctx, Variant variant, const std::string& tag) {
  TrainedRun run;
  run.variant = variant;
  run.dir = ctx.work / ("gen_" + tag);
  fs::remove_all(run.dir);
  const auto t0 = std::chrono::steady_clock::now();
  run.result = train(generalization_config(variant), ctx.dataset(), run.dir);
  run.model = load_checkpoint(run.result.last_checkpoint);
  EvalOptions options;
  options.config_hash = run.result.config_hash;
  run.report = evaluate(*run.model, ctx.dataset(), "valUnseen", options);
  run.seconds = seconds_since(t0);
  return run;
}

struct Refinement {
  int dialogs = 0;
  int improved = 0;
  double first_le = 0.0;
  double final_le = 0.0;
};

/// Paired turn-1 vs final-turn LE over multi-turn dialogs whose first fact leaves >= 2 nodes.
Refinement refinement(const Dataset& ds, const LocalizationReport& report) {
  Refinement r;
  const auto& samples = ds.split(report.split);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const DialogSample& s = samples[i];
    const SampleRecord& rec = report.samples[i];
    if (s.num_turns() < 2 || rec.sample_id != s.sample_id) continue;
    if (consistent_nodes(ds.world(s.world_id), {s.facts.front()}).size() < 2) continue;
    const double first = rec.turns.front().le_m, last = rec.turns.back().le_m;
    ++r.dialogs;
    r.first_le += first;
    r.final_le += last;
    if (last < first || last == 0.0) ++r.improved;
  }
  if (r.dialogs > 0) {
    r.first_le /= r.dialogs;
    r.final_le /= r.dialogs;
  }
  return r;
}

Outcome criterion6(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset& ds = ctx.dataset();
  TrainedRun& run = ctx.runs[Variant::kExplicit] = train_variant(ctx, Variant::kExplicit, "explicit");
  ctx.reports.push_back(run.report);
  const Refinement r = refinement(ds, run.report);
  const MonteCarloEstimate mc = uniform_baseline_acc(ds, "valUnseen", 5.0, 64, 64, 100000, 7);
  const double secs = seconds_since(t0);
  const bool a = r.dialogs > 0 && r.final_le < r.first_le && r.improved * 5 >= r.dialogs * 4;
  const bool b = run.report.summary.acc5 >= 3.0 * mc.mean;
  return {a && b && secs < 1800.0,
          format("(a) %s: %d dialogs, turn-1 LE %.2f m -> final %.2f m, %d improved (%.0f%%); (b) %s: Acc5 %.1f%% vs "
                 "3 x baseline %.1f%% (%.2fx); %.0fs",
                 a ? "ok" : "fail", r.dialogs, r.first_le, r.final_le, r.improved,
                 r.dialogs ? 100.0 * r.improved / r.dialogs : 0.0, b ? "ok" : "fail", 100.0 * run.report.summary.acc5,
                 300.0 * mc.mean, run.report.summary.acc5 / mc.mean, secs)};
}

// ---- 7. variant parity -----------------------------------------------------------------------

std::string report_problem(const LocalizationReport& report, std::size_t expected) {
  if (report.samples.size() != expected || report.summary.count != static_cast<int>(expected)) return "sample count";
  for (double v : {report.summary.acc0, report.summary.acc5})
    if (!(v >= 0.0 && v <= 1.0)) return "accuracy range";
  if (!std::isfinite(report.summary.mean_le) || report.summary.mean_le < 0.0) return "mean LE";
  if (report.cmc.size() != static_cast<std::size_t>(report.cmc_max_k + 1)) return "CMC length";
  for (const auto& s : report.samples)
    if (static_cast<int>(s.turns.size()) != s.num_turns) return "turn rows";
  if (report_to_json(report_from_json(report_to_json(report))) != report_to_json(report)) return "JSON round trip";
  return "";
}

Outcome criterion7(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!ctx.runs.count(Variant::kExplicit)) ctx.runs[Variant::kExplicit] = train_variant(ctx, Variant::kExplicit, "explicit");
  ctx.runs[Variant::kImplicit] = train_variant(ctx, Variant::kImplicit, "implicit");
  ctx.runs[Variant::kConvBaseline] = train_variant(ctx, Variant::kConvBaseline, "convBaseline");
  std::string detail;
  bool ok = true;
  const TrainedRun* cheapest = nullptr;
  for (const auto& [variant, run] : ctx.runs) {
    if (variant != Variant::kExplicit) ctx.reports.push_back(run.report);
    const std::string problem = report_problem(run.report, ctx.dataset().split("valUnseen").size());
    ok = ok && problem.empty() && run.result.steps > 0;
    detail += format("%s Acc5 %.1f%% %.0fs%s%s; ", variant_name(variant).c_str(), 100.0 * run.report.summary.acc5,
                     run.seconds, problem.empty() ? "" : " invalid ", problem.c_str());
    if (!cheapest || run.seconds < cheapest->seconds) cheapest = &run;
  }
  const TrainedRun replay = train_variant(ctx, cheapest->variant, "replay");
  const bool logs_equal = read_file(cheapest->result.log_path) == read_file(replay.result.log_path);
  const bool report_equal = report_to_json(cheapest->report) == report_to_json(replay.report);
  const bool ckpt_equal = read_file(cheapest->result.last_checkpoint) == read_file(replay.result.last_checkpoint);
  ok = ok && logs_equal && report_equal && ckpt_equal;
  detail += format("replay of %s: log %s, report %s, checkpoint %s; %.0fs", variant_name(cheapest->variant).c_str(),
                   logs_equal ? "identical" : "differs", report_equal ? "identical" : "differs",
                   ckpt_equal ? "identical" : "differs", seconds_since(t0));
  return {ok, detail};
}

// ---- 8. protocol properties -----------------------------------------------------------------

Outcome criterion8(Context& ctx) {
  const Dataset& ds = ctx.dataset();
  std::vector<LocalizationReport> reports = ctx.reports;
  std::vector<const DiaLocModel*> models;
  std::vector<std::unique_ptr<DiaLocModel>> fresh;
  for (Variant variant : {Variant::kExplicit, Variant::kImplicit, Variant::kConvBaseline}) {
    auto it = ctx.runs.find(variant);
    if (it != ctx.runs.end()) {
      models.push_back(it->second.model.get());
    } else {
      fresh.push_back(std::make_unique<DiaLocModel>(ModelConfig{.variant = variant}, 3));
      models.push_back(fresh.back().get());
    }
  }
  for (const DiaLocModel* m : models) {
    reports.push_back(evaluate(*m, ds, "valSeen", {.mode = EvalMode::kMultiShot}));
    reports.push_back(evaluate(*m, ds, "valSeen", {.mode = EvalMode::kSingleShot}));
  }
  int bad_reports = 0;
  for (const auto& r : reports) {
    bool monotone = true;
    for (std::size_t k = 1; k < r.cmc.size(); ++k) monotone = monotone && r.cmc[k].second >= r.cmc[k - 1].second;
    if (!monotone || r.summary.acc0 > r.summary.acc5) ++bad_reports;
  }

  Rng rng(2024);
  const auto& pool = ds.split("valUnseen");
  int samples = 0, broken = 0;
  while (samples < 20) {
    const DialogSample& s = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    if (s.num_turns() < 2) continue;
    ++samples;
    const Tensor image = rasterize(ds.world(s.world_id), 64);
    NoGradGuard guard;
    for (const DiaLocModel* m : models) {
      const BeliefState full = run_dialog(*m, image, s.turn_tokens);
      for (int t = 1; t < s.num_turns(); ++t) {
        auto turns = s.turn_tokens;
        for (int k = t; k < s.num_turns(); ++k) std::fill(turns[k].begin(), turns[k].end(), Vocabulary::kPad);
        const BeliefState cut = run_dialog(*m, image, turns);
        for (int k = 0; k < t; ++k)
          if (cut.heatmaps[k]->value != full.heatmaps[k]->value) ++broken;
      }
    }
  }
  return {bad_reports == 0 && broken == 0,
          format("%zu reports, %d with non-monotone CMC or Acc0 > Acc5; causality on %d samples x %zu variants, %d "
                 "changed past heatmaps",
                 reports.size(), bad_reports, samples, models.size(), broken)};
}

// ---- 9. attention complexity -----------------------------------------------------------------

Outcome criterion9(Context&) {
  const DiaLocModel model(ModelConfig{}, 4);
  const WorldMap w = generate_world(9, WorldParams{});
  const Tensor image = rasterize(w, 64);
  const auto& cfg = model.config();
  NoGradGuard guard;
  bool ok = true;
  std::string detail;
  for (int T : {2, 4, 6}) {
    const DialogSample s = generate_dialog(w, 40 + T, T);
    const auto dialog_tokens = tokenize_dialog(s.turns, Vocabulary::standard(), cfg.text_len, cfg.max_text_tokens);
    reset_op_counters();
    (void)model.encode_text(dialog_tokens);
    const double single = static_cast<double>(op_counters().attention_multiplies);
    reset_op_counters();
    (void)model.encode_text(s.turn_tokens.front());
    const double per_turn = static_cast<double>(op_counters().attention_multiplies);
    const double ratio = single / per_turn;
    const bool within = std::abs(ratio - T * T) <= 0.2 * T * T;
    ok = ok && within;

    reset_op_counters();
    (void)single_shot_forward(model, image, dialog_tokens);
    const double full_single = static_cast<double>(op_counters().attention_multiplies);
    BeliefState b = begin_dialog(model, image);
    reset_op_counters();
    advance(model, b, s.turn_tokens.front());
    const double full_turn = static_cast<double>(op_counters().attention_multiplies);
    detail += format("T=%d ratio %.2f (T^2=%d)%s, whole forward %.2f; ", T, ratio, T * T, within ? "" : " out of band",
                     full_single / full_turn);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// ---- 10. service replay -------------------------------------------------------------------------

class RunningServer {
 public:
  explicit RunningServer(LocalizationService& service) {
    service.mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~RunningServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

Outcome criterion10(Context& ctx) {
  fs::path checkpoint = ctx.overfit_checkpoint;
  if (checkpoint.empty()) {
    checkpoint = ctx.work / "service.ckpt";
    save_checkpoint(checkpoint, DiaLocModel(ModelConfig{}, 5), {});
  }
  ServiceConfig config;
  config.checkpoints = {checkpoint};
  const DialogSample dialog = generate_dialog(demo_world(), 6, 3);
  std::vector<int> statuses;
  auto session = [&] {
    LocalizationService service(config);
    RunningServer server(service);
    auto cli = server.client();
    const auto created = cli.Post("/v1/sessions", R"({"worldId":"world_demo"})", "application/json");
    std::vector<std::string> bodies;
    if (!created || created->status != 201) return bodies;
    const std::string id = json::parse(created->body).at("sessionId").get<std::string>();
    for (const auto& t : dialog.turns) {
      const auto r = cli.Post("/v1/sessions/" + id + "/turns", json{{"locator", t.locator}, {"observer", t.observer}}.dump(),
                              "application/json");
      statuses.push_back(r ? r->status : 0);
      bodies.push_back(r ? r->body : "");
    }
    return bodies;
  };
  const auto first = session();
  const auto second = session();
  bool all_ok = first.size() == dialog.turns.size();
  for (int s : statuses) all_ok = all_ok && s == 200;
  const bool identical = all_ok && first == second;
  std::size_t bytes = 0;
  for (const auto& b : first) bytes += b.size();
  return {identical, format("%zu turns (%zu bytes) over HTTP across two restarts: %s", first.size(), bytes,
                            identical ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome(Context&)>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                               criterion5, criterion6, criterion7, criterion8,
                                                               criterion9, criterion10};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  if (selected.empty())
    for (int i = 1; i <= 10; ++i) selected.insert(i);

  Context ctx;
  ctx.work = fs::temp_directory_path() / "dialoc_acceptance";
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  spdlog::set_level(spdlog::level::err);
  int failures = 0;
  for (int n : selected) {
    if (n < 1 || n > 10) {
      std::fprintf(stderr, "unknown criterion %d\n", n);
      return 2;
    }
    Outcome outcome;
    try {
      outcome = criteria[static_cast<std::size_t>(n - 1)](ctx);
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    if (!outcome.pass) ++failures;
    std::printf("%s criterion %d: %s\n", outcome.pass ? "PASS" : "FAIL", n, outcome.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
