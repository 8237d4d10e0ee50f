#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/dataset.hpp"
#include "dialoc/image_io.hpp"
#include "dialoc/metrics.hpp"
#include "dialoc/model.hpp"
#include "dialoc/service.hpp"
#include "dialoc/train.hpp"
#include "dialoc/util.hpp"

using namespace dialoc;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string hash_of(const ojson& j) { return hex64(fnv1a64(j.dump())); }

void print_hash(const std::string& hash) { std::cout << "config hash: " << hash << std::endl; }

std::string checkpoint_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw std::invalid_argument("--counts: '" + part + "' is not an integer");
    }
  }
  if (out.size() != 3) throw std::invalid_argument("--counts expects train,valSeen,valUnseen");
  return out;
}

// ---- gen-data ---------------------------------------------------------------------------------

struct GenDataOptions {
  std::uint64_t seed = 0;
  std::string out;
  std::string counts = "400,50,50";
  bool print_config = false;
};

int run_gen_data(const GenDataOptions& o) {
  const auto counts = parse_counts(o.counts);
  DatasetParams params;
  params.counts = {counts[0], counts[1], counts[2]};
  for (int c : counts) {
    if (c < 1) throw std::invalid_argument("--counts: every split needs at least one sample");
  }
  if (o.print_config) {
    ojson j;
    j["seed"] = o.seed;
    j["counts"] = {{"train", counts[0]}, {"valSeen", counts[1]}, {"valUnseen", counts[2]}};
    j["out"] = o.out;
    std::cout << j.dump(2) << std::endl;
    return 0;
  }
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const Dataset ds = build_splits(o.seed, params);
  print_hash(dataset_config_hash(ds));
  write_dataset(ds, o.out);
  for (const auto& name : split_names()) std::cout << name << ": " << ds.split(name).size() << " samples\n";
  std::cout << "worlds: " << ds.worlds.size() << "\nwrote " << o.out << std::endl;
  return 0;
}

// ---- train / sweep -------------------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::string> variant;
  std::optional<int> depth;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  bool no_augment = false;
  bool print_config = false;
};

TrainConfig resolve_train_config(const TrainOptions& o) {
  TrainConfig c = o.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_file(o.config));
  if (o.variant) c.model.variant = variant_from_name(*o.variant);
  if (o.depth) c.model.fusion_depth = *o.depth;
  if (o.alpha) c.loss.alpha = *o.alpha;
  if (o.beta) c.loss.beta = *o.beta;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.seed) c.seed = *o.seed;
  if (o.learning_rate) c.learning_rate = *o.learning_rate;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.no_augment) c.augmentation.enabled = false;
  c.validate();
  return c;
}

void add_train_flags(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--config", o.config, "TrainConfig JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--data", o.data, "Dataset directory written by gen-data");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--variant", o.variant, "explicit | implicit | convBaseline");
  cmd->add_option("--depth", o.depth, "Fusion depth d");
  cmd->add_option("--alpha", o.alpha, "Multi-shot decay in [0, 1]");
  cmd->add_option("--beta", o.beta, "Auxiliary loss weight (>= 0)");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--seed", o.seed, "Training seed");
  cmd->add_option("--lr", o.learning_rate, "Learning rate");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
  cmd->add_flag("--no-augment", o.no_augment, "Disable image augmentation");
  cmd->add_flag("--print-config", o.print_config, "Print the resolved config JSON and exit");
}

int run_train(const TrainOptions& o) {
  const TrainConfig c = resolve_train_config(o);
  if (o.print_config) {
    std::cout << c.to_json() << std::endl;
    return 0;
  }
  if (o.data.empty() || o.out.empty()) throw std::invalid_argument("--data and --out are required");
  print_hash(c.hash());
  const Dataset ds = load_dataset(o.data);
  TrainHooks hooks;
  hooks.on_eval = [](const EpochEval& e) {
    std::cout << "epoch " << e.epoch << " " << e.split << " acc0 " << format_fixed(e.summary.acc0, 4) << " acc5 "
              << format_fixed(e.summary.acc5, 4) << " meanLE " << format_fixed(e.summary.mean_le, 3) << std::endl;
    return true;
  };
  const TrainResult r = train(c, ds, o.out, hooks);
  std::cout << "steps " << r.steps << ", best epoch " << r.best_epoch << " (" << c.best_split << " acc5 "
            << format_fixed(r.best_score, 4) << ")\nbest checkpoint " << r.best_checkpoint.string()
            << "\nlast checkpoint " << r.last_checkpoint.string() << std::endl;
  return 0;
}

struct SweepOptions {
  TrainOptions train;
  std::string axis;
  std::string values;
};

int run_sweep(const SweepOptions& o) {
  const TrainConfig base = resolve_train_config(o.train);
  std::vector<double> values;
  std::stringstream ss(o.values);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      values.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw std::invalid_argument("--values: '" + part + "' is not a number");
    }
  }
  if (values.empty()) throw std::invalid_argument("--values is empty");
  for (double v : values) apply_sweep_value(base, o.axis, v).validate();
  if (o.train.print_config) {
    ojson j;
    j["axis"] = o.axis;
    j["values"] = values;
    j["base"] = ojson::parse(base.to_json());
    std::cout << j.dump(2) << std::endl;
    return 0;
  }
  if (o.train.data.empty() || o.train.out.empty()) throw std::invalid_argument("--data and --out are required");
  print_hash(base.hash());
  const Dataset ds = load_dataset(o.train.data);
  const auto rows = sweep(o.axis, values, base, ds, o.train.out);
  write_file(fs::path(o.train.out) / "sweep.json", sweep_to_json(rows));
  std::cout << sweep_table(rows);
  return 0;
}

// ---- eval / analyze / bench --------------------------------------------------------------------------

struct EvalCliOptions {
  std::string checkpoint;
  std::string data;
  std::string split = "valUnseen";
  std::string mode = "multiShot";
  std::string out;
  int cmc_max_k = 20;
  bool print_config = false;
};

int run_eval(const EvalCliOptions& o) {
  const EvalMode mode = mode_from_name(o.mode);
  if (o.split != "train" && o.split != "valSeen" && o.split != "valUnseen") {
    throw std::invalid_argument("--split must be train, valSeen or valUnseen");
  }
  ojson resolved;
  resolved["checkpoint"] = o.checkpoint;
  resolved["checkpointHash"] = checkpoint_hash(o.checkpoint);
  resolved["data"] = o.data;
  resolved["split"] = o.split;
  resolved["mode"] = o.mode;
  resolved["cmcMaxK"] = o.cmc_max_k;
  if (o.print_config) {
    std::cout << resolved.dump(2) << std::endl;
    return 0;
  }
  const std::string hash = hash_of(resolved);
  print_hash(hash);
  const auto model = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.data);
  EvalOptions opts;
  opts.mode = mode;
  opts.cmc_max_k = o.cmc_max_k;
  opts.config_hash = hash;
  const LocalizationReport report = evaluate(*model, ds, o.split, opts);
  const fs::path out = o.out.empty() ? fs::path("report_" + o.split + "_" + o.mode + ".json") : fs::path(o.out);
  write_file(out, report_to_json(report) + "\n");
  fs::path csv = out;
  csv.replace_extension(".csv");
  write_file(csv, report_csv({report}));
  std::cout << report_table({report}) << "wrote " << out.string() << " and " << csv.string() << std::endl;
  return 0;
}

struct AnalyzeOptions {
  std::string reports;
  std::string out;
};

int run_analyze(const AnalyzeOptions& o) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(o.reports)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no report JSON files in " + o.reports);

  ojson list = ojson::array();
  ojson hashes = ojson::array();
  for (const auto& f : files) {
    const LocalizationReport r = report_from_json(read_file(f));
    hashes.push_back(r.config_hash);
    ojson j;
    j["file"] = f.filename().string();
    j["method"] = r.method;
    j["mode"] = r.mode;
    j["split"] = r.split;
    j["configHash"] = r.config_hash;
    j["summary"] = {{"count", r.summary.count}, {"acc0", r.summary.acc0}, {"acc5", r.summary.acc5},
                    {"meanLE", r.summary.mean_le}};
    ojson cmc = ojson::array();
    for (const auto& [k, v] : r.cmc) cmc.push_back({{"k", k}, {"acc", v}});
    j["cmc"] = cmc;
    ojson groups = ojson::array();
    for (const auto& [T, g] : r.per_turn) groups.push_back({{"T", T}, {"count", g.count}, {"meanLE", g.mean_le}});
    j["perTurn"] = groups;
    j["confidenceAtGt"] = r.confidence;
    list.push_back(std::move(j));
  }
  ojson out;
  out["configHash"] = hash_of(hashes);
  out["reports"] = std::move(list);
  print_hash(out["configHash"].get<std::string>());
  write_output(o.out, out.dump(2) + "\n");
  return 0;
}

struct BenchOptions {
  std::string checkpoint;
  int turns = 6;
  int repeats = 5;
  std::string out;
  bool print_config = false;
};

int run_bench(const BenchOptions& o) {
  if (o.turns < 1 || o.turns > kMaxTurns) throw std::invalid_argument("--turns must be in [1, 6]");
  if (o.repeats < 1) throw std::invalid_argument("--repeats must be >= 1");
  ojson resolved;
  resolved["checkpoint"] = o.checkpoint;
  resolved["checkpointHash"] = checkpoint_hash(o.checkpoint);
  resolved["turns"] = o.turns;
  resolved["repeats"] = o.repeats;
  resolved["batchSize"] = 1;
  if (o.print_config) {
    std::cout << resolved.dump(2) << std::endl;
    return 0;
  }
  const std::string hash = hash_of(resolved);
  print_hash(hash);
  const auto model = load_checkpoint(o.checkpoint);
  const WorldMap world = demo_world();
  const Tensor image = rasterize(world, model->config().map_size);
  const std::vector<int> tokens = tokenize({"where are you now", "i am in a bedroom next to a lamp"},
                                          Vocabulary::standard(), model->config().text_len);

  NoGradGuard guard;
  double seconds = 0.0;
  for (int r = 0; r < o.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    BeliefState b = begin_dialog(*model, image);
    for (int t = 0; t < o.turns; ++t) advance(*model, b, tokens);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);

  ojson out;
  out["configHash"] = hash;
  out["variant"] = variant_name(model->config().variant);
  out["parameterCount"] = model->parameter_count();
  out["turns"] = o.turns;
  out["repeats"] = o.repeats;
  out["runtimeSecondsPerTurn"] = seconds / (o.repeats * o.turns);
  out["peakBytes"] = static_cast<std::int64_t>(usage.ru_maxrss) * 1024;
  write_output(o.out, out.dump(2) + "\n");
  return 0;
}

// ---- serve / infer -------------------------------------------------------------------------------------

struct ServeOptions {
  std::vector<std::string> checkpoints;
  std::string worlds;
  std::string static_dir;
  std::string history;
  std::string host = "127.0.0.1";
  int port = 8080;
  int max_turns = kMaxTurns;
  int nms_radius = 8;
  int top_k = 3;
  bool print_config = false;
};

int run_serve(const ServeOptions& o) {
  ServiceConfig c;
  for (const auto& p : o.checkpoints) c.checkpoints.emplace_back(p);
  c.worlds_dir = o.worlds;
  c.static_dir = o.static_dir;
  c.history_dir = o.history;
  c.host = o.host;
  c.port = o.port;
  c.max_turns = o.max_turns;
  c.nms_radius_px = o.nms_radius;
  c.top_k = o.top_k;
  ojson resolved;
  resolved["checkpoints"] = o.checkpoints;
  resolved["worlds"] = o.worlds;
  resolved["static"] = o.static_dir;
  resolved["history"] = o.history;
  resolved["host"] = o.host;
  resolved["port"] = o.port;
  resolved["maxTurns"] = o.max_turns;
  resolved["nmsRadiusPx"] = o.nms_radius;
  resolved["topK"] = o.top_k;
  if (o.print_config) {
    std::cout << resolved.dump(2) << std::endl;
    return 0;
  }
  print_hash(hash_of(resolved));
  LocalizationService service(c);
  service.serve();
  return 0;
}

struct InferOptions {
  std::string checkpoint;
  std::string world;
  std::string dialog;
  std::string mode = "multiShot";
  std::string dump_heatmaps;
  bool print_config = false;
};

Tensor normalized_probabilities(const Tensor& logits) {
  double peak = logits[0];
  for (float v : logits.data()) peak = std::max(peak, static_cast<double>(v));
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.numel(); ++i) out[i] = static_cast<float>(std::exp(logits[i] - peak));
  return out;  // max is 1
}

int run_infer(const InferOptions& o) {
  const EvalMode mode = mode_from_name(o.mode);
  ojson resolved;
  resolved["checkpoint"] = o.checkpoint;
  resolved["checkpointHash"] = checkpoint_hash(o.checkpoint);
  resolved["world"] = o.world;
  resolved["dialog"] = o.dialog;
  resolved["mode"] = o.mode;
  resolved["dumpHeatmaps"] = o.dump_heatmaps;
  if (o.print_config) {
    std::cout << resolved.dump(2) << std::endl;
    return 0;
  }
  const std::string hash = hash_of(resolved);
  print_hash(hash);

  const WorldMap world = world_from_json(read_file(o.world));
  validate_world(world);
  const std::string dialog_text = read_file(o.dialog);
  DialogSample sample;
  bool has_gt = false;
  {
    ojson j = ojson::parse(dialog_text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("turns")) {
      throw DataError(o.dialog + ": expected a dialog JSON object with turns");
    }
    if (j.contains("sampleId")) {
      sample = sample_from_json(j.dump());
      has_gt = true;
    } else {
      try {
        for (const auto& t : j.at("turns")) {
          sample.turns.push_back({t.at("locator").get<std::string>(), t.at("observer").get<std::string>()});
        }
      } catch (const nlohmann::json::exception& e) {
        throw DataError(o.dialog + ": " + e.what());
      }
      sample.sample_id = "dialog";
      sample.world_id = world.world_id;
    }
  }
  if (sample.turns.empty() || sample.num_turns() > kMaxTurns) throw DataError(o.dialog + ": a dialog has 1 to 6 turns");

  const auto model = load_checkpoint(o.checkpoint);
  const ModelConfig& mc = model->config();
  const Vocabulary& vocab = Vocabulary::standard();
  const Tensor image = rasterize(world, mc.map_size);
  std::vector<Tensor> logits;
  {
    NoGradGuard guard;
    if (mode == EvalMode::kMultiShot) {
      BeliefState b = begin_dialog(*model, image);
      for (const auto& t : sample.turns) advance(*model, b, tokenize(t, vocab, mc.text_len));
      for (const auto& h : b.heatmaps) logits.push_back(h->value);
    } else {
      const auto tokens = tokenize_dialog(sample.turns, vocab, mc.text_len, mc.max_text_tokens);
      logits.push_back(single_shot_forward(*model, image, tokens)->value);
    }
  }
  for (const auto& l : logits) {
    if (!l.all_finite()) throw NumericError("infer: non-finite heatmap logits");
  }

  if (!o.dump_heatmaps.empty()) fs::create_directories(o.dump_heatmaps);
  std::optional<SampleRecord> record;
  if (has_gt) {
    const GeodesicIndex geo(world);
    record = score_sample(world, geo, sample, logits);
  }
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const Point pred = target_to_map(world, predict_location(logits[t]), logits[t].dim(0), logits[t].dim(1));
    std::cout << (mode == EvalMode::kMultiShot ? "turn " + std::to_string(t + 1) : std::string("single-shot"))
              << ": pred (" << pred.x << ", " << pred.y << ") node " << snap_to_node(pred, world);
    if (record) std::cout << " LE " << format_fixed(record->turns[t].le_m, 3) << " m";
    std::cout << '\n';
    if (!o.dump_heatmaps.empty()) {
      const std::string name =
          mode == EvalMode::kMultiShot ? "heatmap_turn" + std::to_string(t + 1) + ".pgm" : "heatmap_single.pgm";
      write_file(fs::path(o.dump_heatmaps) / name, encode_pgm(normalized_probabilities(logits[t]), "config " + hash));
    }
  }
  std::cout.flush();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative dialog localization: data generation, training, evaluation and serving"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  int status = 0;
  auto guarded = [&status](auto fn) {
    return [&status, fn] {
      try {
        status = fn();
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << std::endl;
        status = kExitUsage;
      } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        status = kExitData;
      } catch (const DialogGenerationError& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        status = kExitData;
      } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        status = kExitData;
      } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << std::endl;
        status = kExitNumeric;
      } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        status = kExitData;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        status = 1;
      }
    };
  };

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate worlds and dialog splits");
  gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--counts", gen.counts, "Samples per split: train,valSeen,valUnseen");
  gen_cmd->add_flag("--print-config", gen.print_config, "Print the resolved config JSON and exit");
  gen_cmd->callback(guarded([&] { return run_gen_data(gen); }));

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a localizer");
  add_train_flags(train_cmd, train_opts);
  train_cmd->callback(guarded([&] { return run_train(train_opts); }));

  SweepOptions sweep_opts;
  auto* sweep_cmd = app.add_subcommand("sweep", "Ablation sweep over one axis");
  add_train_flags(sweep_cmd, sweep_opts.train);
  sweep_cmd->add_option("--axis", sweep_opts.axis, "depth | alpha | beta | augmentation")->required();
  sweep_cmd->add_option("--values", sweep_opts.values, "Comma-separated values")->required();
  sweep_cmd->callback(guarded([&] { return run_sweep(sweep_opts); }));

  EvalCliOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_opts.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", eval_opts.split, "train | valSeen | valUnseen");
  eval_cmd->add_option("--mode", eval_opts.mode, "singleShot | multiShot");
  eval_cmd->add_option("--out", eval_opts.out, "Report JSON path (CSV written alongside)");
  eval_cmd->add_option("--cmc-max-k", eval_opts.cmc_max_k, "Largest CMC radius in meters");
  eval_cmd->add_flag("--print-config", eval_opts.print_config, "Print the resolved config JSON and exit");
  eval_cmd->callback(guarded([&] { return run_eval(eval_opts); }));

  AnalyzeOptions analyze_opts;
  auto* analyze_cmd = app.add_subcommand("analyze", "CMC, per-turn and confidence series from reports");
  analyze_cmd->add_option("--reports", analyze_opts.reports, "Directory of report JSON files")
      ->required()
      ->check(CLI::ExistingDirectory);
  analyze_cmd->add_option("--out", analyze_opts.out, "Output JSON path (default stdout)");
  analyze_cmd->callback(guarded([&] { return run_analyze(analyze_opts); }));

  BenchOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench", "Per-turn latency and peak memory at batch size 1");
  bench_cmd->add_option("--checkpoint", bench_opts.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--turns", bench_opts.turns, "Turns per dialog");
  bench_cmd->add_option("--repeats", bench_opts.repeats, "Dialogs to time");
  bench_cmd->add_option("--out", bench_opts.out, "Output JSON path (default stdout)");
  bench_cmd->add_flag("--print-config", bench_opts.print_config, "Print the resolved config JSON and exit");
  bench_cmd->callback(guarded([&] { return run_bench(bench_opts); }));

  ServeOptions serve_opts;
  auto* serve_cmd = app.add_subcommand("serve", "Run the turn-based inference service");
  serve_cmd->add_option("--checkpoint", serve_opts.checkpoints, "Checkpoint file (repeatable)")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--worlds", serve_opts.worlds, "Directory of world JSON files")->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--static", serve_opts.static_dir, "Directory served at /")->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--history", serve_opts.history, "Directory for per-session JSONL history");
  serve_cmd->add_option("--host", serve_opts.host, "Bind address");
  serve_cmd->add_option("--port", serve_opts.port, "Port");
  serve_cmd->add_option("--max-turns", serve_opts.max_turns, "Turn cap per session");
  serve_cmd->add_option("--nms-radius", serve_opts.nms_radius, "Top-k exclusion radius in heatmap pixels");
  serve_cmd->add_option("--top-k", serve_opts.top_k, "Peaks per turn response");
  serve_cmd->add_flag("--print-config", serve_opts.print_config, "Print the resolved config JSON and exit");
  serve_cmd->callback(guarded([&] { return run_serve(serve_opts); }));

  InferOptions infer_opts;
  auto* infer_cmd = app.add_subcommand("infer", "Offline inference on one dialog");
  infer_cmd->add_option("--checkpoint", infer_opts.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--world", infer_opts.world, "World JSON file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--dialog", infer_opts.dialog, "Dialog JSON (a dataset sample line or {turns: [...]})")
      ->required()
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--mode", infer_opts.mode, "singleShot | multiShot");
  infer_cmd->add_option("--dump-heatmaps", infer_opts.dump_heatmaps, "Directory for per-turn PGM heatmaps");
  infer_cmd->add_flag("--print-config", infer_opts.print_config, "Print the resolved config JSON and exit");
  infer_cmd->callback(guarded([&] { return run_infer(infer_opts); }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  return status;
}
