#include "dialoc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/paraphrase.hpp"
#include "dialoc/util.hpp"

namespace dialoc {

namespace {

using ojson = nlohmann::ordered_json;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("train config: " + msg);
}

float sample_bilinear(const Tensor& img, int ch, double y, double x) {
  const int H = img.dim(1), W = img.dim(2);
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = img.at(ch, y0, x0) * (1 - fx) + img.at(ch, y0, x1) * fx;
  const double bottom = img.at(ch, y1, x0) * (1 - fx) + img.at(ch, y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

int to_pixel(double u, int size) { return std::clamp(static_cast<int>(std::floor(u * size)), 0, size - 1); }

}  // namespace

// ---- config --------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batchSize must be >= 1");
  require(learning_rate > 0.0, "learningRate must be > 0");
  require(weight_decay >= 0.0, "weightDecay must be >= 0");
  require(grad_clip >= 0.0, "gradClip must be >= 0");
  require(sigma_m >= 0.0, "sigmaMeters must be >= 0");
  require(eval_every >= 1, "evalEvery must be >= 1");
  require(max_steps >= 0, "maxSteps must be >= 0");
  require(loss.alpha >= 0.0 && loss.alpha <= 1.0, "alpha must be in [0, 1], got " + format_fixed(loss.alpha, 4));
  require(loss.beta >= 0.0, "beta must be >= 0");
  const auto& a = augmentation;
  require(a.color_jitter >= 0.0 && a.color_jitter < 1.0, "colorJitter must be in [0, 1)");
  require(a.crop_ratio[0] > 0.0 && a.crop_ratio[0] <= a.crop_ratio[1], "cropRatio must be an increasing positive range");
  require(a.crop_scale[0] > 0.0 && a.crop_scale[0] <= a.crop_scale[1] && a.crop_scale[1] <= 1.0,
          "cropScale must lie in (0, 1]");
  require(a.max_crop_tries >= 1, "maxCropTries must be >= 1");
  const auto& d = dialog_augmentation;
  require(d.probability >= 0.0 && d.probability <= 1.0, "dialog augmentation probability must be in [0, 1]");
  require(d.provider == "ruleBased" || d.provider == "remoteCompletion",
          "unknown dialog augmentation provider '" + d.provider + "'");
  require(!d.enabled || d.provider != "remoteCompletion" || !d.remote_url.empty(),
          "remoteCompletion needs remoteUrl");
  for (const auto& s : eval_splits) {
    require(std::find(split_names().begin(), split_names().end(), s) != split_names().end(),
            "unknown eval split '" + s + "'");
  }
  require(std::find(eval_splits.begin(), eval_splits.end(), best_split) != eval_splits.end(),
          "bestSplit '" + best_split + "' is not evaluated");
  model.validate();
}

std::string TrainConfig::to_json() const {
  ojson j;
  j["epochs"] = epochs;
  j["batchSize"] = batch_size;
  j["learningRate"] = learning_rate;
  j["weightDecay"] = weight_decay;
  j["gradClip"] = grad_clip;
  j["seed"] = seed;
  j["sigmaMeters"] = sigma_m;
  j["evalEvery"] = eval_every;
  j["maxSteps"] = max_steps;
  j["evalSplits"] = eval_splits;
  j["bestSplit"] = best_split;
  j["augmentation"] = {{"enabled", augmentation.enabled},
                       {"colorJitter", augmentation.color_jitter},
                       {"cropRatio", augmentation.crop_ratio},
                       {"cropScale", augmentation.crop_scale},
                       {"rotate180", augmentation.rotate180},
                       {"maxCropTries", augmentation.max_crop_tries}};
  j["dialogAugmentation"] = {{"enabled", dialog_augmentation.enabled},
                             {"provider", dialog_augmentation.provider},
                             {"probability", dialog_augmentation.probability},
                             {"remoteUrl", dialog_augmentation.remote_url}};
  j["loss"] = {{"alpha", loss.alpha}, {"beta", loss.beta}, {"perTurnTargets", loss.per_turn_targets}};
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = Vocabulary::standard().size();
  j["model"] = ojson::parse(m.to_json());
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    auto get = [](const ojson& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "epochs", c.epochs);
    get(j, "batchSize", c.batch_size);
    get(j, "learningRate", c.learning_rate);
    get(j, "weightDecay", c.weight_decay);
    get(j, "gradClip", c.grad_clip);
    get(j, "seed", c.seed);
    get(j, "sigmaMeters", c.sigma_m);
    get(j, "evalEvery", c.eval_every);
    get(j, "maxSteps", c.max_steps);
    get(j, "evalSplits", c.eval_splits);
    get(j, "bestSplit", c.best_split);
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      get(a, "enabled", c.augmentation.enabled);
      get(a, "colorJitter", c.augmentation.color_jitter);
      get(a, "cropRatio", c.augmentation.crop_ratio);
      get(a, "cropScale", c.augmentation.crop_scale);
      get(a, "rotate180", c.augmentation.rotate180);
      get(a, "maxCropTries", c.augmentation.max_crop_tries);
    }
    if (j.contains("dialogAugmentation")) {
      const auto& d = j.at("dialogAugmentation");
      get(d, "enabled", c.dialog_augmentation.enabled);
      get(d, "provider", c.dialog_augmentation.provider);
      get(d, "probability", c.dialog_augmentation.probability);
      get(d, "remoteUrl", c.dialog_augmentation.remote_url);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      get(l, "alpha", c.loss.alpha);
      get(l, "beta", c.loss.beta);
      get(l, "perTurnTargets", c.loss.per_turn_targets);
    }
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config field has the wrong type: ") + e.what());
  }
  return c;
}

std::string TrainConfig::hash() const { return hex64(fnv1a64(to_json())); }

// ---- augmentation ----------------------------------------------------------------------

Tensor rotate180(const Tensor& image) {
  Tensor out(image.shape());
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(c, H - 1 - y, W - 1 - x) = image.at(c, y, x);
  return out;
}

std::vector<int> rotate_direction_tokens(const std::vector<int>& tokens) {
  const Vocabulary& v = Vocabulary::standard();
  const int north = v.id("north"), south = v.id("south"), west = v.id("west"), east = v.id("east");
  std::vector<int> out = tokens;
  for (auto& t : out) {
    if (t == north) t = south;
    else if (t == south) t = north;
    else if (t == west) t = east;
    else if (t == east) t = west;
  }
  return out;
}

Point transformed_point(const AugmentedSample& aug, Point p, const WorldMap& world) {
  const int W = world.width_px, H = world.height_px;
  const double u = (p.x + 0.5) / W, v = (p.y + 0.5) / H;
  Point out{to_pixel((u - aug.crop_x0) / aug.crop_w, W), to_pixel((v - aug.crop_y0) / aug.crop_h, H)};
  if (aug.rotated) out = {W - 1 - out.x, H - 1 - out.y};
  return out;
}

TargetHeatmap transformed_target(const AugmentedSample& aug, Point p, const WorldMap& world, double sigma_m, int h0,
                                 int w0) {
  const double sigma_px = sigma_m / world.meters_per_pixel;
  return make_target_px(h0, w0, map_to_target(world, transformed_point(aug, p, world), h0, w0),
                        sigma_px / aug.crop_h * h0 / static_cast<double>(world.height_px),
                        sigma_px / aug.crop_w * w0 / static_cast<double>(world.width_px));
}

AugmentedSample augment(const Tensor& image, Point gt_pixel, const WorldMap& world, double sigma_m, int h0, int w0,
                        const AugmentConfig& config, std::uint64_t seed) {
  const int W = world.width_px, H = world.height_px;
  AugmentedSample out;
  out.image = image;
  if (config.enabled) {
    Rng rng(seed);
    // Crop in normalized coordinates so map and image resolutions may differ.
    const double u = (gt_pixel.x + 0.5) / W, v = (gt_pixel.y + 0.5) / H;
    for (int attempt = 0; attempt < config.max_crop_tries; ++attempt) {
      const double scale = rng.uniform(config.crop_scale[0], config.crop_scale[1]);
      const double ratio = rng.uniform(config.crop_ratio[0], config.crop_ratio[1]);
      const double tw = std::min(1.0, std::sqrt(scale * ratio));
      const double th = std::min(1.0, std::sqrt(scale / ratio));
      const double x0 = rng.uniform(0.0, 1.0 - tw), y0 = rng.uniform(0.0, 1.0 - th);
      if (u < x0 || u >= x0 + tw || v < y0 || v >= y0 + th) continue;
      const int C = image.dim(0), S = image.dim(1), SW = image.dim(2);
      Tensor cropped(image.shape());
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < SW; ++x) {
            const double sy = (y0 + (y + 0.5) / S * th) * S - 0.5;
            const double sx = (x0 + (x + 0.5) / SW * tw) * SW - 0.5;
            cropped.at(c, y, x) = sample_bilinear(image, c, sy, sx);
          }
      out.image = std::move(cropped);
      out.cropped = true;
      out.crop_scale = tw * th;
      out.crop_x0 = x0;
      out.crop_y0 = y0;
      out.crop_w = tw;
      out.crop_h = th;
      break;
    }
    if (config.rotate180 && rng.bernoulli(0.5)) {
      out.image = rotate180(out.image);
      out.rotated = true;
    }
    if (config.color_jitter > 0.0) {
      const double s = config.color_jitter;
      const double brightness = rng.uniform(1 - s, 1 + s);
      const double contrast = rng.uniform(1 - s, 1 + s);
      const double saturation = rng.uniform(1 - s, 1 + s);
      Tensor& img = out.image;
      const int S = img.dim(1), SW = img.dim(2);
      double mean = 0.0;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < SW; ++x)
          mean += 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
      mean /= static_cast<double>(S) * SW;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < SW; ++x) {
          std::array<double, 3> px{};
          for (int c = 0; c < 3; ++c) px[c] = img.at(c, y, x) * brightness;
          const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
          for (int c = 0; c < 3; ++c) {
            double p = gray + (px[c] - gray) * saturation;
            p = (p - mean) * contrast + mean;
            img.at(c, y, x) = static_cast<float>(std::clamp(p, 0.0, 1.0));
          }
        }
    }
  }
  out.gt_pixel = transformed_point(out, gt_pixel, world);
  out.target = transformed_target(out, gt_pixel, world, sigma_m, h0, w0);
  return out;
}

// ---- optimizer ------------------------------------------------------------------------

void AdamW::step(std::vector<Parameter>& params) {
  for (const auto& p : params) {
    if (!p.node->requires_grad || p.node->grad.empty()) continue;
    if (!p.node->grad.all_finite()) throw NumericError("non-finite gradient in " + p.name);
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.node->value.shape()));
      v_.push_back(Tensor::zeros(p.node->value.shape()));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("AdamW: parameter list changed between steps");
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2, lr = config_.learning_rate, wd = config_.weight_decay;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    GraphNode& node = *params[i].node;
    if (!node.requires_grad) continue;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < node.value.numel(); ++k) {
      const double g = node.grad.empty() ? 0.0 : node.grad[k];
      const double mk = b1 * m[k] + (1.0 - b1) * g;
      const double vk = b2 * v[k] + (1.0 - b2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double p = node.value[k];
      node.value[k] = static_cast<float>(p - lr * (mk / c1) / (std::sqrt(vk / c2) + config_.eps) - lr * wd * p);
    }
  }
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.node->requires_grad || p.node->grad.empty()) continue;
    for (float g : p.node->grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (!p.node->requires_grad || p.node->grad.empty()) continue;
      for (auto& g : p.node->grad.data()) g *= factor;
    }
  }
  return norm;
}

// ---- training loop ---------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const Dataset& dataset, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks) {
  config.validate();
  const auto& samples = dataset.split("train");
  if (samples.empty()) throw DataError("train split is empty");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.config_hash = config.hash();
  result.log_path = out_dir / "train_log.jsonl";
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";
  write_file(out_dir / "config.json", config.to_json());

  DiaLocModel model(config.model, derive_seed(config.seed, "model-init"));
  AdamW optimizer({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  const ModelConfig& mc = model.config();
  spdlog::info("training {} ({} parameters), config {}", variant_name(mc.variant), model.parameter_count(),
               result.config_hash);

  std::unique_ptr<ParaphraseProvider> provider;
  std::unique_ptr<DialogAugmenter> augmenter;
  if (config.dialog_augmentation.enabled) {
    if (config.dialog_augmentation.provider == "remoteCompletion") {
      RemoteCompletionConfig rc;
      rc.url = config.dialog_augmentation.remote_url;
      provider = std::make_unique<RemoteCompletionParaphraser>(rc);
    } else {
      provider = std::make_unique<RuleBasedParaphraser>();
    }
    augmenter = std::make_unique<DialogAugmenter>(*provider, config.dialog_augmentation.probability, mc.text_len);
  }

  std::map<std::string, Tensor> images;
  for (const auto& s : samples) {
    if (!images.count(s.world_id)) images.emplace(s.world_id, rasterize(dataset.world(s.world_id), mc.map_size));
  }

  std::ofstream log(result.log_path, std::ios::trunc);
  if (!log) throw DataError("cannot write " + result.log_path.string());
  auto write_line = [&](const ojson& j) {
    log << j.dump() << '\n';
    log.flush();
  };

  const CheckpointMeta base_meta{0, config.seed, config.to_json()};
  const int n = static_cast<int>(samples.size());
  const auto started = std::chrono::steady_clock::now();
  int step = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle.shuffle(order);

    for (int start = 0; start < n && !stop; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      double loss_sum = 0.0, lms_sum = 0.0, laux_sum = 0.0;
      for (int b = start; b < end; ++b) {
        const int idx = order[static_cast<std::size_t>(b)];
        const std::uint64_t sample_seed =
            derive_seed(config.seed, "sample", static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) + idx);
        DialogSample sample = samples[static_cast<std::size_t>(idx)];
        if (augmenter) {
          Rng r(derive_seed(sample_seed, "dialog"));
          sample = augmenter->apply(sample, r).first;
        }
        const WorldMap& world = dataset.world(sample.world_id);
        const AugmentedSample aug = augment(images.at(sample.world_id), sample.final_pixel, world, config.sigma_m,
                                            mc.target_h, mc.target_w, config.augmentation,
                                            derive_seed(sample_seed, "image"));
        std::vector<std::vector<int>> turns = sample.turn_tokens;
        if (aug.rotated) {
          for (auto& t : turns) t = rotate_direction_tokens(t);
        }
        const BeliefState belief = run_dialog(model, aug.image, turns);
        std::vector<const TargetHeatmap*> targets{&aug.target};
        std::vector<TargetHeatmap> per_turn;
        if (config.loss.per_turn_targets) {
          targets.clear();
          per_turn.reserve(turns.size());
          for (int node : sample.observer_node_per_turn) {
            per_turn.push_back(transformed_target(aug, world.nodes[static_cast<std::size_t>(node)].position, world,
                                                  config.sigma_m, mc.target_h, mc.target_w));
            targets.push_back(&per_turn.back());
          }
        }
        const LossTerms terms = total_loss(belief.heatmaps, targets, config.loss);
        const double value = terms.total->value[0];
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss at step " + std::to_string(step + 1) + " on " + sample.sample_id);
        }
        loss_sum += value;
        lms_sum += terms.multishot->value[0];
        laux_sum += terms.aux->value[0];
        backward(scale(terms.total, inv_batch));
      }
      if (config.grad_clip > 0.0) clip_grad_norm(model.parameters(), config.grad_clip);
      optimizer.step(model.parameters());
      for (auto& p : model.parameters()) {
        if (p.node->requires_grad) p.node->grad_buffer().fill(0.0f);
      }
      ++step;
      const double count = end - start;
      result.step_losses.push_back(loss_sum / count);
      write_line({{"step", step}, {"loss", loss_sum / count}, {"lms", lms_sum / count}, {"laux", laux_sum / count}});
      if (config.max_steps > 0 && step >= config.max_steps) stop = true;
    }

    if (epoch % config.eval_every == 0 || epoch == config.epochs || stop) {
      for (const auto& split : config.eval_splits) {
        EvalOptions opt;
        opt.config_hash = result.config_hash;
        const LocalizationReport report = evaluate(model, dataset, split, opt);
        const EpochEval ev{epoch, step, split, report.summary};
        result.evals.push_back(ev);
        write_line({{"epoch", epoch},
                    {"split", split},
                    {"acc0", ev.summary.acc0},
                    {"acc5", ev.summary.acc5},
                    {"meanLE", ev.summary.mean_le}});
        if (split == config.best_split && ev.summary.acc5 > result.best_score) {
          result.best_score = ev.summary.acc5;
          result.best_epoch = epoch;
          CheckpointMeta meta = base_meta;
          meta.step = static_cast<std::uint64_t>(step);
          save_checkpoint(result.best_checkpoint, model, meta);
        }
        if (hooks.on_eval && !hooks.on_eval(ev)) stop = true;
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      spdlog::info("epoch {} step {} loss {:.4f} ({:.1f}s)", epoch, step, result.step_losses.back(), secs);
    }
  }
  result.steps = step;
  CheckpointMeta meta = base_meta;
  meta.step = static_cast<std::uint64_t>(step);
  save_checkpoint(result.last_checkpoint, model, meta);
  return result;
}

// ---- sweeps ---------------------------------------------------------------------------

TrainConfig apply_sweep_value(const TrainConfig& base, const std::string& axis, double value) {
  TrainConfig c = base;
  if (axis == "depth") {
    if (value < 1 || value != std::floor(value)) throw std::invalid_argument("sweep: depth must be a positive integer");
    c.model.fusion_depth = static_cast<int>(value);
  } else if (axis == "alpha") {
    c.loss.alpha = value;
  } else if (axis == "beta") {
    c.loss.beta = value;
  } else if (axis == "augmentation") {
    if (value != 0.0 && value != 1.0) throw std::invalid_argument("sweep: augmentation values are 0 or 1");
    c.dialog_augmentation.enabled = value == 1.0;
  } else {
    throw std::invalid_argument("sweep: unknown axis '" + axis + "' (depth, alpha, beta, augmentation)");
  }
  c.validate();
  return c;
}

std::vector<SweepRow> sweep(const std::string& axis, const std::vector<double>& values, const TrainConfig& base,
                            const Dataset& dataset, const std::filesystem::path& out_dir) {
  std::vector<TrainConfig> configs;
  for (double v : values) configs.push_back(apply_sweep_value(base, axis, v));
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto run_dir = out_dir / (axis + "_" + format_fixed(values[i], 3));
    const TrainResult r = train(configs[i], dataset, run_dir);
    const auto model = load_checkpoint(r.best_checkpoint);
    SweepRow row{axis, values[i], r.config_hash, {}};
    for (const auto& split : {std::string("valSeen"), std::string("valUnseen")}) {
      EvalOptions opt;
      opt.config_hash = r.config_hash;
      row.splits.emplace_back(split, evaluate(*model, dataset, split, opt).summary);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_json(const std::vector<SweepRow>& rows) {
  ojson out = ojson::array();
  for (const auto& r : rows) {
    ojson splits;
    for (const auto& [name, s] : r.splits) splits[name] = {{"LE", s.mean_le}, {"Acc5", s.acc5}, {"Acc0", s.acc0}};
    out.push_back({{"axis", r.axis}, {"value", r.value}, {"configHash", r.config_hash}, {"splits", splits}});
  }
  return out.dump(2);
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "axis" << std::setw(8) << "value" << std::setw(18) << "config";
  if (!rows.empty()) {
    for (const auto& [name, s] : rows.front().splits) {
      out << std::right << std::setw(10) << (name + " LE") << std::setw(12) << (name + " Acc5") << "  ";
    }
  }
  out << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(14) << r.axis << std::setw(8) << format_fixed(r.value, 2) << std::setw(18)
        << r.config_hash;
    for (const auto& [name, s] : r.splits) {
      out << std::right << std::setw(10) << format_fixed(s.mean_le, 2) << std::setw(12)
          << format_fixed(100.0 * s.acc5, 2) << "  ";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dialoc
