#include "dialoc/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "dialoc/dialog.hpp"
#include "dialoc/util.hpp"

namespace dialoc {

namespace {

using ojson = nlohmann::ordered_json;

constexpr char kMagic[4] = {'D', 'L', 'C', '1'};
constexpr std::uint16_t kCheckpointVersion = 1;

Tensor uniform_init(Shape shape, double bound, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor normal_init(Shape shape, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kExplicit: return "explicit";
    case Variant::kImplicit: return "implicit";
    case Variant::kConvBaseline: return "convBaseline";
  }
  return "explicit";
}

Variant variant_from_name(const std::string& name) {
  if (name == "explicit") return Variant::kExplicit;
  if (name == "implicit") return Variant::kImplicit;
  if (name == "convBaseline") return Variant::kConvBaseline;
  throw std::invalid_argument("unknown variant '" + name + "' (expected explicit, implicit or convBaseline)");
}

std::vector<HeadLayer> parse_head_spec(const std::string& spec) {
  std::vector<HeadLayer> layers;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    const std::size_t end = std::min(spec.find(',', pos), spec.size());
    const std::string item = spec.substr(pos, end - pos);
    if (item.size() < 2 || (item[0] != 'c' && item[0] != 'd')) {
      throw std::invalid_argument("head spec: bad layer '" + item + "' in '" + spec + "'");
    }
    HeadLayer layer;
    layer.kind = item[0];
    try {
      layer.channels = std::stoi(item.substr(1));
    } catch (const std::exception&) {
      throw std::invalid_argument("head spec: bad channel count in '" + item + "'");
    }
    if (layer.channels < 1) throw std::invalid_argument("head spec: channel count must be positive");
    layers.push_back(layer);
    pos = end + 1;
  }
  if (layers.empty()) throw std::invalid_argument("head spec: empty");
  if (layers.back().channels != 1) throw std::invalid_argument("head spec: last layer must have 1 channel");
  return layers;
}

std::string head_spec_string(const std::vector<HeadLayer>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    out += layers[i].kind + std::to_string(layers[i].channels);
  }
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (embed_dim < 1 || heads < 1) fail("embedDim and heads must be positive");
  if (embed_dim % heads != 0) fail("embedDim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
  if (patch_size < 1 || map_size % patch_size != 0) fail("mapSize must be divisible by patchSize");
  if (text_len < 5) fail("textLen must be at least 5");
  if (max_text_tokens < text_len) fail("maxTextTokens must be >= textLen");
  if (text_layers < 0 || map_layers < 0) fail("layer counts must be >= 0");
  if (fusion_depth < 1) fail("fusionDepth must be >= 1");
  if (ff_mult < 1) fail("ffMult must be >= 1");
  if (target_h < 1 || target_w < 1) fail("target size must be positive");
  if (baseline_channels < 1) fail("baselineChannels must be positive");
  if (head.empty() || head.back().channels != 1) fail("head must end with a 1-channel layer");
  int side = grid();
  for (const auto& l : head) {
    if (l.kind == 'c') {
      if (side < 2 || side % 2 != 0) fail("head conv needs an even spatial size, got " + std::to_string(side));
      side /= 2;
    } else {
      side *= 2;
    }
  }
}

std::string ModelConfig::to_json() const {
  ojson j;
  j["embedDim"] = embed_dim;
  j["heads"] = heads;
  j["patchSize"] = patch_size;
  j["mapSize"] = map_size;
  j["mapTokens"] = map_tokens();
  j["textLen"] = text_len;
  j["maxTextTokens"] = max_text_tokens;
  j["textLayers"] = text_layers;
  j["mapLayers"] = map_layers;
  j["fusionDepth"] = fusion_depth;
  j["ffMult"] = ff_mult;
  j["vocabSize"] = vocab_size;
  j["variant"] = variant_name(variant);
  j["freezeText"] = freeze_text;
  j["headSpec"] = head_spec_string(head);
  j["targetH"] = target_h;
  j["targetW"] = target_w;
  j["baselineChannels"] = baseline_channels;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  const ojson j = ojson::parse(text);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("embedDim", c.embed_dim);
  get("heads", c.heads);
  get("patchSize", c.patch_size);
  get("mapSize", c.map_size);
  get("textLen", c.text_len);
  get("maxTextTokens", c.max_text_tokens);
  get("textLayers", c.text_layers);
  get("mapLayers", c.map_layers);
  get("fusionDepth", c.fusion_depth);
  get("ffMult", c.ff_mult);
  get("vocabSize", c.vocab_size);
  get("freezeText", c.freeze_text);
  get("targetH", c.target_h);
  get("targetW", c.target_w);
  get("baselineChannels", c.baseline_channels);
  if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("headSpec")) c.head = parse_head_spec(j.at("headSpec").get<std::string>());
  return c;
}

// ---- construction ------------------------------------------------------------------

DiaLocModel::DiaLocModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  if (config_.vocab_size == 0) config_.vocab_size = Vocabulary::standard().size();
  config_.validate();
  const int C = config_.embed_dim;

  add_param("text.embed.weight", normal_init({config_.vocab_size, C}, 0.02, derive_seed(seed_, "text.embed")));
  add_param("text.pos.weight", normal_init({config_.max_text_tokens, C}, 0.02, derive_seed(seed_, "text.pos")));
  for (int i = 0; i < config_.text_layers; ++i) add_block("text.block" + std::to_string(i), false);
  add_norm("text.norm", C);

  if (config_.variant == Variant::kConvBaseline) {
    const int Cf = config_.baseline_channels;
    auto conv = [&](const std::string& name, Shape shape, int fan_in, int fan_out) {
      add_param(name + ".weight", uniform_init(shape, std::sqrt(6.0 / (fan_in + fan_out)), derive_seed(seed_, name)));
    };
    conv("baseline.enc0", {16, 3, 3, 3}, 27, 144);
    add_param("baseline.enc0.bias", Tensor::zeros({16}));
    conv("baseline.enc1", {Cf, 16, 3, 3}, 144, Cf * 9);
    add_param("baseline.enc1.bias", Tensor::zeros({Cf}));
    add_linear("baseline.filter", C, Cf * Cf);
    conv("baseline.dec0", {Cf, 8, 4, 4}, Cf * 16, 8 * 16);
    add_param("baseline.dec0.bias", Tensor::zeros({8}));
    conv("baseline.dec1", {1, 8, 3, 3}, 72, 9);
    add_param("baseline.dec1.bias", Tensor::zeros({1}));
  } else {
    const int M = config_.map_tokens();
    const int patch_in = 3 * config_.patch_size * config_.patch_size;
    add_linear("map.patch", patch_in, C);
    add_param("map.pos.weight", normal_init({M, C}, 0.02, derive_seed(seed_, "map.pos")));
    for (int i = 0; i < config_.map_layers; ++i) add_block("map.block" + std::to_string(i), false);
    add_norm("map.norm", C);

    add_linear("fusion.text_mlp.fc1", C, C);
    add_linear("fusion.text_mlp.fc2", C, C);
    for (int i = 0; i < config_.fusion_depth; ++i) add_block("fusion.block" + std::to_string(i), true);
    add_norm("fusion.norm", C);

    int in = C;
    for (std::size_t i = 0; i < config_.head.size(); ++i) {
      const auto& l = config_.head[i];
      const std::string name = "head.layer" + std::to_string(i);
      const int k = l.kind == 'c' ? 3 : 4;
      const Shape shape = l.kind == 'c' ? Shape{l.channels, in, k, k} : Shape{in, l.channels, k, k};
      add_param(name + ".weight",
                uniform_init(shape, std::sqrt(6.0 / ((in + l.channels) * k * k)), derive_seed(seed_, name)));
      add_param(name + ".bias", Tensor::zeros({l.channels}));
      in = l.channels;
    }
  }

  if (config_.freeze_text) {
    for (auto& prm : params_) {
      if (!is_text_parameter(prm.name)) continue;
      prm.node->requires_grad = false;
      prm.node->grad = Tensor();
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace_back(params_[i].name, static_cast<int>(i));
  std::sort(index_.begin(), index_.end());
  for (std::size_t i = 1; i < index_.size(); ++i) {
    if (index_[i].first == index_[i - 1].first) throw std::logic_error("duplicate parameter " + index_[i].first);
  }
}

int DiaLocModel::add_param(const std::string& name, Tensor value) {
  params_.push_back({name, variable(std::move(value), true)});
  return static_cast<int>(params_.size()) - 1;
}

void DiaLocModel::add_linear(const std::string& prefix, int in, int out) {
  add_param(prefix + ".weight", uniform_init({in, out}, std::sqrt(6.0 / (in + out)), derive_seed(seed_, prefix)));
  add_param(prefix + ".bias", Tensor::zeros({out}));
}

void DiaLocModel::add_norm(const std::string& prefix, int width) {
  add_param(prefix + ".weight", Tensor::ones({width}));
  add_param(prefix + ".bias", Tensor::zeros({width}));
}

void DiaLocModel::add_block(const std::string& prefix, bool cross) {
  const int C = config_.embed_dim;
  auto attention_params = [&](const std::string& p) {
    add_linear(p + ".q_proj", C, C);
    add_linear(p + ".k_proj", C, C);
    add_linear(p + ".v_proj", C, C);
    add_linear(p + ".out_proj", C, C);
  };
  add_norm(prefix + ".ln1", C);
  attention_params(prefix + ".sa");
  if (cross) {
    add_norm(prefix + ".ln2", C);
    attention_params(prefix + ".ca");
  }
  add_norm(prefix + ".ln_ff", C);
  add_linear(prefix + ".ff.fc1", C, C * config_.ff_mult);
  add_linear(prefix + ".ff.fc2", C * config_.ff_mult, C);
}

int DiaLocModel::index_of(const std::string& name) const {
  const auto it = std::lower_bound(index_.begin(), index_.end(), std::make_pair(name, -1));
  if (it == index_.end() || it->first != name) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Parameter& DiaLocModel::parameter(const std::string& name) const { return params_[index_of(name)]; }

bool DiaLocModel::is_text_parameter(const std::string& name) { return name.rfind("text.", 0) == 0; }

std::size_t DiaLocModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& prm : params_) n += prm.node->value.numel();
  return n;
}

// ---- building blocks ------------------------------------------------------------------

Var DiaLocModel::lin(const Var& x, const std::string& prefix) const {
  return linear(x, p(index_of(prefix + ".weight")), p(index_of(prefix + ".bias")));
}

Var DiaLocModel::norm(const Var& x, const std::string& prefix) const {
  return layer_norm(x, p(index_of(prefix + ".weight")), p(index_of(prefix + ".bias")));
}

Var DiaLocModel::attention(const Var& q_in, const Var& kv_in, const std::string& prefix,
                           std::span<const std::uint8_t> mask) const {
  Var q = lin(q_in, prefix + ".q_proj");
  Var k = lin(kv_in, prefix + ".k_proj");
  Var v = lin(kv_in, prefix + ".v_proj");
  return lin(attention_heads(q, k, v, config_.heads, mask), prefix + ".out_proj");
}

Var DiaLocModel::feed_forward(const Var& x, const std::string& prefix) const {
  return lin(gelu(lin(x, prefix + ".fc1")), prefix + ".fc2");
}

Var DiaLocModel::transformer_block(const Var& x, const std::string& prefix, std::span<const std::uint8_t> mask) const {
  Var h = norm(x, prefix + ".ln1");
  Var y = add(x, attention(h, h, prefix + ".sa", mask));
  return add(y, feed_forward(norm(y, prefix + ".ln_ff"), prefix + ".ff"));
}

// ---- encoders ------------------------------------------------------------------------

Var DiaLocModel::patch_embed(const Tensor& image) const {
  const int S = config_.map_size, P = config_.patch_size, G = config_.grid();
  const Shape expected{3, S, S};
  if (image.shape() != expected) {
    throw DimensionError("encode_map: image " + shape_str(image.shape()) + " does not match " + shape_str(expected));
  }
  Tensor patches({G * G, 3 * P * P});
  for (int gr = 0; gr < G; ++gr) {
    for (int gc = 0; gc < G; ++gc) {
      float* row = patches.ptr() + static_cast<std::size_t>(gr * G + gc) * 3 * P * P;
      for (int ch = 0; ch < 3; ++ch)
        for (int dy = 0; dy < P; ++dy)
          for (int dx = 0; dx < P; ++dx) *row++ = image.at(ch, gr * P + dy, gc * P + dx);
    }
  }
  return add(lin(constant(std::move(patches)), "map.patch"), p(index_of("map.pos.weight")));
}

Var DiaLocModel::encode_map(const Tensor& image) const {
  if (config_.variant == Variant::kConvBaseline) return encode_conv_features(image);
  map_calls_.fetch_add(1);
  Var x = patch_embed(image);
  for (int i = 0; i < config_.map_layers; ++i) x = transformer_block(x, "map.block" + std::to_string(i), {});
  return norm(x, "map.norm");
}

TextEncoding DiaLocModel::encode_text(std::span<const int> ids) const {
  const int n = static_cast<int>(ids.size());
  if (n < 1 || n > config_.max_text_tokens) {
    throw DimensionError("encode_text: " + std::to_string(n) + " tokens, limit " + std::to_string(config_.max_text_tokens));
  }
  TextEncoding out;
  out.mask.resize(ids.size());
  std::vector<int> positions(ids.size());
  for (int i = 0; i < n; ++i) {
    out.mask[i] = ids[i] != Vocabulary::kPad ? 1 : 0;
    positions[i] = i;
  }
  Var x = add(embedding(ids, p(index_of("text.embed.weight"))), embedding(positions, p(index_of("text.pos.weight"))));
  for (int i = 0; i < config_.text_layers; ++i) x = transformer_block(x, "text.block" + std::to_string(i), out.mask);
  out.tokens = norm(x, "text.norm");
  return out;
}

Var DiaLocModel::init_state(const Var& visual) const {
  switch (config_.variant) {
    case Variant::kExplicit: return constant(Tensor::ones(visual->value.shape()));
    case Variant::kImplicit: return visual;
    case Variant::kConvBaseline: return constant(Tensor::ones(visual->value.shape()));
  }
  return visual;
}

Var DiaLocModel::fusion(const Var& input, const TextEncoding& text) const {
  Var lt = lin(gelu(lin(text.tokens, "fusion.text_mlp.fc1")), "fusion.text_mlp.fc2");
  Var x = input;
  for (int i = 0; i < config_.fusion_depth; ++i) {
    const std::string b = "fusion.block" + std::to_string(i);
    Var h = norm(x, b + ".ln1");
    x = add(x, attention(h, h, b + ".sa", {}));
    x = add(x, attention(norm(x, b + ".ln2"), lt, b + ".ca", text.mask));
    x = add(x, feed_forward(norm(x, b + ".ln_ff"), b + ".ff"));
  }
  return norm(x, "fusion.norm");
}

Var DiaLocModel::fuse_step(const Var& visual, const Var& previous, const TextEncoding& text) const {
  if (visual->value.shape() != previous->value.shape()) {
    throw DimensionError("fuse_step: state " + shape_str(previous->value.shape()) + " vs visual " +
                         shape_str(visual->value.shape()));
  }
  Var input = config_.variant == Variant::kExplicit ? mul(visual, previous) : previous;
  return fusion(input, text);
}

Var DiaLocModel::predict_head(const Var& state) const {
  const int G = config_.grid(), C = config_.embed_dim;
  const Shape expected{G * G, C};
  if (state->value.shape() != expected) {
    throw DimensionError("predict_head: state " + shape_str(state->value.shape()) + " expected " + shape_str(expected));
  }
  Var x = reshape(transpose(state), {C, G, G});
  for (std::size_t i = 0; i < config_.head.size(); ++i) {
    const std::string name = "head.layer" + std::to_string(i);
    const Var w = p(index_of(name + ".weight"));
    const Var b = p(index_of(name + ".bias"));
    x = config_.head[i].kind == 'c' ? conv2d(x, w, b, 2, 1) : conv_transpose2d(x, w, b, 2, 1);
    if (i + 1 < config_.head.size()) x = gelu(x);
  }
  const int h = x->value.dim(1), w = x->value.dim(2);
  if (h != config_.target_h || w != config_.target_w) x = upsample_bilinear(x, config_.target_h, config_.target_w);
  return reshape(x, {config_.target_h, config_.target_w});
}

Var DiaLocModel::encode_conv_features(const Tensor& image) const {
  const int S = config_.map_size;
  const Shape expected{3, S, S};
  if (image.shape() != expected) {
    throw DimensionError("encode_map: image " + shape_str(image.shape()) + " does not match " + shape_str(expected));
  }
  map_calls_.fetch_add(1);
  Var x = relu(conv2d(constant(image), p(index_of("baseline.enc0.weight")), p(index_of("baseline.enc0.bias")), 2, 1));
  return relu(conv2d(x, p(index_of("baseline.enc1.weight")), p(index_of("baseline.enc1.bias")), 2, 1));
}

Var DiaLocModel::conv_baseline_step(const Var& features, const Var& hidden, const TextEncoding& text,
                                    Var* heatmap) const {
  if (features->value.shape() != hidden->value.shape()) {
    throw DimensionError("conv_baseline_step: hidden " + shape_str(hidden->value.shape()) + " vs features " +
                         shape_str(features->value.shape()));
  }
  const int Cf = features->value.dim(0), H = features->value.dim(1), W = features->value.dim(2);
  const int n = static_cast<int>(text.mask.size());
  int valid = 0;
  for (auto m : text.mask) valid += m;
  Tensor pool({1, n});
  for (int i = 0; i < n; ++i) pool[i] = valid > 0 && text.mask[i] ? 1.0f / static_cast<float>(valid) : 0.0f;
  Var pooled = matmul(constant(std::move(pool)), text.tokens);
  Var filter = reshape(lin(pooled, "baseline.filter"), {Cf, Cf});
  Var mixed = matmul(filter, reshape(mul(features, hidden), {Cf, H * W}));
  Var next = reshape(scale(sigmoid(mixed), 2.0f), {Cf, H, W});
  Var d = gelu(conv_transpose2d(next, p(index_of("baseline.dec0.weight")), p(index_of("baseline.dec0.bias")), 2, 1));
  d = conv2d(d, p(index_of("baseline.dec1.weight")), p(index_of("baseline.dec1.bias")), 1, 1);
  if (d->value.dim(1) != config_.target_h || d->value.dim(2) != config_.target_w) {
    d = upsample_bilinear(d, config_.target_h, config_.target_w);
  }
  if (heatmap) *heatmap = reshape(d, {config_.target_h, config_.target_w});
  return next;
}

// ---- dialog recursion ---------------------------------------------------------------------

BeliefState begin_dialog(const DiaLocModel& model, const Tensor& image) {
  BeliefState b;
  b.visual = model.encode_map(image);
  b.state = model.init_state(b.visual);
  return b;
}

void advance(const DiaLocModel& model, BeliefState& belief, std::span<const int> turn_tokens) {
  const TextEncoding text = model.encode_text(turn_tokens);
  if (model.config().variant == Variant::kConvBaseline) {
    Var heat;
    belief.state = model.conv_baseline_step(belief.visual, belief.state, text, &heat);
    belief.heatmaps.push_back(heat);
  } else {
    belief.state = model.fuse_step(belief.visual, belief.state, text);
    belief.heatmaps.push_back(model.predict_head(belief.state));
  }
  ++belief.turn_index;
}

BeliefState run_dialog(const DiaLocModel& model, const Tensor& image, const std::vector<std::vector<int>>& turns) {
  if (turns.empty() || static_cast<int>(turns.size()) > kMaxTurns) {
    throw std::invalid_argument("run_dialog: T must be in [1, 6], got " + std::to_string(turns.size()));
  }
  BeliefState b = begin_dialog(model, image);
  for (const auto& t : turns) advance(model, b, t);
  return b;
}

Var single_shot_forward(const DiaLocModel& model, const Tensor& image, std::span<const int> dialog_tokens) {
  BeliefState b = begin_dialog(model, image);
  advance(model, b, dialog_tokens);
  return b.heatmaps.back();
}

Point predict_location(const Tensor& logits) {
  if (logits.rank() != 2 || logits.numel() == 0) throw DimensionError("predict_location: expected [h, w] logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  const int w = logits.dim(1);
  return {static_cast<int>(best % w), static_cast<int>(best / w)};
}

// ---- checkpoints -------------------------------------------------------------------------

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError(source_ + ": truncated checkpoint");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (u8() << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const DiaLocModel& model, const CheckpointMeta& meta) {
  ojson j;
  j["modelConfig"] = ojson::parse(model.config().to_json());
  j["step"] = meta.step;
  j["seed"] = meta.seed;
  j["extra"] = ojson::parse(meta.extra_json.empty() ? "{}" : meta.extra_json);
  const std::string header = j.dump();

  std::string out(kMagic, 4);
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& prm : model.parameters()) {
    put_u16(out, static_cast<std::uint16_t>(prm.name.size()));
    out += prm.name;
    const Tensor& t = prm.node->value;
    out.push_back(static_cast<char>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const DiaLocModel& model, const CheckpointMeta& meta) {
  write_file(path, checkpoint_bytes(model, meta));
}

std::unique_ptr<DiaLocModel> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  const std::string bytes = read_file(path);
  Reader in(bytes, path.string());
  if (in.str(4) != std::string(kMagic, 4)) throw DataError(path.string() + ": not a checkpoint (bad magic)");
  const std::uint16_t version = in.u16();
  if (version != kCheckpointVersion) throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const std::string header = in.str(in.u32());
  std::unique_ptr<DiaLocModel> model;
  CheckpointMeta m;
  try {
    const ojson j = ojson::parse(header);
    m.step = j.at("step").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.extra_json = j.at("extra").dump();
    model = std::make_unique<DiaLocModel>(ModelConfig::from_json(j.at("modelConfig").dump()), m.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  const std::uint32_t count = in.u32();
  if (count != model->parameters().size()) {
    throw DataError(path.string() + ": checkpoint has " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(model->parameters().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.str(in.u16());
    const int rank = in.u8();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(in.u32());
    const Parameter* target = nullptr;
    try {
      target = &model->parameter(name);
    } catch (const std::out_of_range&) {
      throw DataError(path.string() + ": unexpected parameter " + name);
    }
    if (target->node->value.shape() != shape) {
      throw DataError(path.string() + ": parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                      shape_str(target->node->value.shape()));
    }
    for (auto& v : target->node->value.data()) v = std::bit_cast<float>(in.u32());
  }
  if (!in.done()) throw DataError(path.string() + ": trailing bytes after parameter records");
  if (meta) *meta = m;
  return model;
}

}  // namespace dialoc
