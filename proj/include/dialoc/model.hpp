#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dialoc/tensor.hpp"
#include "dialoc/world.hpp"

namespace dialoc {

enum class Variant { kExplicit, kImplicit, kConvBaseline };

std::string variant_name(Variant v);
/// Accepts "explicit", "implicit", "convBaseline".
Variant variant_from_name(const std::string& name);

/// One layer of the prediction head: stride-2 conv ("c") or stride-2 transposed conv ("d").
struct HeadLayer {
  char kind = 'c';
  int channels = 0;
  bool operator==(const HeadLayer&) const = default;
};

/// Parses "c32,c32,d16,d1"; the last layer must output 1 channel.
std::vector<HeadLayer> parse_head_spec(const std::string& spec);
std::string head_spec_string(const std::vector<HeadLayer>& layers);

struct ModelConfig {
  int embed_dim = 64;
  int heads = 4;
  int patch_size = 8;
  int map_size = 64;
  int text_len = 32;
  int max_text_tokens = 192;  // single-shot bound on concatenated dialogs
  int text_layers = 2;
  int map_layers = 4;
  int fusion_depth = 1;
  int ff_mult = 2;
  int vocab_size = 0;  // 0 = size of the standard vocabulary
  Variant variant = Variant::kExplicit;
  bool freeze_text = false;
  std::vector<HeadLayer> head = parse_head_spec("c32,c32,d16,d1");
  int target_h = 64;
  int target_w = 64;
  int baseline_channels = 16;

  int map_tokens() const { return (map_size / patch_size) * (map_size / patch_size); }
  int grid() const { return map_size / patch_size; }
  /// Throws std::invalid_argument on the first violated constraint.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Encoded dialog text plus its key mask (1 = real token).
struct TextEncoding {
  Var tokens;  // [N, C]
  std::vector<std::uint8_t> mask;
};

/// Multi-shot belief: hidden state S_t and the per-turn heatmap logits.
struct BeliefState {
  Var visual;  // V (or F for the convolutional baseline), computed once per dialog
  Var state;   // S_t (or the hidden feature map)
  int turn_index = 0;
  std::vector<Var> heatmaps;  // each [h0, w0]
};

class DiaLocModel {
 public:
  DiaLocModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& parameter(const std::string& name) const;
  /// True for parameters owned by the text encoder.
  static bool is_text_parameter(const std::string& name);
  std::size_t parameter_count() const;

  /// Patch embedding plus position embedding, before any transformer block.
  Var patch_embed(const Tensor& image) const;
  Var encode_map(const Tensor& image) const;
  TextEncoding encode_text(std::span<const int> ids) const;
  Var init_state(const Var& visual) const;
  Var fuse_step(const Var& visual, const Var& previous, const TextEncoding& text) const;
  /// The fusion encoder alone on an explicit input (d blocks plus the final norm).
  Var fusion(const Var& input, const TextEncoding& text) const;
  Var predict_head(const Var& state) const;

  /// Convolutional baseline pieces.
  Var encode_conv_features(const Tensor& image) const;
  /// Returns the next hidden feature map; writes the heatmap logits to `heatmap`.
  Var conv_baseline_step(const Var& features, const Var& hidden, const TextEncoding& text, Var* heatmap) const;

  std::uint64_t map_encoder_calls() const { return map_calls_.load(); }

 private:
  Var p(int index) const { return params_[static_cast<std::size_t>(index)].node; }
  int add_param(const std::string& name, Tensor value);
  Var transformer_block(const Var& x, const std::string& prefix, std::span<const std::uint8_t> mask) const;
  Var attention(const Var& q_in, const Var& kv_in, const std::string& prefix, std::span<const std::uint8_t> mask) const;
  Var feed_forward(const Var& x, const std::string& prefix) const;
  Var norm(const Var& x, const std::string& prefix) const;
  Var lin(const Var& x, const std::string& prefix) const;
  int index_of(const std::string& name) const;

  void add_linear(const std::string& prefix, int in, int out);
  void add_norm(const std::string& prefix, int width);
  void add_block(const std::string& prefix, bool cross);

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::vector<std::pair<std::string, int>> index_;  // sorted by name
  mutable std::atomic<std::uint64_t> map_calls_{0};
};

/// Starts a dialog: encodes the map once and sets the initial state.
BeliefState begin_dialog(const DiaLocModel& model, const Tensor& image);
/// Consumes one tokenized turn and appends its heatmap.
void advance(const DiaLocModel& model, BeliefState& belief, std::span<const int> turn_tokens);
BeliefState run_dialog(const DiaLocModel& model, const Tensor& image, const std::vector<std::vector<int>>& turns);
/// One fusion pass over the concatenated dialog tokens.
Var single_shot_forward(const DiaLocModel& model, const Tensor& image, std::span<const int> dialog_tokens);

/// Argmax over logits [h, w]; ties resolve to the smallest row-major index. Returns (x=col, y=row).
Point predict_location(const Tensor& logits);

// ---- checkpoints ----------------------------------------------------------------

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string extra_json = "{}";  // free-form, e.g. the training config
};

void save_checkpoint(const std::filesystem::path& path, const DiaLocModel& model, const CheckpointMeta& meta);
/// Throws DataError on a malformed file.
std::unique_ptr<DiaLocModel> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
/// Serialized bytes of a checkpoint (used for hashing and round-trip tests).
std::string checkpoint_bytes(const DiaLocModel& model, const CheckpointMeta& meta);

}  // namespace dialoc
