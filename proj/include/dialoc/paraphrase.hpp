#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dialoc/dialog.hpp"
#include "dialoc/util.hpp"

namespace dialoc {

/// Phrase substitutions plus an optional clause-reordering rule.
struct SynonymTable {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>>> entries;
  bool reorder_clauses = false;

  static SynonymTable standard();
  /// No substitutions, no reordering: paraphrasing is a no-op.
  static SynonymTable identity();
};

class ParaphraseProvider {
 public:
  virtual ~ParaphraseProvider() = default;
  virtual std::string name() const = 0;
  /// Rewritten turns, or nullopt when the provider could not produce them.
  virtual std::optional<std::vector<Turn>> rewrite(const DialogSample& sample, std::uint64_t seed) = 0;
};

class RuleBasedParaphraser final : public ParaphraseProvider {
 public:
  explicit RuleBasedParaphraser(SynonymTable table = SynonymTable::standard()) : table_(std::move(table)) {}
  std::string name() const override { return "ruleBased"; }
  std::optional<std::vector<Turn>> rewrite(const DialogSample& sample, std::uint64_t seed) override;
  std::string rewrite_utterance(const std::string& text, Rng& rng) const;

 private:
  SynonymTable table_;
};

struct RemoteCompletionConfig {
  std::string url;                      // e.g. http://127.0.0.1:9000/v1/paraphrase
  std::string credential_env = "DIALOC_PARAPHRASE_TOKEN";
  std::string prompt = "Paraphrase the dialog";
  double temperature = 0.6;
  double top_p = 0.5;
  double timeout_seconds = 10.0;
};

/// POSTs {prompt, dialog, temperature, top_p} and expects {"dialog": [{locator, observer}, ...]}.
class RemoteCompletionParaphraser final : public ParaphraseProvider {
 public:
  explicit RemoteCompletionParaphraser(RemoteCompletionConfig config) : config_(std::move(config)) {}
  std::string name() const override { return "remoteCompletion"; }
  std::optional<std::vector<Turn>> rewrite(const DialogSample& sample, std::uint64_t seed) override;
  const RemoteCompletionConfig& config() const { return config_; }
  /// Request body as sent on the wire.
  std::string request_body(const DialogSample& sample) const;

 private:
  RemoteCompletionConfig config_;
};

/// Applies a provider. Ground-truth nodes and T never change; on any provider
/// failure the original sample is returned and a warning is logged.
DialogSample paraphrase(const DialogSample& sample, ParaphraseProvider& provider, std::uint64_t seed,
                        int text_len = 32);

/// Chooses between the ground-truth dialog and a paraphrase with fixed probability.
class DialogAugmenter {
 public:
  DialogAugmenter(ParaphraseProvider& provider, double probability, int text_len)
      : provider_(provider), probability_(probability), text_len_(text_len) {}
  /// Returns the sample to train on and whether the paraphrase was chosen.
  std::pair<DialogSample, bool> apply(const DialogSample& sample, Rng& rng);

 private:
  ParaphraseProvider& provider_;
  double probability_;
  int text_len_;
};

}  // namespace dialoc
