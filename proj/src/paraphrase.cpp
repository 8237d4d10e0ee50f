#include "dialoc/paraphrase.hpp"

#include <algorithm>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dialoc/grammar.hpp"

namespace dialoc {

namespace {

using json = nlohmann::json;

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

bool is_terminal(const std::string& w) { return w == "." || w == "?" || w == "!"; }

}  // namespace

SynonymTable SynonymTable::standard() {
  SynonymTable table;
  for (const auto& [from, alts] : grammar::synonyms()) {
    std::vector<std::vector<std::string>> split_alts;
    for (const auto& a : alts) split_alts.push_back(split_words(a));
    table.entries.emplace_back(split_words(from), std::move(split_alts));
  }
  table.reorder_clauses = true;
  return table;
}

SynonymTable SynonymTable::identity() { return SynonymTable{}; }

std::string RuleBasedParaphraser::rewrite_utterance(const std::string& text, Rng& rng) const {
  std::vector<std::string> words = split_words(text);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < words.size();) {
    bool replaced = false;
    for (const auto& [from, alts] : table_.entries) {
      if (from.empty() || alts.empty() || i + from.size() > words.size()) continue;
      if (!std::equal(from.begin(), from.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) continue;
      if (!rng.bernoulli(0.5)) continue;
      const auto& alt = alts[rng.uniform_int(0, static_cast<int>(alts.size()) - 1)];
      out.insert(out.end(), alt.begin(), alt.end());
      i += from.size();
      replaced = true;
      break;
    }
    if (!replaced) out.push_back(words[i++]);
  }
  if (table_.reorder_clauses && std::count(out.begin(), out.end(), ",") == 1 && rng.bernoulli(0.5)) {
    std::string terminal;
    if (!out.empty() && is_terminal(out.back())) {
      terminal = out.back();
      out.pop_back();
    }
    const auto comma = std::find(out.begin(), out.end(), ",");
    std::vector<std::string> first(out.begin(), comma), second(comma + 1, out.end());
    out = second;
    out.push_back(",");
    out.insert(out.end(), first.begin(), first.end());
    if (!terminal.empty()) out.push_back(terminal);
  }
  return join(out);
}

std::optional<std::vector<Turn>> RuleBasedParaphraser::rewrite(const DialogSample& sample, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Turn> turns;
  for (const auto& t : sample.turns) {
    Turn r{rewrite_utterance(t.locator, rng), rewrite_utterance(t.observer, rng)};
    // Identity tables keep the original spelling, not the normalized one.
    if (split_words(r.locator) == split_words(t.locator)) r.locator = t.locator;
    if (split_words(r.observer) == split_words(t.observer)) r.observer = t.observer;
    turns.push_back(std::move(r));
  }
  return turns;
}

std::string RemoteCompletionParaphraser::request_body(const DialogSample& sample) const {
  json body;
  body["prompt"] = config_.prompt;
  body["temperature"] = config_.temperature;
  body["top_p"] = config_.top_p;
  body["dialog"] = json::array();
  for (const auto& t : sample.turns) body["dialog"].push_back({{"locator", t.locator}, {"observer", t.observer}});
  return body.dump();
}

std::optional<std::vector<Turn>> RemoteCompletionParaphraser::rewrite(const DialogSample& sample, std::uint64_t) {
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) {
    spdlog::warn("paraphrase: malformed endpoint URL '{}'", config_.url);
    return std::nullopt;
  }
  const auto path_start = config_.url.find('/', scheme_end + 3);
  const std::string origin = config_.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config_.url.substr(path_start);

  httplib::Client client(origin);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (const char* token = std::getenv(config_.credential_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const auto res = client.Post(path, headers, request_body(sample), "application/json");
  if (!res) {
    spdlog::warn("paraphrase: endpoint {} unreachable ({})", config_.url, httplib::to_string(res.error()));
    return std::nullopt;
  }
  if (res->status != 200) {
    spdlog::warn("paraphrase: endpoint {} returned HTTP {}", config_.url, res->status);
    return std::nullopt;
  }
  try {
    const json j = json::parse(res->body);
    std::vector<Turn> turns;
    for (const auto& t : j.at("dialog")) {
      turns.push_back({t.at("locator").get<std::string>(), t.at("observer").get<std::string>()});
    }
    return turns;
  } catch (const json::exception& e) {
    spdlog::warn("paraphrase: malformed response from {}: {}", config_.url, e.what());
    return std::nullopt;
  }
}

DialogSample paraphrase(const DialogSample& sample, ParaphraseProvider& provider, std::uint64_t seed, int text_len) {
  auto turns = provider.rewrite(sample, seed);
  if (!turns) {
    spdlog::warn("paraphrase: {} failed for {}, keeping the original dialog", provider.name(), sample.sample_id);
    return sample;
  }
  if (turns->size() != sample.turns.size()) {
    spdlog::warn("paraphrase: {} changed the turn count for {}, keeping the original dialog", provider.name(),
                 sample.sample_id);
    return sample;
  }
  DialogSample out = sample;
  out.turns = std::move(*turns);
  retokenize(out, Vocabulary::standard(), text_len);
  return out;
}

std::pair<DialogSample, bool> DialogAugmenter::apply(const DialogSample& sample, Rng& rng) {
  const bool use = rng.bernoulli(probability_);
  const std::uint64_t seed = rng.next();
  if (!use) return {sample, false};
  return {paraphrase(sample, provider_, seed, text_len_), true};
}

}  // namespace dialoc
