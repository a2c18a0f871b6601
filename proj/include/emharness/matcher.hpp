#pragma once

#include <chrono>
#include <optional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emharness/demos.hpp"
#include "emharness/llmclient.hpp"
#include "emharness/promptkit.hpp"
#include "emharness/records.hpp"

namespace emh::matcher {

using records::Label;

namespace detail {

/// Lowercased words of `completion` after deleting ASCII punctuation.
inline std::vector<std::string> answer_tokens(std::string_view completion) {
  std::string cleaned;
  cleaned.reserve(completion.size());
  for (char c : completion) {
    if (text::is_ascii_punct(c)) continue;
    cleaned += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) ++j;
    if (j > i) out.push_back(cleaned.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Match iff the standalone word "yes" occurs anywhere in the completion.
inline Label parse_decision(std::string_view completion) {
  for (const auto& t : detail::answer_tokens(completion))
    if (t == "yes") return Label::Match;
  return Label::NonMatch;
}

/// True when the completion contains neither "yes" nor "no"; such answers
/// count as NonMatch but are flagged in reports.
inline bool is_ambiguous(std::string_view completion) {
  for (const auto& t : detail::answer_tokens(completion))
    if (t == "yes" || t == "no") return false;
  return true;
}

struct MatchDecision {
  std::string pair_id;
  Label predicted = Label::NonMatch;
  std::string raw_completion;
  llm::TokenUsage usage;
  std::string design_name;
  std::string model_id;
};

struct MatchFailure {
  std::string pair_id;
  std::string design_name;
  std::string model_id;
  llm::FailureKind kind = llm::FailureKind::Other;
  std::string message;
};

struct MatchRun {
  std::vector<MatchDecision> decisions;
  std::vector<MatchFailure> failures;
  /// Prompt of every pair, aligned with the dataset.
  std::vector<Conversation> conversations;
  /// Per-request latency in seconds for successful requests.
  std::vector<double> latencies;
  double wall_seconds = 0.0;
};

struct DemoConfig {
  const demos::DemonstrationPool* pool = nullptr;
  demos::SelectionStrategy strategy = demos::Related{};
  std::size_t shots = 6;
};

struct MatchOptions {
  std::string model_id;
  double temperature = 0.0;
  std::optional<int> max_output_tokens;
  std::optional<DemoConfig> demos;
  std::optional<prompts::RuleSet> rules;
  prompts::DemoStyle demo_style = prompts::DemoStyle::Conversational;
  llm::BatchOptions batch;
  /// Authentication failures abort the run instead of being recorded.
  bool abort_on_auth = true;
};

inline Conversation render_for_pair(const records::CandidatePair& pair, const prompts::PromptDesign& design,
                                    const MatchOptions& opts) {
  if (opts.demos && opts.rules) throw ConfigError("demonstrations and rules are mutually exclusive");
  if (opts.rules) return prompts::render_match_prompt(design, pair, {}, &*opts.rules);
  if (opts.demos) {
    if (!opts.demos->pool) throw ConfigError("demonstration selection needs a pool");
    auto demos = demos::select_demonstrations(*opts.demos->pool, opts.demos->strategy, opts.demos->shots, &pair);
    return prompts::render_match_prompt(design, pair, demos, nullptr, opts.demo_style);
  }
  return prompts::render_match_prompt(design, pair);
}

/// Renders, completes and parses every pair of a test dataset, in dataset
/// order. Backend failures become MatchFailure entries.
inline MatchRun match_dataset(const records::Dataset& dataset, const prompts::PromptDesign& design,
                              const MatchOptions& opts, llm::Client& client) {
  if (dataset.split != records::Split::Test) throw ConfigError("matching runs are evaluated on test splits");
  if (opts.demos && opts.demos->pool && opts.demos->pool->source().split != records::Split::Development)
    throw ConfigError("demonstrations must come from a development split");
  MatchRun run;
  std::vector<llm::CompletionRequest> requests;
  requests.reserve(dataset.pairs.size());
  for (const auto& pair : dataset.pairs) {
    run.conversations.push_back(render_for_pair(pair, design, opts));
    requests.push_back({opts.model_id, run.conversations.back(), opts.temperature, opts.max_output_tokens});
  }
  auto t0 = std::chrono::steady_clock::now();
  auto slots = client.run_batch(requests, opts.batch);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& pair = dataset.pairs[i];
    auto& slot = slots[i];
    if (!slot.ok()) {
      if (opts.abort_on_auth && slot.kind == llm::FailureKind::Auth) std::rethrow_exception(slot.error);
      run.failures.push_back({pair.pair_id, design.name, opts.model_id, slot.kind, slot.message});
      continue;
    }
    auto& r = *slot.result;
    run.decisions.push_back({pair.pair_id, parse_decision(r.text), r.text, r.usage, design.name, opts.model_id});
    run.latencies.push_back(r.latency);
  }
  return run;
}

/// Script entries answering every pair of `dataset` with its gold label
/// (or the opposite label when `invert`), keyed on the framed pair text.
inline std::vector<llm::ScriptEntry> make_oracle_script(const records::Dataset& dataset, bool invert = false) {
  std::vector<llm::ScriptEntry> script;
  for (const auto& p : dataset.pairs) {
    bool yes = (p.gold == Label::Match) != invert;
    llm::ScriptEntry e;
    e.kind = llm::MatchKind::Substring;
    e.pattern = records::frame_pair(p);
    e.response = yes ? "Yes." : "No.";
    script.push_back(std::move(e));
  }
  return script;
}

// ---------------------------------------------------------------------------
// Persistence (JSON lines)

inline nlohmann::json to_json(const MatchDecision& d) {
  return {{"pair_id", d.pair_id},
          {"predicted", std::string(records::to_string(d.predicted))},
          {"raw_completion", d.raw_completion},
          {"usage", {{"prompt_tokens", d.usage.prompt_tokens}, {"completion_tokens", d.usage.completion_tokens}}},
          {"design_name", d.design_name},
          {"model_id", d.model_id}};
}

inline MatchDecision decision_from_json(const nlohmann::json& j) {
  MatchDecision d;
  d.pair_id = j.at("pair_id").get<std::string>();
  d.predicted = records::label_from_string(j.at("predicted").get<std::string>());
  d.raw_completion = j.at("raw_completion").get<std::string>();
  d.usage = {j.at("usage").at("prompt_tokens").get<std::size_t>(), j.at("usage").at("completion_tokens").get<std::size_t>()};
  d.design_name = j.at("design_name").get<std::string>();
  d.model_id = j.at("model_id").get<std::string>();
  return d;
}

inline nlohmann::json to_json(const MatchFailure& f) {
  return {{"pair_id", f.pair_id},
          {"design_name", f.design_name},
          {"model_id", f.model_id},
          {"kind", std::string(llm::to_string(f.kind))},
          {"message", f.message}};
}

inline MatchFailure failure_from_json(const nlohmann::json& j) {
  MatchFailure f;
  f.pair_id = j.at("pair_id").get<std::string>();
  f.design_name = j.at("design_name").get<std::string>();
  f.model_id = j.at("model_id").get<std::string>();
  auto k = j.at("kind").get<std::string>();
  for (auto kind : {llm::FailureKind::Transport, llm::FailureKind::RateLimit, llm::FailureKind::Auth,
                    llm::FailureKind::Permanent, llm::FailureKind::Other})
    if (llm::to_string(kind) == k) f.kind = kind;
  f.message = j.at("message").get<std::string>();
  return f;
}

template <class T>
void write_jsonl(std::ostream& out, const std::vector<T>& items) {
  for (const auto& x : items) out << to_json(x).dump() << '\n';
}

/// Reads JSON lines, converting each with `parse`. Errors name the line.
template <class F>
auto read_jsonl(std::istream& in, F parse, const std::string& source) {
  std::vector<decltype(parse(nlohmann::json{}))> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(source + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace emh::matcher
