#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "emharness/conversation.hpp"
#include "emharness/digest.hpp"
#include "emharness/errors.hpp"

namespace emh::llm {

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;

  std::size_t combined() const { return prompt_tokens + completion_tokens; }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct CompletionRequest {
  std::string model_id;
  Conversation messages;
  double temperature = 0.0;
  std::optional<int> max_output_tokens;
};

struct CompletionResult {
  std::string text;
  TokenUsage usage;
  double latency = 0.0;  // seconds
  std::string backend;
  bool cached = false;
};

inline std::size_t whitespace_token_count(std::string_view s) {
  std::size_t n = 0;
  bool in = false;
  for (char c : s) {
    bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!ws && !in) ++n;
    in = !ws;
  }
  return n;
}

/// A single-attempt chat-completion backend. Implementations must be safe to
/// call concurrently and throw the typed BackendError subclasses.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  virtual std::string id() const = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

enum class MatchKind { Fingerprint, Substring, Pattern };

/// Failure to inject instead of answering.
enum class InjectedFailure { None, Transient, RateLimit, Auth, Permanent };

struct ScriptEntry {
  MatchKind kind = MatchKind::Substring;
  std::string pattern;
  std::string response;
  std::optional<TokenUsage> usage;
  std::chrono::milliseconds delay{0};
  InjectedFailure failure = InjectedFailure::None;
};

/// SHA-256 of a message's content; used by fingerprint script entries.
inline std::string fingerprint(std::string_view content) { return sha256_hex(content); }

/// Deterministic stand-in for a hosted model. Entries are tested in order
/// against the last user message; the first match answers. Without a match
/// the fallback answers, or the request fails.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::vector<ScriptEntry> script, std::optional<std::string> fallback = std::nullopt,
                           std::string name = "scripted")
      : script_(std::move(script)), fallback_(std::move(fallback)), name_(std::move(name)) {
    for (const auto& e : script_) {
      if (e.kind == MatchKind::Pattern) regexes_.emplace_back(e.pattern, std::regex::ECMAScript);
      else regexes_.emplace_back();
    }
  }

  /// Script file: JSON object `{"fallback": "...", "entries": [{"match_kind":
  /// "substring"|"fingerprint"|"pattern", "pattern": "...", "response": "...",
  /// "usage": {"prompt_tokens": n, "completion_tokens": m}, "delay_ms": d,
  /// "fail": "transient"|"rate_limit"|"auth"|"permanent"}]}`, or a bare array
  /// of entries.
  static ScriptedBackend from_json(const nlohmann::json& j) {
    const nlohmann::json& entries = j.is_array() ? j : j.value("entries", nlohmann::json::array());
    std::vector<ScriptEntry> script;
    for (const auto& e : entries) {
      ScriptEntry s;
      auto kind = e.value("match_kind", std::string("substring"));
      if (kind == "substring") s.kind = MatchKind::Substring;
      else if (kind == "fingerprint") s.kind = MatchKind::Fingerprint;
      else if (kind == "pattern") s.kind = MatchKind::Pattern;
      else throw ConfigError("unknown script match_kind '" + kind + "'");
      s.pattern = e.at("pattern").get<std::string>();
      s.response = e.value("response", std::string());
      if (e.contains("usage"))
        s.usage = TokenUsage{e["usage"].value("prompt_tokens", std::size_t{0}),
                             e["usage"].value("completion_tokens", std::size_t{0})};
      s.delay = std::chrono::milliseconds(e.value("delay_ms", 0));
      auto fail = e.value("fail", std::string());
      if (fail.empty()) s.failure = InjectedFailure::None;
      else if (fail == "transient") s.failure = InjectedFailure::Transient;
      else if (fail == "rate_limit") s.failure = InjectedFailure::RateLimit;
      else if (fail == "auth") s.failure = InjectedFailure::Auth;
      else if (fail == "permanent") s.failure = InjectedFailure::Permanent;
      else throw ConfigError("unknown script failure '" + fail + "'");
      script.push_back(std::move(s));
    }
    std::optional<std::string> fallback;
    if (j.is_object() && j.contains("fallback") && !j["fallback"].is_null()) fallback = j["fallback"].get<std::string>();
    return ScriptedBackend(std::move(script), std::move(fallback));
  }

  static ScriptedBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read script file " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("invalid script file " + path.string() + ": " + e.what());
    }
  }

  CompletionResult complete(const CompletionRequest& request) override {
    std::string_view last = request.messages.last_user_content();
    const ScriptEntry* hit = nullptr;
    for (std::size_t i = 0; i < script_.size() && !hit; ++i) {
      const auto& e = script_[i];
      switch (e.kind) {
        case MatchKind::Substring:
          if (last.find(e.pattern) != std::string_view::npos) hit = &e;
          break;
        case MatchKind::Fingerprint:
          if (fingerprint(last) == e.pattern) hit = &e;
          break;
        case MatchKind::Pattern:
          if (std::regex_search(last.begin(), last.end(), regexes_[i])) hit = &e;
          break;
      }
    }
    if (!hit && !fallback_) throw PermanentBackendError("scripted backend: no entry matches the request");
    if (hit && hit->delay.count() > 0) std::this_thread::sleep_for(hit->delay);
    if (hit) {
      switch (hit->failure) {
        case InjectedFailure::None: break;
        case InjectedFailure::Transient: throw TransportError("scripted transient failure");
        case InjectedFailure::RateLimit: throw RateLimitError("scripted rate limit");
        case InjectedFailure::Auth: throw AuthError("scripted authentication failure");
        case InjectedFailure::Permanent: throw PermanentBackendError("scripted permanent failure");
      }
    }
    CompletionResult r;
    r.text = hit ? hit->response : *fallback_;
    r.backend = name_;
    if (hit && hit->usage) {
      r.usage = *hit->usage;
    } else {
      std::size_t prompt = 0;
      for (const auto& m : request.messages.messages) prompt += whitespace_token_count(m.content);
      r.usage = {prompt, whitespace_token_count(r.text)};
    }
    return r;
  }

  std::string id() const override { return name_; }

 private:
  std::vector<ScriptEntry> script_;
  std::vector<std::regex> regexes_;
  std::optional<std::string> fallback_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Response cache

/// Append-only JSON-lines store of completions keyed by a digest of the
/// request. Thread-safe within one process.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) { load(); }

  static std::string key(const CompletionRequest& req) {
    return sha256_hex(digest_input(req).dump());
  }

  std::optional<CompletionResult> lookup(const CompletionRequest& req) {
    auto k = key(req);
    std::lock_guard lock(mu_);
    if (!std::filesystem::exists(path_)) {
      index_.clear();
      return std::nullopt;
    }
    auto it = index_.find(k);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void store(const CompletionRequest& req, const CompletionResult& res) {
    auto k = key(req);
    nlohmann::json rec = {
        {"key", k},
        {"model", req.model_id},
        {"request", digest_input(req)},
        {"response", res.text},
        {"usage", {{"prompt_tokens", res.usage.prompt_tokens}, {"completion_tokens", res.usage.completion_tokens}}},
        {"backend", res.backend},
        {"timestamp", now_iso8601()},
    };
    std::string line = rec.dump() + "\n";
    std::lock_guard lock(mu_);
    if (!std::filesystem::exists(path_)) index_.clear();
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to cache " + path_.string());
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    CompletionResult stored = res;
    stored.cached = true;
    stored.latency = 0.0;
    index_.emplace(std::move(k), std::move(stored));
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return index_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  static nlohmann::json digest_input(const CompletionRequest& req) {
    return {{"model", req.model_id},
            {"messages", to_json(req.messages)},
            {"temperature", req.temperature},
            {"max_output_tokens", req.max_output_tokens ? nlohmann::json(*req.max_output_tokens) : nlohmann::json()}};
  }

  static std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  void load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        CompletionResult r;
        r.text = j.at("response").get<std::string>();
        r.usage = {j.at("usage").at("prompt_tokens").get<std::size_t>(),
                   j.at("usage").at("completion_tokens").get<std::size_t>()};
        r.backend = j.value("backend", std::string("cache"));
        r.cached = true;
        index_.emplace(j.at("key").get<std::string>(), std::move(r));
      } catch (const nlohmann::json::exception& e) {
        throw CacheCorruptionError("response cache " + path_.string() + " is corrupted at line " +
                                       std::to_string(n) + " (" + e.what() + "); delete it to rebuild",
                                   n);
      }
    }
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, CompletionResult> index_;
};

// ---------------------------------------------------------------------------
// Client: retry, cache, batch

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::duration<double> base_delay{1.0};
  double factor = 2.0;
  std::function<void(std::chrono::duration<double>)> sleep = [](std::chrono::duration<double> d) {
    std::this_thread::sleep_for(d);
  };
};

enum class FailureKind { Transport, RateLimit, Auth, Permanent, Other };

inline std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::Transport: return "transport";
    case FailureKind::RateLimit: return "rate_limit";
    case FailureKind::Auth: return "auth";
    case FailureKind::Permanent: return "permanent";
    case FailureKind::Other: return "other";
  }
  return "other";
}

inline FailureKind classify(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const RateLimitError&) {
    return FailureKind::RateLimit;
  } catch (const TransportError&) {
    return FailureKind::Transport;
  } catch (const AuthError&) {
    return FailureKind::Auth;
  } catch (const BackendError&) {
    return FailureKind::Permanent;
  } catch (...) {
    return FailureKind::Other;
  }
}

struct BatchSlot {
  std::optional<CompletionResult> result;
  std::exception_ptr error;
  FailureKind kind = FailureKind::Other;
  std::string message;

  bool ok() const { return result.has_value(); }
};

struct BatchOptions {
  std::size_t parallelism = 1;
  double rate = 0.0;  // requests per second, 0 = unlimited
};

class Client {
 public:
  explicit Client(std::shared_ptr<Backend> backend, RetryPolicy retry = {},
                  std::shared_ptr<ResponseCache> cache = nullptr)
      : backend_(std::move(backend)), retry_(std::move(retry)), cache_(std::move(cache)) {}

  /// Calls the backend, retrying transient failures with exponential
  /// backoff. Permanent failures propagate immediately.
  CompletionResult complete(const CompletionRequest& req) {
    auto t0 = std::chrono::steady_clock::now();
    auto delay = retry_.base_delay;
    for (int attempt = 1;; ++attempt) {
      try {
        auto r = backend_->complete(req);
        r.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.cached = false;
        return r;
      } catch (const TransientBackendError&) {
        if (attempt >= retry_.max_attempts) throw;
        retry_.sleep(delay);
        delay *= retry_.factor;
      }
    }
  }

  /// complete() behind the response cache, when one is attached.
  CompletionResult cached_complete(const CompletionRequest& req) {
    if (!cache_) return complete(req);
    if (auto hit = cache_->lookup(req)) return *hit;
    auto r = complete(req);
    cache_->store(req, r);
    return r;
  }

  /// Runs every request through cached_complete on at most `parallelism`
  /// workers. Results are aligned with the input; failures stay in their slot.
  std::vector<BatchSlot> run_batch(const std::vector<CompletionRequest>& requests, const BatchOptions& opts = {}) {
    if (opts.parallelism < 1) throw ConfigError("parallelism must be at least 1");
    std::vector<BatchSlot> slots(requests.size());
    std::atomic<std::size_t> next{0};
    std::mutex gate_mu;
    auto next_start = std::chrono::steady_clock::now();
    const auto interval = opts.rate > 0 ? std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                              std::chrono::duration<double>(1.0 / opts.rate))
                                        : std::chrono::steady_clock::duration::zero();
    auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < requests.size();) {
        if (opts.rate > 0) {
          std::chrono::steady_clock::time_point start;
          {
            std::lock_guard lock(gate_mu);
            start = std::max(next_start, std::chrono::steady_clock::now());
            next_start = start + interval;
          }
          std::this_thread::sleep_until(start);
        }
        try {
          slots[i].result = cached_complete(requests[i]);
        } catch (const std::exception& e) {
          slots[i].error = std::current_exception();
          slots[i].kind = classify(slots[i].error);
          slots[i].message = e.what();
        }
      }
    };
    std::size_t n = std::min(opts.parallelism, std::max<std::size_t>(requests.size(), 1));
    if (n == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    return slots;
  }

  Backend& backend() { return *backend_; }
  ResponseCache* cache() { return cache_.get(); }

 private:
  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  std::shared_ptr<ResponseCache> cache_;
};

}  // namespace emh::llm
