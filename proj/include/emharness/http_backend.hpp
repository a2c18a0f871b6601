#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "emharness/llmclient.hpp"

namespace emh::llm {

inline constexpr const char* kApiKeyEnv = "EMHARNESS_API_KEY";

struct HttpBackendConfig {
  /// Full chat-completions URL, e.g. https://api.openai.com/v1/chat/completions
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  /// Falls back to $EMHARNESS_API_KEY when empty.
  std::string api_key;
  int timeout_seconds = 60;
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
  bool https = false;
};

inline ParsedUrl parse_url(const std::string& url) {
  auto sep = url.find("://");
  if (sep == std::string::npos) throw ConfigError("endpoint must start with http:// or https://: " + url);
  std::string scheme = url.substr(0, sep);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported endpoint scheme '" + scheme + "'");
  auto path_start = url.find('/', sep + 3);
  ParsedUrl p;
  p.https = scheme == "https";
  p.scheme_host_port = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  return p;
}

/// OpenAI-compatible chat-completions backend: posts model, messages and
/// temperature; reads the first choice's content and the usage block.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.endpoint)) {
    if (cfg_.api_key.empty())
      if (const char* env = std::getenv(kApiKeyEnv)) cfg_.api_key = env;
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url_.https) throw ConfigError("this build has no TLS support; use an http:// endpoint");
#endif
  }

  bool has_credentials() const { return !cfg_.api_key.empty(); }

  static nlohmann::json request_body(const CompletionRequest& req) {
    nlohmann::json body = {{"model", req.model_id}, {"messages", to_json(req.messages)}, {"temperature", req.temperature}};
    if (req.max_output_tokens) body["max_tokens"] = *req.max_output_tokens;
    return body;
  }

  static CompletionResult parse_response(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      CompletionResult r;
      const auto& msg = j.at("choices").at(0).at("message");
      r.text = msg.at("content").is_null() ? std::string() : msg.at("content").get<std::string>();
      if (j.contains("usage") && j["usage"].is_object()) {
        r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
        r.usage.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
      }
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw PermanentBackendError(std::string("malformed chat-completions response: ") + e.what());
    }
  }

  CompletionResult complete(const CompletionRequest& req) override {
    if (cfg_.api_key.empty()) throw AuthError(std::string("no API key configured (set ") + kApiKeyEnv + ")");
    httplib::Client cli(url_.scheme_host_port);
    cli.set_connection_timeout(cfg_.timeout_seconds, 0);
    cli.set_read_timeout(cfg_.timeout_seconds, 0);
    cli.set_write_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers = {{"Authorization", "Bearer " + cfg_.api_key}};
    auto res = cli.Post(url_.path, headers, request_body(req).dump(), "application/json");
    if (!res) throw TransportError("request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
    const int status = res->status;
    if (status == 401 || status == 403)
      throw AuthError("authentication rejected by " + cfg_.endpoint + " (HTTP " + std::to_string(status) + ")");
    if (status == 429) throw RateLimitError("rate limited by " + cfg_.endpoint);
    if (status >= 500) throw TransportError("server error from " + cfg_.endpoint + " (HTTP " + std::to_string(status) + ")");
    if (status < 200 || status >= 300)
      throw PermanentBackendError("request rejected by " + cfg_.endpoint + " (HTTP " + std::to_string(status) +
                                  "): " + res->body.substr(0, 300));
    auto r = parse_response(res->body);
    r.backend = "http:" + cfg_.endpoint;
    return r;
  }

  std::string id() const override { return "http:" + cfg_.endpoint; }

 private:
  HttpBackendConfig cfg_;
  ParsedUrl url_;
};

}  // namespace emh::llm
