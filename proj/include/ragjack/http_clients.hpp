// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>
#include <functional>
#include <optional>
#include <regex>
#include <string>

// Eigen must precede httplib: <resolv.h> defines a _res macro.
#include <Eigen/Dense>
#include <json.hpp>

#include "ragjack/embedder.hpp"
#include "ragjack/errors.hpp"
#include "ragjack/llm_client.hpp"

#include <httplib.h>

namespace ragjack {

/// scheme://host[:port]/path split for httplib.
struct HttpEndpoint {
  std::string origin;  // scheme://host:port
  std::string path;

  static HttpEndpoint parse(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError("malformed endpoint url: " + url);
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
  }
};

/// Replaces every occurrence of `secret` with a fixed mask.
inline std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos + 10))
    text.replace(pos, secret.size(), "[REDACTED]");
  return text;
}

inline std::optional<std::string> env_var(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

struct HttpClientOptions {
  std::string url;
  std::string api_key;
  std::string model;
  int timeout_seconds = 60;
  std::function<void(const std::string&)> log;  // request/response bodies, key redacted
};

namespace detail {

inline nlohmann::json post_json(const HttpClientOptions& opt, const nlohmann::json& body) {
  auto ep = HttpEndpoint::parse(opt.url);
  httplib::Client cli(ep.origin);
  cli.set_connection_timeout(opt.timeout_seconds);
  cli.set_read_timeout(opt.timeout_seconds);
  httplib::Headers headers;
  if (!opt.api_key.empty()) headers.emplace("Authorization", "Bearer " + opt.api_key);
  const auto payload = body.dump();
  if (opt.log) opt.log(redact("POST " + opt.url + " " + payload, opt.api_key));
  auto res = cli.Post(ep.path, headers, payload, "application/json");
  if (!res) throw ClientError(redact("request to " + opt.url + " failed: " + httplib::to_string(res.error()), opt.api_key));
  if (opt.log) opt.log(redact("HTTP " + std::to_string(res->status) + " " + res->body, opt.api_key));
  if (res->status < 200 || res->status >= 300)
    throw ClientError("endpoint returned HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ClientError(std::string("unparseable response: ") + e.what());
  }
}

}  // namespace detail

/// Chat-completions style endpoint: {"model", "messages", "temperature",
/// "max_tokens"} in, choices[0].message.content out. A plain {"text": ...}
/// response is accepted as well.
class HttpGenerationClient : public GenerationClient {
 public:
  explicit HttpGenerationClient(HttpClientOptions opt) : opt_(std::move(opt)) {
    if (opt_.url.empty()) throw ConfigError("generation endpoint url is empty");
    HttpEndpoint::parse(opt_.url);
  }

  /// RAGJACK_BRAIN_URL, RAGJACK_BRAIN_KEY, RAGJACK_BRAIN_MODEL.
  static std::optional<HttpGenerationClient> from_env() {
    auto url = env_var("RAGJACK_BRAIN_URL");
    if (!url) return std::nullopt;
    return HttpGenerationClient({*url, env_var("RAGJACK_BRAIN_KEY").value_or(""),
                                 env_var("RAGJACK_BRAIN_MODEL").value_or(""), 60, nullptr});
  }

  void set_logger(std::function<void(const std::string&)> log) { opt_.log = std::move(log); }

  using GenerationClient::generate;
  std::string generate(const std::string& prompt, const GenerationSettings& settings) override {
    nlohmann::json body = {{"messages", {{{"role", "user"}, {"content", prompt}}}},
                           {"temperature", settings.temperature},
                           {"max_tokens", settings.max_tokens}};
    if (!opt_.model.empty()) body["model"] = opt_.model;
    auto j = detail::post_json(opt_, body);
    try {
      if (j.contains("choices")) return j.at("choices").at(0).at("message").at("content").get<std::string>();
      return j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ClientError(std::string("unexpected response shape: ") + e.what());
    }
  }

 private:
  HttpClientOptions opt_;
};

/// Remote encoder for transfer runs: {"input": text} in, {"embedding": [...]}
/// or {"data": [{"embedding": [...]}]} out. The vector is re-normalised.
class HttpEmbeddingClient : public TextEncoder {
 public:
  HttpEmbeddingClient(HttpClientOptions opt, std::size_t dim) : opt_(std::move(opt)), dim_(dim) {
    if (opt_.url.empty()) throw ConfigError("embedding endpoint url is empty");
    HttpEndpoint::parse(opt_.url);
  }

  /// RAGJACK_EMBED_URL, RAGJACK_EMBED_KEY, RAGJACK_EMBED_MODEL, RAGJACK_EMBED_DIM.
  static std::optional<HttpEmbeddingClient> from_env() {
    auto url = env_var("RAGJACK_EMBED_URL");
    if (!url) return std::nullopt;
    auto dim = env_var("RAGJACK_EMBED_DIM");
    return HttpEmbeddingClient({*url, env_var("RAGJACK_EMBED_KEY").value_or(""),
                                env_var("RAGJACK_EMBED_MODEL").value_or(""), 60, nullptr},
                               dim ? std::stoul(*dim) : 0);
  }

  std::size_t dim() const override { return dim_; }

  EmbeddingVector encode_text(std::string_view text) const override {
    nlohmann::json body = {{"input", std::string(text)}};
    if (!opt_.model.empty()) body["model"] = opt_.model;
    auto j = detail::post_json(opt_, body);
    std::vector<double> v;
    try {
      v = j.contains("data") ? j.at("data").at(0).at("embedding").get<std::vector<double>>()
                             : j.at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ClientError(std::string("unexpected response shape: ") + e.what());
    }
    if (dim_ != 0 && v.size() != dim_) throw ClientError("embedding has unexpected dimension");
    for (double x : v)
      if (!std::isfinite(x)) throw ClientError("embedding has non-finite entries");
    return normalized(std::move(v));
  }

 private:
  HttpClientOptions opt_;
  std::size_t dim_;
};

}  // namespace ragjack
