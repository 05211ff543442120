// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "ragjack/errors.hpp"

namespace ragjack {

struct GenerationSettings {
  double temperature = 0.0;
  int max_tokens = 512;
};

/// Prompt in, text out. Implemented by the mock brain, scripted test doubles and
/// the HTTP client.
class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  virtual std::string generate(const std::string& prompt, const GenerationSettings& settings) = 0;
  std::string generate(const std::string& prompt) { return generate(prompt, GenerationSettings{}); }
};

/// Replays canned responses in order (the last one repeats) and records every
/// prompt it was given.
class ScriptedClient : public GenerationClient {
 public:
  explicit ScriptedClient(std::vector<std::string> responses) : responses_(std::move(responses)) {}

  std::string generate(const std::string& prompt, const GenerationSettings&) override {
    std::lock_guard lock(mu_);
    prompts_.push_back(prompt);
    if (responses_.empty()) throw ClientError("scripted client has no responses");
    auto r = responses_[std::min(next_, responses_.size() - 1)];
    ++next_;
    return r;
  }

  const std::vector<std::string>& prompts() const { return prompts_; }
  std::size_t calls() const { return prompts_.size(); }

 private:
  std::vector<std::string> responses_;
  std::vector<std::string> prompts_;
  std::size_t next_ = 0;
  std::mutex mu_;
};

/// Wraps a callable; handy for rule-based doubles.
class FunctionClient : public GenerationClient {
 public:
  explicit FunctionClient(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string generate(const std::string& prompt, const GenerationSettings&) override { return fn_(prompt); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

/// Retries ClientError up to `attempts` times before rethrowing.
class RetryingClient : public GenerationClient {
 public:
  RetryingClient(GenerationClient& inner, int attempts) : inner_(inner), attempts_(attempts < 1 ? 1 : attempts) {}

  std::string generate(const std::string& prompt, const GenerationSettings& settings) override {
    for (int i = 1;; ++i) {
      try {
        return inner_.generate(prompt, settings);
      } catch (const ClientError&) {
        if (i >= attempts_) throw;
      }
    }
  }

 private:
  GenerationClient& inner_;
  int attempts_;
};

}  // namespace ragjack
