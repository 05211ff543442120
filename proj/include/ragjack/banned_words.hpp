// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "ragjack/errors.hpp"
#include "ragjack/text.hpp"

namespace ragjack {

enum class MatchMode { Word, Substring };

/// Dictionary behind the keyword filter. Shared with the slot decoder so that
/// optimised prompts can never contain a listed word.
class BannedWordList {
 public:
  BannedWordList() = default;
  explicit BannedWordList(std::set<std::string> words, MatchMode mode = MatchMode::Word) : mode_(mode) {
    for (const auto& w : words) add(w);
  }

  /// One lowercase word per line; blank lines and '#' comments ignored.
  static BannedWordList load(const std::string& path, MatchMode mode = MatchMode::Word) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open banned-word list: " + path);
    BannedWordList list;
    list.mode_ = mode;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      auto w = trim(line);
      if (w.empty() || w[0] == '#') continue;
      if (to_lower(w) != w) throw ParseError("banned word must be lowercase: " + w, n);
      list.add(w);
    }
    return list;
  }

  void add(std::string_view w) { words_.insert(to_lower(trim(w))); }

  const std::set<std::string>& words() const { return words_; }
  MatchMode mode() const { return mode_; }
  void set_mode(MatchMode m) { mode_ = m; }
  bool empty() const { return words_.empty(); }

  /// True when a single (casefolded) token would trip the filter.
  bool matches_token(std::string_view token) const {
    if (mode_ == MatchMode::Word) return words_.contains(std::string(token));
    for (const auto& w : words_)
      if (token.find(w) != std::string_view::npos) return true;
    return false;
  }

  /// First matching word in reading order, if any.
  std::optional<std::string> first_match(std::string_view text) const {
    if (mode_ == MatchMode::Word) {
      for (const auto& t : tokenize(text))
        if (words_.contains(t)) return t;
      return std::nullopt;
    }
    auto lowered = to_lower(text);
    std::optional<std::string> best;
    std::size_t best_pos = std::string::npos;
    for (const auto& w : words_) {
      auto pos = lowered.find(w);
      if (pos != std::string::npos && pos < best_pos) best_pos = pos, best = w;
    }
    return best;
  }

 private:
  std::set<std::string> words_;
  MatchMode mode_ = MatchMode::Word;
};

}  // namespace ragjack
