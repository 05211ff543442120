// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ragjack {

using TokenSequence = std::vector<std::string>;

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

inline bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace detail

/// Splits on whitespace and punctuation. Every punctuation byte becomes its own
/// token; runs of [A-Za-z0-9_] and non-ASCII bytes form word tokens.
inline TokenSequence split_tokens(std::string_view text, bool lowercase) {
  TokenSequence out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
  };
  for (unsigned char c : text) {
    if (detail::is_word_byte(c)) {
      cur.push_back(lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    } else {
      flush();
      if (!detail::is_space_byte(c)) out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

/// Casefolded tokenization used by every embedder and filter.
inline TokenSequence tokenize(std::string_view text) { return split_tokens(text, true); }

inline bool is_word_token(std::string_view tok) {
  return !tok.empty() && detail::is_word_byte(static_cast<unsigned char>(tok.front()));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && detail::is_space_byte(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && detail::is_space_byte(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Joins tokens with single spaces, attaching closing punctuation to the left
/// and opening brackets to the right. tokenize(render_tokens(t)) == t for any
/// sequence produced by tokenize.
inline std::string render_tokens(const TokenSequence& tokens) {
  static constexpr std::string_view kAttachLeft = ".,;:!?)]}%";
  static constexpr std::string_view kAttachRight = "([{";
  std::string out;
  bool glue_next = true;
  for (const auto& t : tokens) {
    bool attach_left = t.size() == 1 && kAttachLeft.find(t[0]) != std::string_view::npos;
    if (!out.empty() && !glue_next && !attach_left) out.push_back(' ');
    out += t;
    glue_next = t.size() == 1 && kAttachRight.find(t[0]) != std::string_view::npos;
  }
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline const char* ordinal_word(int n) {
  static constexpr const char* kWords[] = {"zeroth", "first", "second", "third", "fourth", "fifth",
                                           "sixth", "seventh", "eighth", "ninth", "tenth"};
  return n >= 0 && n <= 10 ? kWords[n] : "last";
}

/// Inverse of ordinal_word; 0 when unrecognised.
inline int ordinal_value(std::string_view word) {
  for (int i = 1; i <= 10; ++i)
    if (to_lower(word) == ordinal_word(i)) return i;
  return 0;
}

}  // namespace ragjack
