// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "ragjack/errors.hpp"

// A small imperative language standing in for C in code-mode prompts.
//
//   program := stmt*
//   stmt    := "if" "(" expr ")" block ["else" block]
//            | "while" "(" expr ")" block
//            | "fn" IDENT "(" [IDENT ("," IDENT)*] ")" block
//            | "return" [expr] [";"]
//            | "let" IDENT "=" expr [";"]
//            | IDENT "=" expr [";"]
//            | expr [";"]
//   block   := "{" stmt* "}"
//   expr    := add (("==" | "!=" | "<" | ">" | "<=" | ">=") add)*
//   add     := mul (("+" | "-") mul)*
//   mul     := unary (("*" | "/" | "%") unary)*
//   unary   := ("-" | "!") unary | primary
//   primary := INT | STRING | IDENT ["(" args ")"] | "print" "(" args ")" | "(" expr ")"
//
// Identifiers and literals are the only obfuscation slots.

namespace ragjack::code {

enum class TokKind { Identifier, Keyword, Integer, String, Punct };

struct Tok {
  TokKind kind;
  std::string text;
  std::size_t offset = 0;
  std::size_t length = 0;
};

inline const std::unordered_set<std::string>& keywords() {
  static const std::unordered_set<std::string> kw = {"if", "else", "while", "fn", "return", "let", "print", "true", "false"};
  return kw;
}

inline std::vector<Tok> lex(const std::string& src) {
  static const std::vector<std::string> two = {"==", "!=", "<=", ">="};
  static const std::string one = "=+-*/%<>(){};,!";
  std::vector<Tok> out;
  std::size_t i = 0;
  while (i < src.size()) {
    unsigned char c = static_cast<unsigned char>(src[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (std::isalpha(c) || c == '_') {
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
      auto word = src.substr(start, i - start);
      out.push_back({keywords().contains(word) ? TokKind::Keyword : TokKind::Identifier, word, start, i - start});
    } else if (std::isdigit(c)) {
      while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      if (i < src.size() && (std::isalpha(static_cast<unsigned char>(src[i])) || src[i] == '_'))
        throw ParseError("malformed number at offset " + std::to_string(start), 0);
      out.push_back({TokKind::Integer, src.substr(start, i - start), start, i - start});
    } else if (c == '"') {
      ++i;
      while (i < src.size() && src[i] != '"') {
        if (src[i] == '\n') throw ParseError("unterminated string", 0);
        ++i;
      }
      if (i >= src.size()) throw ParseError("unterminated string", 0);
      ++i;
      out.push_back({TokKind::String, src.substr(start, i - start), start, i - start});
    } else {
      std::string op;
      for (const auto& t : two)
        if (src.compare(i, 2, t) == 0) op = t;
      if (op.empty() && one.find(static_cast<char>(c)) != std::string::npos) op = std::string(1, static_cast<char>(c));
      if (op.empty()) throw ParseError(std::string("unexpected character '") + static_cast<char>(c) + "'", 0);
      i += op.size();
      out.push_back({TokKind::Punct, op, start, op.size()});
    }
  }
  return out;
}

struct Node {
  std::string kind;   // "program", "if", "assign", "call", "binop", "ident", "int", "str", ...
  std::string value;  // operator, identifier name or literal text
  std::vector<Node> kids;
};

class Parser {
 public:
  explicit Parser(std::vector<Tok> toks) : toks_(std::move(toks)) {}

  Node program() {
    Node n{"program", "", {}};
    while (!at_end()) n.kids.push_back(stmt());
    return n;
  }

 private:
  bool at_end() const { return pos_ >= toks_.size(); }
  const Tok& peek(std::size_t ahead = 0) const {
    static const Tok eof{TokKind::Punct, "<eof>", 0, 0};
    return pos_ + ahead < toks_.size() ? toks_[pos_ + ahead] : eof;
  }
  bool is(const std::string& text, std::size_t ahead = 0) const {
    const auto& t = peek(ahead);
    return (t.kind == TokKind::Punct || t.kind == TokKind::Keyword) && t.text == text;
  }
  Tok take() {
    if (at_end()) throw ParseError("unexpected end of input", 0);
    return toks_[pos_++];
  }
  void expect(const std::string& text) {
    if (!is(text)) throw ParseError("expected '" + text + "' but found '" + peek().text + "'", 0);
    ++pos_;
  }
  Node ident() {
    if (peek().kind != TokKind::Identifier) throw ParseError("expected identifier, found '" + peek().text + "'", 0);
    return {"ident", take().text, {}};
  }
  void optional_semicolon() {
    if (is(";")) ++pos_;
  }

  Node block() {
    expect("{");
    Node n{"block", "", {}};
    while (!is("}")) {
      if (at_end()) throw ParseError("unterminated block", 0);
      n.kids.push_back(stmt());
    }
    expect("}");
    return n;
  }

  Node stmt() {
    if (is("if")) {
      ++pos_;
      expect("(");
      Node n{"if", "", {expr()}};
      expect(")");
      n.kids.push_back(block());
      if (is("else")) ++pos_, n.kids.push_back(block());
      return n;
    }
    if (is("while")) {
      ++pos_;
      expect("(");
      Node n{"while", "", {expr()}};
      expect(")");
      n.kids.push_back(block());
      return n;
    }
    if (is("fn")) {
      ++pos_;
      Node n{"fn", "", {ident()}};
      expect("(");
      Node params{"params", "", {}};
      if (!is(")")) {
        params.kids.push_back(ident());
        while (is(",")) ++pos_, params.kids.push_back(ident());
      }
      expect(")");
      n.kids.push_back(std::move(params));
      n.kids.push_back(block());
      return n;
    }
    if (is("return")) {
      ++pos_;
      Node n{"return", "", {}};
      if (!is(";") && !is("}") && !at_end()) n.kids.push_back(expr());
      optional_semicolon();
      return n;
    }
    if (is("let")) {
      ++pos_;
      Node n{"let", "", {ident()}};
      expect("=");
      n.kids.push_back(expr());
      optional_semicolon();
      return n;
    }
    if (peek().kind == TokKind::Identifier && is("=", 1)) {
      Node n{"assign", "", {ident()}};
      expect("=");
      n.kids.push_back(expr());
      optional_semicolon();
      return n;
    }
    Node n{"expr_stmt", "", {expr()}};
    optional_semicolon();
    return n;
  }

  Node binary(int level) {
    static const std::vector<std::vector<std::string>> ops = {{"==", "!=", "<", ">", "<=", ">="}, {"+", "-"}, {"*", "/", "%"}};
    if (level == 3) return unary();
    Node lhs = binary(level + 1);
    for (;;) {
      bool matched = false;
      for (const auto& op : ops[static_cast<std::size_t>(level)])
        if (peek().kind == TokKind::Punct && peek().text == op) {
          ++pos_;
          lhs = Node{"binop", op, {std::move(lhs), binary(level + 1)}};
          matched = true;
          break;
        }
      if (!matched) return lhs;
    }
  }

  Node expr() { return binary(0); }

  Node unary() {
    if (peek().kind == TokKind::Punct && (peek().text == "-" || peek().text == "!")) {
      auto op = take().text;
      return {"unop", op, {unary()}};
    }
    return primary();
  }

  Node args(Node call) {
    expect("(");
    if (!is(")")) {
      call.kids.push_back(expr());
      while (is(",")) ++pos_, call.kids.push_back(expr());
    }
    expect(")");
    return call;
  }

  Node primary() {
    const auto& t = peek();
    if (t.kind == TokKind::Integer) return {"int", take().text, {}};
    if (t.kind == TokKind::String) return {"str", take().text, {}};
    if (is("true") || is("false")) return {"bool", take().text, {}};
    if (is("print")) {
      ++pos_;
      return args(Node{"print", "", {}});
    }
    if (t.kind == TokKind::Identifier) {
      Node id = ident();
      if (is("(")) return args(Node{"call", "", {std::move(id)}});
      return id;
    }
    if (is("(")) {
      ++pos_;
      Node e = expr();
      expect(")");
      return e;
    }
    throw ParseError("unexpected token '" + t.text + "'", 0);
  }

  std::vector<Tok> toks_;
  std::size_t pos_ = 0;
};

inline Node parse(const std::string& src) { return Parser(lex(src)).program(); }

/// Structure of the tree with identifiers numbered by first occurrence and
/// literal values erased. Equal shapes mean the programs are alpha-equivalent
/// up to literal values.
inline std::string shape(const Node& root) {
  std::map<std::string, int> names;
  std::string out;
  auto walk = [&](auto& self, const Node& n) -> void {
    out += '(' + n.kind;
    if (n.kind == "ident") {
      auto [it, fresh] = names.emplace(n.value, static_cast<int>(names.size()));
      out += " #" + std::to_string(it->second);
    } else if (n.kind == "binop" || n.kind == "unop") {
      out += ' ' + n.value;
    }
    for (const auto& k : n.kids) self(self, k);
    out += ')';
  };
  walk(walk, root);
  return out;
}

enum class SlotClass { Identifier, Integer, String };

/// One obfuscation slot: every occurrence of an identifier, or a single literal.
struct CodeSlot {
  SlotClass cls;
  std::string original;
  std::vector<std::size_t> tokens;  // indices into lex()
};

/// Identifier slots (grouped by name) and literal slots, in order of first
/// appearance. `proposed` restricts slotting to those lexer indices and throws
/// if one of them is not an identifier or literal.
inline std::vector<CodeSlot> code_slots(const std::vector<Tok>& toks,
                                        const std::optional<std::vector<std::size_t>>& proposed = std::nullopt) {
  std::set<std::size_t> allowed;
  if (proposed) {
    for (auto i : *proposed) {
      if (i >= toks.size()) throw Error("proposed slot index out of range");
      if (toks[i].kind == TokKind::Keyword || toks[i].kind == TokKind::Punct)
        throw Error("token '" + toks[i].text + "' is syntax and cannot be slotted");
      allowed.insert(i);
    }
  }
  std::vector<CodeSlot> slots;
  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (proposed && !allowed.contains(i)) continue;
    const auto& t = toks[i];
    if (t.kind == TokKind::Identifier) {
      auto [it, fresh] = by_name.emplace(t.text, slots.size());
      if (fresh) slots.push_back({SlotClass::Identifier, t.text, {}});
      slots[it->second].tokens.push_back(i);
    } else if (t.kind == TokKind::Integer) {
      slots.push_back({SlotClass::Integer, t.text, {i}});
    } else if (t.kind == TokKind::String) {
      slots.push_back({SlotClass::String, t.text, {i}});
    }
  }
  return slots;
}

/// Byte span that a slot replacement overwrites: the whole token, or the
/// inside of the quotes for strings.
inline std::pair<std::size_t, std::size_t> replace_span(const Tok& t) {
  if (t.kind == TokKind::String) return {t.offset + 1, t.length - 2};
  return {t.offset, t.length};
}

/// Writes replacements[s] into every occurrence of slot s.
inline std::string apply_replacements(const std::string& src, const std::vector<Tok>& toks,
                                      const std::vector<CodeSlot>& slots, const std::vector<std::string>& replacements) {
  if (replacements.size() != slots.size()) throw Error("one replacement per slot required");
  std::vector<std::pair<std::size_t, std::size_t>> edits;  // (token index, slot index)
  for (std::size_t s = 0; s < slots.size(); ++s)
    for (auto ti : slots[s].tokens) edits.push_back({ti, s});
  std::sort(edits.begin(), edits.end());
  std::string out;
  std::size_t cursor = 0;
  for (auto [ti, s] : edits) {
    auto [off, len] = replace_span(toks[ti]);
    out.append(src, cursor, off - cursor);
    out += replacements[s];
    cursor = off + len;
  }
  out.append(src, cursor, std::string::npos);
  return out;
}

}  // namespace ragjack::code
