// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ragjack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what = "empty input") : Error(what) {}
};

class EmptyTargets : public Error {
 public:
  EmptyTargets() : Error("target set is empty") {}
};

class NoFeasibleToken : public Error {
 public:
  NoFeasibleToken() : Error("no admissible vocabulary token for slot") {}
};

class EmptyBase : public Error {
 public:
  EmptyBase() : Error("knowledge base is empty") {}
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id) : Error("duplicate entry id: " + id) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ClientError : public Error {
 public:
  using Error::Error;
};

class BrainUnavailable : public Error {
 public:
  using Error::Error;
};

class GeneratorError : public Error {
 public:
  using Error::Error;
};

class AllBlocked : public Error {
 public:
  AllBlocked() : Error("every candidate was blocked by the filter stack") {}
};

class NoMatchingKnowledge : public Error {
 public:
  explicit NoMatchingKnowledge(const std::string& op = "")
      : Error("no extracted record carries the target operation" + (op.empty() ? "" : ": " + op)) {}
};

class InvalidRate : public Error {
 public:
  explicit InvalidRate(double r) : Error("slot rate out of range: " + std::to_string(r)) {}
};

class NonFiniteGradient : public Error {
 public:
  NonFiniteGradient() : Error("gradient has non-finite entries") {}
};

class DegenerateData : public Error {
 public:
  DegenerateData() : Error("all projected points are identical") {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ragjack
