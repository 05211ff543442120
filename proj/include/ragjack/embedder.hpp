// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ragjack/banned_words.hpp"
#include "ragjack/errors.hpp"
#include "ragjack/text.hpp"

namespace ragjack {

/// Dense vector in the retriever's index space.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const EmbeddingVector&) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline EmbeddingVector normalized(std::vector<double> v) {
  double n = l2_norm(v);
  if (n > 0)
    for (auto& x : v) x /= n;
  return EmbeddingVector{std::move(v)};
}

/// Cosine of two unit vectors.
inline double similarity(const EmbeddingVector& a, const EmbeddingVector& b) { return dot(a.values, b.values); }

/// Ordered token list plus hashed out-of-vocabulary buckets.
class Vocabulary {
 public:
  static constexpr std::size_t kDefaultOovBuckets = 1024;

  Vocabulary() = default;

  /// Duplicates are dropped, first occurrence wins.
  explicit Vocabulary(const std::vector<std::string>& tokens, std::size_t oov_buckets = kDefaultOovBuckets)
      : oov_buckets_(oov_buckets) {
    for (const auto& t : tokens) add(t);
  }

  static Vocabulary from_texts(const std::vector<std::string>& texts,
                               std::size_t oov_buckets = kDefaultOovBuckets) {
    Vocabulary v({}, oov_buckets);
    for (const auto& text : texts)
      for (const auto& t : tokenize(text)) v.add(t);
    return v;
  }

  bool add(const std::string& token) {
    if (token.empty() || index_.contains(token)) return false;
    index_.emplace(token, tokens_.size());
    tokens_.push_back(token);
    return true;
  }

  /// Total over all strings: unknown tokens hash into one of the OOV buckets.
  std::size_t lookup(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    return tokens_.size() + (oov_buckets_ ? fnv1a64(token) % oov_buckets_ : 0);
  }

  bool contains(const std::string& token) const { return index_.contains(token); }
  bool is_oov_id(std::size_t id) const { return id >= tokens_.size(); }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  std::size_t oov_buckets() const { return oov_buckets_; }
  std::size_t rows() const { return tokens_.size() + oov_buckets_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t oov_buckets_ = kDefaultOovBuckets;
};

/// Text in, unit vector out. Implemented by the reference embedder and by
/// remote encoders used in transfer experiments (no gradients, no decode).
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual EmbeddingVector encode_text(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
};

/// Seeded Gaussian token table with mean pooling.
///
/// Each row is drawn from N(0, 1/sqrt(d)) using a generator seeded by the
/// embedder seed and the token string, so a token's row does not depend on
/// the rest of the vocabulary.
class ReferenceEmbedder : public TextEncoder {
 public:
  static constexpr std::size_t kDefaultDim = 64;

  ReferenceEmbedder(Vocabulary vocab, std::uint64_t seed, std::size_t dim = kDefaultDim)
      : vocab_(std::move(vocab)), seed_(seed), dim_(dim), matrix_(vocab_.rows() * dim) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
    for (std::size_t i = 0; i < vocab_.size(); ++i) fill_row(i, vocab_.token(i));
    for (std::size_t b = 0; b < vocab_.oov_buckets(); ++b)
      fill_row(vocab_.size() + b, "\x01oov:" + std::to_string(b));
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t dim() const override { return dim_; }

  std::span<const double> row(std::size_t id) const { return {matrix_.data() + id * dim_, dim_}; }
  std::span<const double> matrix() const { return matrix_; }

  std::vector<std::size_t> ids(const TokenSequence& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(vocab_.lookup(t));
    return out;
  }

  /// Mean of the token rows, L2-normalised.
  EmbeddingVector encode(const TokenSequence& tokens) const { return encode_ids(ids(tokens)); }

  EmbeddingVector encode_ids(std::span<const std::size_t> ids) const {
    if (ids.empty()) throw EmptyInput("cannot encode an empty token sequence");
    std::vector<double> acc(dim_, 0.0);
    for (auto id : ids) {
      auto r = row(id);
      for (std::size_t j = 0; j < dim_; ++j) acc[j] += r[j];
    }
    for (auto& x : acc) x /= static_cast<double>(ids.size());
    return normalized(std::move(acc));
  }

  EmbeddingVector encode_text(std::string_view text) const override { return encode(tokenize(text)); }

  nlohmann::json snapshot() const {
    return {{"seed", seed_}, {"d", dim_}, {"oov_buckets", vocab_.oov_buckets()}, {"vocab", vocab_.tokens()}};
  }

  static ReferenceEmbedder from_snapshot(const nlohmann::json& j) {
    Vocabulary v(j.at("vocab").get<std::vector<std::string>>(),
                 j.value("oov_buckets", Vocabulary::kDefaultOovBuckets));
    return ReferenceEmbedder(std::move(v), j.at("seed").get<std::uint64_t>(), j.at("d").get<std::size_t>());
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write embedder snapshot: " + path);
    out << snapshot().dump(2) << '\n';
  }

  static ReferenceEmbedder load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open embedder snapshot: " + path);
    try {
      return from_snapshot(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("embedder snapshot: ") + e.what(), 0);
    }
  }

 private:
  void fill_row(std::size_t id, const std::string& key) {
    std::mt19937_64 rng(splitmix64(seed_ ^ fnv1a64(key)));
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
    double* r = matrix_.data() + id * dim_;
    for (std::size_t j = 0; j < dim_; ++j) r[j] = gauss(rng);
  }

  Vocabulary vocab_;
  std::uint64_t seed_;
  std::size_t dim_;
  std::vector<double> matrix_;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
  std::size_t argmin = 0;  // index of the least-similar target
};

/// l = 1 - min_i cos(x, t_i) and its gradient with respect to x.
///
/// x need not be unit length; the gradient goes through the normalisation:
///   d cos(x, t) / dx = t/|x| - (x.t) x / |x|^3   for unit t.
inline LossGrad loss_and_grad(const EmbeddingVector& e_syn, std::span<const EmbeddingVector> targets) {
  if (targets.empty()) throw EmptyTargets();
  const double n = l2_norm(e_syn.values);
  if (!(n > 0)) throw EmptyInput("zero embedding");
  LossGrad out;
  double min_cos = std::numeric_limits<double>::infinity();
  double min_dot = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double d = dot(e_syn.values, targets[i].values);
    double c = d / n;
    if (c < min_cos) min_cos = c, min_dot = d, out.argmin = i;
  }
  out.loss = 1.0 - min_cos;
  const auto& t = targets[out.argmin].values;
  out.grad.resize(e_syn.dim());
  for (std::size_t j = 0; j < e_syn.dim(); ++j)
    out.grad[j] = -(t[j] / n - min_dot * e_syn[j] / (n * n * n));
  return out;
}

/// Lexical class a slot may take. Identifier slots are kept pairwise distinct so
/// that renaming stays a bijection.
enum class SlotKind { Free, Identifier, Number, Word };

/// Positions that always carry the same token (one entry for text prompts, every
/// occurrence of an identifier for code prompts).
struct SlotGroup {
  std::vector<std::size_t> positions;
  SlotKind kind = SlotKind::Free;
  bool operator==(const SlotGroup&) const = default;
};

struct DecodeOptions {
  int max_passes = 3;
  const std::unordered_set<std::string>* reserved = nullptr;  // never used for Identifier slots
};

namespace detail {

inline bool is_identifier_token(const std::string& t) {
  if (t.empty() || std::isdigit(static_cast<unsigned char>(t[0]))) return false;
  for (unsigned char c : t)
    if (!(std::isalnum(c) || c == '_')) return false;
  return true;
}

inline bool is_number_token(const std::string& t) {
  if (t.empty()) return false;
  for (unsigned char c : t)
    if (!std::isdigit(c)) return false;
  return true;
}

inline bool is_plain_word(const std::string& t) {
  if (t.empty()) return false;
  for (unsigned char c : t)
    if (!(std::isalnum(c) || c == '_')) return false;
  return true;
}

inline bool admits(SlotKind kind, const std::string& t, const std::unordered_set<std::string>* reserved) {
  switch (kind) {
    case SlotKind::Free: return true;
    case SlotKind::Identifier: return is_identifier_token(t) && !(reserved && reserved->contains(t));
    case SlotKind::Number: return is_number_token(t);
    case SlotKind::Word: return is_plain_word(t);
  }
  return false;
}

}  // namespace detail

/// Greedy coordinate ascent mapping a target embedding back onto the slot
/// positions of `tokens`.
///
/// For each slot group in order, the admissible vocabulary token maximising
/// cos(encode(sequence), e_target) is written into every position of the
/// group. Passes repeat until nothing changes or `max_passes` is reached. Ties
/// go to the lowest vocabulary index. Banned tokens and OOV buckets are never
/// candidates.
inline TokenSequence decode_slots(const EmbeddingVector& e_target, const TokenSequence& tokens,
                                  std::span<const SlotGroup> slots, const BannedWordList& banned,
                                  const ReferenceEmbedder& emb, const DecodeOptions& opts = {}) {
  TokenSequence out = tokens;
  if (slots.empty()) return out;
  for (const auto& g : slots)
    for (auto p : g.positions)
      if (p >= tokens.size()) throw Error("slot position out of range");

  const auto& vocab = emb.vocab();
  const std::size_t d = emb.dim();
  const std::size_t V = vocab.size();

  std::vector<char> allowed(V, 0);
  std::size_t n_allowed = 0;
  for (std::size_t v = 0; v < V; ++v)
    if (!banned.matches_token(vocab.token(v))) allowed[v] = 1, ++n_allowed;
  if (n_allowed == 0) throw NoFeasibleToken();

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> M(emb.matrix().data(), static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(d));
  Eigen::Map<const Eigen::VectorXd> t(e_target.values.data(), static_cast<Eigen::Index>(d));
  const Eigen::VectorXd vt = M * t;
  const Eigen::VectorXd vv = M.rowwise().squaredNorm();

  std::vector<std::size_t> ids = emb.ids(out);
  for (int pass = 0; pass < opts.max_passes; ++pass) {
    bool changed = false;
    for (std::size_t gi = 0; gi < slots.size(); ++gi) {
      const auto& g = slots[gi];
      if (g.positions.empty()) continue;
      const double m = static_cast<double>(g.positions.size());

      std::vector<char> in_group(out.size(), 0);
      for (auto p : g.positions) in_group[p] = 1;
      Eigen::VectorXd S = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (in_group[p]) continue;
        auto r = emb.row(ids[p]);
        for (std::size_t j = 0; j < d; ++j) S[static_cast<Eigen::Index>(j)] += r[j];
      }
      const double St = S.dot(t);
      const double SS = S.squaredNorm();
      const Eigen::VectorXd Sv = M * S;

      std::unordered_set<std::string> taken;
      if (g.kind == SlotKind::Identifier)
        for (std::size_t gj = 0; gj < slots.size(); ++gj)
          if (gj != gi && slots[gj].kind == SlotKind::Identifier && !slots[gj].positions.empty())
            taken.insert(out[slots[gj].positions.front()]);

      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_v = V;
      for (std::size_t v = 0; v < V; ++v) {
        if (!allowed[v]) continue;
        const auto& tok = vocab.token(v);
        if (!detail::admits(g.kind, tok, opts.reserved) || taken.contains(tok)) continue;
        const auto vi = static_cast<Eigen::Index>(v);
        double den2 = SS + 2.0 * m * Sv[vi] + m * m * vv[vi];
        if (!(den2 > 0)) continue;
        double score = (St + m * vt[vi]) / std::sqrt(den2);
        if (score > best) best = score, best_v = v;
      }
      if (best_v == V) throw NoFeasibleToken();
      for (auto p : g.positions) {
        if (ids[p] != best_v || out[p] != vocab.token(best_v)) changed = true;
        ids[p] = best_v;
        out[p] = vocab.token(best_v);
      }
    }
    if (!changed) break;
  }
  return out;
}

/// Convenience overload: one free slot per listed position.
inline TokenSequence decode_slots(const EmbeddingVector& e_target, const TokenSequence& tokens,
                                  std::span<const std::size_t> positions, const BannedWordList& banned,
                                  const ReferenceEmbedder& emb, int max_passes = 3) {
  std::vector<SlotGroup> groups;
  for (auto p : positions) groups.push_back({{p}, SlotKind::Free});
  return decode_slots(e_target, tokens, groups, banned, emb, DecodeOptions{max_passes, nullptr});
}

}  // namespace ragjack
