// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ragjack/embedder.hpp"
#include "ragjack/errors.hpp"

namespace ragjack {

enum class Domain { Sql, Code, Medical };

inline std::string to_string(Domain d) {
  switch (d) {
    case Domain::Sql: return "sql";
    case Domain::Code: return "code";
    case Domain::Medical: return "medical";
  }
  return "sql";
}

inline Domain domain_from_string(const std::string& s) {
  auto l = to_lower(s);
  if (l == "sql") return Domain::Sql;
  if (l == "code") return Domain::Code;
  if (l == "medical") return Domain::Medical;
  throw ConfigError("unknown domain: " + s);
}

/// One (index, text) pair of the application's long-term memory.
struct KnowledgeEntry {
  std::string id;
  std::string text;
  std::string op_label;
  std::vector<std::string> obj_labels;
  Domain domain = Domain::Sql;
};

inline nlohmann::json to_json(const KnowledgeEntry& e) {
  return {{"id", e.id}, {"text", e.text}, {"op_label", e.op_label}, {"obj_labels", e.obj_labels},
          {"domain", to_string(e.domain)}};
}

/// Parses one JSONL record. Throws ParseError tagged with `line`.
inline KnowledgeEntry entry_from_json(const nlohmann::json& j, std::size_t line) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field \"") + key + "\"", line);
    return j.at(key);
  };
  try {
    KnowledgeEntry e;
    e.id = need("id").get<std::string>();
    e.text = need("text").get<std::string>();
    e.op_label = need("op_label").get<std::string>();
    e.obj_labels = need("obj_labels").get<std::vector<std::string>>();
    e.domain = domain_from_string(need("domain").get<std::string>());
    if (e.id.empty()) throw ParseError("empty id", line);
    if (e.text.empty()) throw ParseError("empty text", line);
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(ex.what(), line);
  } catch (const ConfigError& ex) {
    throw ParseError(ex.what(), line);
  }
}

struct Hit {
  std::string id;
  double score = 0.0;
  bool operator==(const Hit&) const = default;
};

/// Ordered top-k result of a retrieval.
struct RetrievalResult {
  std::vector<Hit> hits;
  std::size_t k = 0;

  bool operator==(const RetrievalResult&) const = default;

  /// 1-based rank of `id`, 0 when absent.
  std::size_t rank_of(const std::string& id) const {
    for (std::size_t i = 0; i < hits.size(); ++i)
      if (hits[i].id == id) return i + 1;
    return 0;
  }
};

inline nlohmann::json to_json(const RetrievalResult& r) {
  nlohmann::json hits = nlohmann::json::array();
  for (const auto& h : r.hits) hits.push_back({{"id", h.id}, {"score", h.score}});
  return {{"k", r.k}, {"hits", hits}};
}

/// Retrieval log line: {query, k, hits}.
inline nlohmann::json retrieval_log_line(const std::string& query, const RetrievalResult& r) {
  auto j = to_json(r);
  j["query"] = query;
  return j;
}

/// Embedded, flat-indexed knowledge store. Read-only once built.
class KnowledgeBase {
 public:
  static constexpr std::size_t kDefaultK = 4;

  explicit KnowledgeBase(std::shared_ptr<const TextEncoder> encoder) : encoder_(std::move(encoder)) {
    if (!encoder_) throw ConfigError("knowledge base needs an encoder");
    dim_ = encoder_->dim();
  }

  void add(KnowledgeEntry e) {
    if (e.text.empty()) throw EmptyInput("knowledge text is empty");
    if (by_id_.contains(e.id)) throw DuplicateId(e.id);
    auto v = encoder_->encode_text(e.text);
    by_id_.emplace(e.id, entries_.size());
    matrix_.insert(matrix_.end(), v.values.begin(), v.values.end());
    embeddings_.push_back(std::move(v));
    entries_.push_back(std::move(e));
  }

  /// Reads a JSONL file with fields id, text, op_label, obj_labels, domain.
  static KnowledgeBase ingest(const std::string& path, std::shared_ptr<const TextEncoder> encoder) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open knowledge file: " + path);
    KnowledgeBase kb(std::move(encoder));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& ex) {
        throw ParseError(ex.what(), n);
      }
      auto e = entry_from_json(j, n);
      if (kb.by_id_.contains(e.id)) throw DuplicateId(e.id);
      kb.add(std::move(e));
    }
    return kb;
  }

  static KnowledgeBase from_entries(const std::vector<KnowledgeEntry>& entries,
                                    std::shared_ptr<const TextEncoder> encoder) {
    KnowledgeBase kb(std::move(encoder));
    for (const auto& e : entries) kb.add(e);
    return kb;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<KnowledgeEntry>& entries() const { return entries_; }
  const std::vector<EmbeddingVector>& embeddings() const { return embeddings_; }
  const TextEncoder& encoder() const { return *encoder_; }
  std::shared_ptr<const TextEncoder> encoder_ptr() const { return encoder_; }

  const KnowledgeEntry* find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &entries_[it->second];
  }

  const EmbeddingVector& embedding(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw Error("unknown entry id: " + id);
    return embeddings_[it->second];
  }

  /// Id of the first entry whose text matches exactly, if any.
  const KnowledgeEntry* find_by_text(const std::string& text) const {
    for (const auto& e : entries_)
      if (e.text == text) return &e;
    return nullptr;
  }

  /// Exact top-k by cosine; equal scores ordered by id.
  RetrievalResult retrieve(const EmbeddingVector& query, std::size_t k = kDefaultK) const {
    if (entries_.empty()) throw EmptyBase();
    if (k == 0) throw Error("k must be >= 1");
    const std::size_t n = entries_.size();
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i)
      scores[i] = dot(query.values, std::span<const double>(matrix_.data() + i * dim_, dim_));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const std::size_t take = std::min(k, n);
    auto better = [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return entries_[a].id < entries_[b].id;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
    RetrievalResult r;
    r.k = k;
    r.hits.reserve(take);
    for (std::size_t i = 0; i < take; ++i) r.hits.push_back({entries_[order[i]].id, scores[order[i]]});
    return r;
  }

  RetrievalResult retrieve(std::string_view query, std::size_t k = kDefaultK) const {
    if (entries_.empty()) throw EmptyBase();
    return retrieve(encoder_->encode_text(query), k);
  }

 private:
  std::shared_ptr<const TextEncoder> encoder_;
  std::size_t dim_ = 0;
  std::vector<KnowledgeEntry> entries_;
  std::vector<EmbeddingVector> embeddings_;
  std::vector<double> matrix_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Unoptimised full scan used as the oracle for KnowledgeBase::retrieve.
inline RetrievalResult brute_force_retrieve(const EmbeddingVector& query, std::size_t k, const KnowledgeBase& base) {
  if (base.empty()) throw EmptyBase();
  std::vector<Hit> all;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& v = base.embeddings()[i].values;
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += query.values[j] * v[j];
    all.push_back({base.entries()[i].id, s});
  }
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  if (all.size() > k) all.resize(k);
  return RetrievalResult{std::move(all), k};
}

inline RetrievalResult brute_force_retrieve(std::string_view query, std::size_t k, const KnowledgeBase& base) {
  if (base.empty()) throw EmptyBase();
  return brute_force_retrieve(base.encoder().encode_text(query), k, base);
}

}  // namespace ragjack
