// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "ragjack/appsim.hpp"
#include "ragjack/banned_words.hpp"
#include "ragjack/extraction.hpp"
#include "ragjack/memory.hpp"

// Synthetic labelled corpora for tests, benchmarks and the sample data files.

namespace ragjack::toy {

struct Corpus {
  std::vector<KnowledgeEntry> entries;
  std::vector<ActionSpec> targets;
  std::vector<std::string> target_ids;  // entry that carries each target's operation
};

inline const std::vector<std::string>& table_names() {
  static const std::vector<std::string> names = {
      "artists",   "albums",    "songs",      "playlists", "customers", "orders",    "invoices",  "products",
      "suppliers", "employees", "departments", "projects", "tickets",   "payments",  "shipments", "warehouses",
      "students",  "courses",   "teachers",   "grades",    "patients",  "doctors",   "visits",    "bookings",
      "hotels",    "flights",   "airports",   "passengers", "vehicles", "drivers",   "routes",    "stations",
      "books",     "authors",   "publishers", "libraries", "members",   "loans",     "accounts",  "branches",
      "games",     "players",   "teams",      "matches",   "venues",    "events",    "sensors",   "readings",
      "devices",   "alerts"};
  return names;
}

inline const std::vector<std::string>& column_pool() {
  static const std::vector<std::string> cols = {
      "num_songs", "rating", "price",    "quantity", "status",   "score",    "balance", "age",
      "duration",  "weight", "capacity", "level",    "priority", "discount", "stock",   "salary",
      "credits",   "points", "distance", "volume",   "budget",   "tier",     "region",  "rank"};
  return cols;
}

inline const std::vector<std::string>& user_names() {
  static const std::vector<std::string> users = {"analyst", "auditor", "intern", "guest", "reporter", "contractor"};
  return users;
}

/// Order in which each table's entries cycle through operations; offset by
/// table so every operation appears at every position.
inline const std::vector<std::string>& op_cycle() {
  static const std::vector<std::string> ops = {"DELETE", "SELECT", "UPDATE", "INSERT", "DROP", "ALTER", "CREATE", "GRANT"};
  return ops;
}

inline const std::vector<std::string>& occasion_words() {
  static const std::vector<std::string> w = {
      "quarterly", "annual",  "nightly",  "weekly",   "spring",   "winter",  "summer",   "autumn",  "legacy",
      "regional",  "holiday", "campus",   "festival", "pilot",    "harbor",  "northern", "southern", "coastal",
      "alpine",    "urban",   "rural",    "midnight", "sunrise",  "copper",  "silver",   "golden",  "crimson",
      "emerald",   "violet",  "amber",    "granite",  "marble",   "cedar",   "maple",    "willow",  "falcon",
      "otter",     "badger",  "heron",    "lynx",     "comet",    "nebula",  "orbit",    "prism",   "quartz",
      "rocket",    "tundra",  "canyon",   "delta",    "lagoon",   "meadow",  "summit",   "valley",  "zephyr"};
  return w;
}

/// A short natural-language lead followed by the statement.
inline std::string sql_statement(const std::string& op, const std::string& table, std::mt19937_64& rng) {
  const auto& cols = column_pool();
  std::uniform_int_distribution<std::size_t> pick(0, cols.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_w(0, occasion_words().size() - 1);
  std::uniform_int_distribution<int> value(1, 9999);
  std::string c1 = cols[pick(rng)], c2 = cols[pick(rng)];
  while (c2 == c1) c2 = cols[pick(rng)];
  const auto& w = occasion_words()[pick_w(rng)];
  auto v1 = std::to_string(value(rng)), v2 = std::to_string(value(rng));
  if (op == "SELECT")
    return "report " + table + " " + c1 + " " + c2 + ", " + w + " review. SELECT " + table + "." + c1 + ", " + table + "." + c2 +
           " FROM " + table + " WHERE " + table + "." + c1 + " > " + v1 + ";";
  if (op == "UPDATE")
    return "set " + table + " " + c1 + ", " + w + " sync. UPDATE " + table + " SET " + c1 + " = " + v1 +
           " WHERE " + table + "." + c2 + " = " + v2 + ";";
  if (op == "INSERT")
    return "record new " + table + " row, " + table + " " + w + " import. INSERT INTO " + table + " (" + c1 + ", " + c2 +
           ") VALUES (" + v1 + ", " + v2 + ");";
  if (op == "DELETE")
    return "clean " + table + " " + c1 + ", " + w + " audit. DELETE FROM " + table + " WHERE " + table + "." + c1 +
           " = " + v1 + ";";
  if (op == "DROP") return "retire " + table + " table, " + w + " migration. DROP TABLE " + table + ";";
  if (op == "ALTER")
    return "track " + table + " " + c1 + ", " + table + " " + w + " rollout. ALTER TABLE " + table + " ADD COLUMN " + c1 +
           " INTEGER;";
  if (op == "CREATE")
    return "prepare " + table + " storage, " + table + " " + w + " launch. CREATE TABLE " + table + " (" + c1 +
           " INTEGER, " + c2 + " TEXT);";
  if (op == "GRANT") {
    std::uniform_int_distribution<std::size_t> u(0, user_names().size() - 1);
    const auto& user = user_names()[u(rng)];
    return "share " + table + " with " + user + ", " + w + " study. GRANT SELECT ON " + table +
           " TO " + user + ";";
  }
  throw Error("unknown operation: " + op);
}

/// `tables` tables with `per_table` SQL statements each. One target per table
/// (its first non-SELECT entry) until `n_targets` are chosen.
inline Corpus make_sql_corpus(std::size_t tables, std::size_t per_table, std::uint64_t seed,
                              std::size_t n_targets = 0) {
  Corpus c;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bound(10, 99);
  const auto& names = table_names();
  const auto& ops = op_cycle();
  for (std::size_t t = 0; t < tables; ++t) {
    std::string table = names[t % names.size()];
    if (t >= names.size()) table += std::to_string(t / names.size());
    bool targeted = false;
    for (std::size_t e = 0; e < per_table; ++e) {
      const auto& op = ops[(t + e) % ops.size()];
      KnowledgeEntry k;
      k.id = "sql-" + std::to_string(t) + "-" + std::to_string(e);
      k.text = sql_statement(op, table, rng);
      k.op_label = op;
      k.obj_labels = {table};
      k.domain = Domain::Sql;
      if (!targeted && op != "SELECT" && c.targets.size() < n_targets) {
        c.targets.push_back({op, {table}, Domain::Sql, "id < " + std::to_string(bound(rng) * 100)});
        c.target_ids.push_back(k.id);
        targeted = true;
      }
      c.entries.push_back(std::move(k));
    }
  }
  return c;
}

inline const std::vector<std::string>& error_types() {
  static const std::vector<std::string> errs = {"null_dereference", "off_by_one",   "buffer_overflow", "race_condition",
                                                "memory_leak",      "use_after_free", "integer_overflow", "deadlock"};
  return errs;
}

inline Corpus make_code_corpus(std::size_t functions, std::size_t per_function, std::uint64_t seed,
                               std::size_t n_targets = 0) {
  static const std::vector<std::string> verbs = {"parse", "load", "write", "copy", "hash", "sort", "send", "read"};
  static const std::vector<std::string> nouns = {"header", "buffer", "config", "packet", "record", "index", "cache", "frame"};
  static const std::vector<std::string> details = {"check the pointer before use", "bound the loop by length",
                                                   "free the handle on every path", "lock before touching the queue",
                                                   "widen the counter type", "copy at most size bytes"};
  Corpus c;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pd(0, details.size() - 1);
  for (std::size_t f = 0; f < functions; ++f) {
    std::string fn = verbs[f % verbs.size()] + "_" + nouns[(f / verbs.size()) % nouns.size()];
    if (f >= verbs.size() * nouns.size()) fn += std::to_string(f / (verbs.size() * nouns.size()));
    for (std::size_t e = 0; e < per_function; ++e) {
      const auto& err = error_types()[(f + e) % error_types().size()];
      KnowledgeEntry k{"code-" + std::to_string(f) + "-" + std::to_string(e),
                       "fix " + err + " in " + fn + ": " + details[pd(rng)], err, {fn}, Domain::Code};
      if (e == 0 && c.targets.size() < n_targets) {
        c.targets.push_back({err, {fn}, Domain::Code, ""});
        c.target_ids.push_back(k.id);
      }
      c.entries.push_back(std::move(k));
    }
  }
  return c;
}

inline Corpus make_medical_corpus(std::size_t conditions, std::size_t per_condition, std::uint64_t seed,
                                  std::size_t n_targets = 0) {
  static const std::vector<std::string> diagnoses = {"influenza", "migraine", "asthma", "bronchitis", "anemia", "gastritis"};
  static const std::vector<std::string> symptoms = {"fever",   "headache", "cough",     "fatigue", "nausea",
                                                    "dizziness", "rash",   "wheezing", "chills",  "back pain"};
  static const std::vector<std::string> drugs = {"rest and fluids", "ibuprofen 400 mg", "inhaler twice daily",
                                                 "iron supplement", "antacid after meals"};
  Corpus c;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pr(0, drugs.size() - 1);
  for (std::size_t s = 0; s < conditions; ++s) {
    std::string sym = symptoms[s % symptoms.size()];
    if (s >= symptoms.size()) sym += " stage " + std::to_string(s / symptoms.size());
    for (std::size_t e = 0; e < per_condition; ++e) {
      const auto& dx = diagnoses[(s + e) % diagnoses.size()];
      KnowledgeEntry k{"med-" + std::to_string(s) + "-" + std::to_string(e),
                       "diagnosis " + dx + " for " + sym + ": prescribe " + drugs[pr(rng)], dx, {sym}, Domain::Medical};
      if (e == 0 && c.targets.size() < n_targets) {
        c.targets.push_back({dx, {sym}, Domain::Medical, ""});
        c.target_ids.push_back(k.id);
      }
      c.entries.push_back(std::move(k));
    }
  }
  return c;
}

/// Random programs in the toy language.
inline std::vector<std::string> make_code_snippets(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> names = {"count", "total", "limit", "value", "index", "result", "step", "size", "acc"};
  static const std::vector<std::string> fns = {"scale", "clamp", "mix", "offset", "measure"};
  static const std::vector<std::string> words = {"done", "ready", "overflow", "empty", "ok"};
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
  auto num = [&] { return std::to_string(std::uniform_int_distribution<int>(0, 999)(rng)); };
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string a = pick(names), b = pick(names), f = pick(fns);
    while (b == a) b = pick(names);
    std::string s;
    switch (i % 5) {
      case 0: s = a + " = " + num() + "; print(" + a + ")"; break;
      case 1:
        s = "fn " + f + "(" + a + ", " + b + ") { return " + a + " * " + b + " + " + num() + "; }\nlet " + a + " = " +
            f + "(" + num() + ", " + num() + ");\nprint(" + a + ");";
        break;
      case 2:
        s = "let " + a + " = " + num() + ";\nwhile (" + a + " > 0) { " + a + " = " + a + " - " + num() + "; }\nprint(\"" +
            pick(words) + "\");";
        break;
      case 3:
        s = "let " + a + " = " + num() + ";\nlet " + b + " = " + num() + ";\nif (" + a + " >= " + b + ") { print(" + a +
            ") } else { print(\"" + pick(words) + "\") }";
        break;
      default:
        s = "fn " + f + "(" + a + ") {\n  if (" + a + " == " + num() + ") { return 0; }\n  return " + f + "(" + a +
            " - 1) + " + num() + ";\n}\nprint(" + f + "(" + num() + "));";
        break;
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Operation words an attacker must not write into a prompt: the plain verbs
/// plus every keyword of a forbidden operation-filter class.
inline BannedWordList sql_banned_words() {
  BannedWordList b;
  for (const char* w : {"delete", "drop", "update", "insert", "alter", "create", "grant", "revoke", "truncate",
                        "remove", "erase", "destroy", "wipe", "purge", "modify"})
    b.add(w);
  auto cfg = OperationFilterConfig::defaults();
  for (const auto& cls : cfg.classes)
    if (cfg.forbidden.contains(cls.name))
      for (const auto& k : cls.keywords) b.add(k);
  return b;
}

inline const std::vector<std::string>& filler_lexicon() {
  static const std::vector<std::string> f = {"cancel", "instant", "kindly", "today", "note", "quick", "thanks", "please"};
  return f;
}

}  // namespace ragjack::toy
