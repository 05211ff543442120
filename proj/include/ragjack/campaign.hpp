// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ragjack/appsim.hpp"
#include "ragjack/banned_words.hpp"
#include "ragjack/embedder.hpp"
#include "ragjack/errors.hpp"
#include "ragjack/extraction.hpp"
#include "ragjack/guards.hpp"
#include "ragjack/hijack.hpp"
#include "ragjack/memory.hpp"

namespace ragjack {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

struct EmbedderSpec {
  std::uint64_t seed = 7;
  std::size_t dim = ReferenceEmbedder::kDefaultDim;
  std::string snapshot;  // optional path; overrides seed and dim

  static EmbedderSpec from_json(const nlohmann::json& j) {
    EmbedderSpec s;
    s.seed = j.value("seed", s.seed);
    s.dim = j.value("dim", s.dim);
    s.snapshot = j.value("snapshot", s.snapshot);
    return s;
  }
};

inline nlohmann::json to_json(const EmbedderSpec& s) {
  nlohmann::json j = {{"seed", s.seed}, {"dim", s.dim}};
  if (!s.snapshot.empty()) j["snapshot"] = s.snapshot;
  return j;
}

/// Builds an embedder over `vocab`, or loads the snapshot when one is given.
inline std::shared_ptr<ReferenceEmbedder> make_embedder(const EmbedderSpec& spec, const Vocabulary& vocab) {
  if (!spec.snapshot.empty()) return std::make_shared<ReferenceEmbedder>(ReferenceEmbedder::load(spec.snapshot));
  return std::make_shared<ReferenceEmbedder>(vocab, spec.seed, spec.dim);
}

inline std::vector<std::string> vocabulary_texts(const std::vector<KnowledgeEntry>& entries,
                                                 const std::vector<std::string>& extra = {}) {
  std::vector<std::string> texts;
  for (const auto& e : entries) texts.push_back(e.text);
  texts.insert(texts.end(), extra.begin(), extra.end());
  return texts;
}

struct CampaignSpec {
  ApplicationConfig app;
  std::vector<KnowledgeEntry> corpus;
  std::vector<ActionSpec> targets;
  OptimizerConfig optimizer;
  EmbedderSpec shadow_embedder;
  EmbedderSpec target_embedder;
  std::vector<std::string> filters_under_eval;
  BannedWordList banned;
  double r = 0.2;
  std::vector<std::string> filler;
  std::string preamble;
  std::size_t extraction_budget = 3;
  ExtractionOptions extraction;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string output_dir;
  std::string corpus_path;
  nlohmann::json source;  // the parsed file, echoed into the report

  /// Reads a JSON campaign file. Relative paths resolve against the file's
  /// directory; every referenced file must exist.
  static CampaignSpec load(const std::string& path);
  static CampaignSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path fp(p);
  if (fp.is_relative()) fp = base / fp;
  if (!std::filesystem::exists(fp)) throw ConfigError("referenced file does not exist: " + fp.string());
  return fp.string();
}

inline Compliance compliance_from_string(const std::string& s) {
  if (s == "compliant") return Compliance::Compliant;
  if (s == "hardened") return Compliance::Hardened;
  throw ConfigError("unknown compliance: " + s);
}

inline ExtractionTemplate extraction_template_from_string(const std::string& s) {
  if (s == "summary") return ExtractionTemplate::Summary;
  if (s == "cipher") return ExtractionTemplate::Cipher;
  if (s == "none") return ExtractionTemplate::None;
  throw ConfigError("unknown extraction template: " + s);
}

}  // namespace detail

inline std::vector<KnowledgeEntry> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open knowledge file: " + path);
  std::vector<KnowledgeEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(entry_from_json(nlohmann::json::parse(line), n));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

inline CampaignSpec CampaignSpec::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  CampaignSpec s;
  s.source = j;
  try {
    const auto& app = j.at("app");
    s.app.domain = domain_from_string(app.value("domain", std::string("sql")));
    s.app.k = app.value("k", s.app.k);
    s.app.system_prompt = app.value("system_prompt", s.app.system_prompt);
    s.app.enabled_filters = app.value("filters", std::vector<std::string>{});
    s.app.mock_compliance = detail::compliance_from_string(app.value("compliance", std::string("compliant")));
    auto brain = app.value("brain", std::string("mock"));
    if (brain == "mock") s.app.brain = BrainKind::Mock;
    else if (brain == "external") s.app.brain = BrainKind::External;
    else throw ConfigError("unknown brain: " + brain);
    s.app.paraphrase = app.value("paraphrase", false);
    if (app.value("paraphrase_scope", std::string("brain")) == "full") s.app.paraphrase_scope = ParaphraseScope::Full;

    s.corpus_path = detail::resolve(base_dir, j.at("corpus").get<std::string>());
    s.corpus = read_corpus(s.corpus_path);
    if (j.contains("targets_file")) {
      std::ifstream in(detail::resolve(base_dir, j.at("targets_file").get<std::string>()));
      std::string line;
      while (std::getline(in, line))
        if (!trim(line).empty()) s.targets.push_back(action_from_json(nlohmann::json::parse(line)));
    }
    for (const auto& t : j.value("targets", nlohmann::json::array())) s.targets.push_back(action_from_json(t));
    if (s.targets.empty()) throw ConfigError("campaign has no targets");

    if (j.contains("optimizer")) s.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    if (j.contains("shadow_embedder")) s.shadow_embedder = EmbedderSpec::from_json(j.at("shadow_embedder"));
    if (j.contains("target_embedder")) s.target_embedder = EmbedderSpec::from_json(j.at("target_embedder"));
    for (auto* spec : {&s.shadow_embedder, &s.target_embedder})
      if (!spec->snapshot.empty()) spec->snapshot = detail::resolve(base_dir, spec->snapshot);
    s.filters_under_eval = j.value("filters_under_eval", std::vector<std::string>{});

    if (j.contains("banned_words")) {
      s.banned = BannedWordList::load(detail::resolve(base_dir, j.at("banned_words").get<std::string>()),
                                      j.value("banned_mode", std::string("word")) == "substring" ? MatchMode::Substring
                                                                                                 : MatchMode::Word);
    }
    s.r = j.value("r", s.r);
    s.filler = j.value("filler", std::vector<std::string>{"cancel", "instant", "kindly", "today"});
    s.preamble = j.value("preamble", std::string{});
    if (j.contains("extraction")) {
      const auto& e = j.at("extraction");
      s.extraction_budget = e.value("budget", s.extraction_budget);
      s.extraction.candidates_per_round = e.value("candidates_per_round", s.extraction.candidates_per_round);
      s.extraction.scoring.lambda = e.value("lambda", s.extraction.scoring.lambda);
      s.extraction.scoring.threshold = e.value("threshold", s.extraction.scoring.threshold);
      s.extraction.tmpl = detail::extraction_template_from_string(e.value("template", std::string("summary")));
      if (e.contains("p_o_file")) s.extraction.p_o = read_text_file(detail::resolve(base_dir, e.at("p_o_file").get<std::string>()));
      if (e.contains("p_e_file")) s.extraction.p_e = read_text_file(detail::resolve(base_dir, e.at("p_e_file").get<std::string>()));
    }
    s.seed = j.value("seed", s.seed);
    s.workers = std::max<std::size_t>(1, j.value("workers", s.workers));
    s.output_dir = j.value("output_dir", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("campaign config: ") + e.what());
  }
  return s;
}

inline CampaignSpec CampaignSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open campaign config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("campaign config: ") + e.what());
  }
  return from_json(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Records and metrics

struct TargetRecord {
  std::size_t index = 0;
  ActionSpec target;
  std::string target_id;  // entry the hijack steers toward
  bool extraction_success = false;
  std::size_t queries = 0;
  std::size_t pieces = 0;
  bool action2nl_top1 = false;
  bool action2nl_top4 = false;
  bool shadow_success = false;
  bool hijack_success = false;
  int iterations = 0;
  std::string final_prompt;
  bool end2end_success = false;
  std::optional<ActionPlan> plan;
  std::map<std::string, Verdict> verdicts;
  std::string error;
};

inline nlohmann::json to_json(const TargetRecord& r) {
  nlohmann::json verdicts = nlohmann::json::object();
  for (const auto& [name, v] : r.verdicts) verdicts[name] = to_string(v);
  return {{"index", r.index},
          {"target", to_json(r.target)},
          {"target_id", r.target_id},
          {"extraction", {{"success", r.extraction_success}, {"queries", r.queries}, {"pieces", r.pieces},
                          {"top1", r.action2nl_top1}, {"top4", r.action2nl_top4}}},
          {"hijack", {{"shadow_success", r.shadow_success}, {"success", r.hijack_success},
                      {"iterations", r.iterations}, {"final_prompt", r.final_prompt}}},
          {"end2end", {{"success", r.end2end_success}, {"plan", r.plan ? to_json(*r.plan) : nlohmann::json(nullptr)}}},
          {"verdicts", verdicts},
          {"error", r.error}};
}

inline TargetRecord record_from_json(const nlohmann::json& j) {
  TargetRecord r;
  r.index = j.at("index").get<std::size_t>();
  r.target = action_from_json(j.at("target"));
  r.target_id = j.at("target_id").get<std::string>();
  const auto& e = j.at("extraction");
  r.extraction_success = e.at("success").get<bool>();
  r.queries = e.at("queries").get<std::size_t>();
  r.pieces = e.at("pieces").get<std::size_t>();
  r.action2nl_top1 = e.value("top1", false);
  r.action2nl_top4 = e.value("top4", false);
  const auto& h = j.at("hijack");
  r.shadow_success = h.at("shadow_success").get<bool>();
  r.hijack_success = h.at("success").get<bool>();
  r.iterations = h.at("iterations").get<int>();
  r.final_prompt = h.at("final_prompt").get<std::string>();
  const auto& ee = j.at("end2end");
  r.end2end_success = ee.at("success").get<bool>();
  if (!ee.at("plan").is_null())
    r.plan = ActionPlan{ee.at("plan").at("op").get<std::string>(),
                        ee.at("plan").at("objects").get<std::vector<std::string>>(),
                        ee.at("plan").at("raw").get<std::string>()};
  for (const auto& [name, v] : j.at("verdicts").items())
    r.verdicts[name] = v.get<std::string>() == "Safe" ? Verdict::Safe : Verdict::Blocked;
  r.error = j.value("error", std::string{});
  return r;
}

enum class Phase { Extraction, Hijack, EndToEnd };

inline double compute_asr(const std::vector<TargetRecord>& records, Phase phase) {
  if (records.empty()) throw EmptyInput("no records");
  std::size_t ok = 0;
  for (const auto& r : records)
    ok += phase == Phase::Extraction ? r.extraction_success : phase == Phase::Hijack ? r.hijack_success : r.end2end_success;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

/// Total queries over total knowledge pieces obtained; infinite when nothing
/// was obtained.
inline double compute_nq(std::size_t queries, std::size_t pieces) {
  if (pieces == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(queries) / static_cast<double>(pieces);
}

inline double compute_nq(const std::vector<TargetRecord>& records) {
  if (records.empty()) throw EmptyInput("no records");
  std::size_t q = 0, p = 0;
  for (const auto& r : records) q += r.queries, p += r.pieces;
  return compute_nq(q, p);
}

/// Per filter: fraction of evaluated final prompts judged Safe.
inline std::map<std::string, double> compute_bypass(const std::vector<TargetRecord>& records) {
  if (records.empty()) throw EmptyInput("no records");
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& r : records)
    for (const auto& [name, v] : r.verdicts) {
      auto& c = counts[name];
      c.first += v == Verdict::Safe;
      ++c.second;
    }
  std::map<std::string, double> out;
  for (const auto& [name, c] : counts) out[name] = static_cast<double>(c.first) / static_cast<double>(c.second);
  return out;
}

inline nlohmann::json aggregates(const std::vector<TargetRecord>& records) {
  nlohmann::json bypass = nlohmann::json::object();
  for (const auto& [name, rate] : compute_bypass(records)) bypass[name] = rate;
  double nq = compute_nq(records);
  std::size_t top1 = 0, top4 = 0;
  for (const auto& r : records) top1 += r.action2nl_top1, top4 += r.action2nl_top4;
  const double n = static_cast<double>(records.size());
  return {{"targets", records.size()},
          {"asr_extraction", compute_asr(records, Phase::Extraction)},
          {"asr_hijack", compute_asr(records, Phase::Hijack)},
          {"asr_end2end", compute_asr(records, Phase::EndToEnd)},
          {"mean_nq", std::isfinite(nq) ? nlohmann::json(nq) : nlohmann::json(nullptr)},
          {"action2nl_top1", static_cast<double>(top1) / n},
          {"action2nl_top4", static_cast<double>(top4) / n},
          {"bypass", bypass}};
}

struct CampaignReport {
  std::vector<TargetRecord> records;
  nlohmann::json aggregates;
  nlohmann::json config;

  nlohmann::json to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records) recs.push_back(ragjack::to_json(r));
    return {{"schema_version", kReportSchemaVersion}, {"config", config}, {"aggregates", aggregates}, {"records", recs}};
  }
};

/// Rebuilds a report from persisted per-target records (one JSON object per line).
inline CampaignReport report_from_records(const std::string& records_path) {
  std::ifstream in(records_path);
  if (!in) throw ConfigError("cannot open records: " + records_path);
  CampaignReport rep;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      rep.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  rep.aggregates = aggregates(rep.records);
  return rep;
}

// ---------------------------------------------------------------------------
// Pipeline

inline std::shared_ptr<const PromptFilter> make_filter(const std::string& name, const BannedWordList& banned,
                                                       GenerationClient* detector) {
  if (name == "words") return std::make_shared<WordFilter>(banned);
  if (name == "operation") return std::make_shared<OperationFilter>();
  if (name == "llm_detector") {
    if (!detector) throw ConfigError("llm_detector needs a generation client");
    return std::make_shared<LlmDetector>(*detector);
  }
  throw ConfigError("unknown filter: " + name);
}

inline bool plan_matches(const ActionPlan& plan, const ActionSpec& target) {
  if (to_upper(plan.op) != to_upper(target.op)) return false;
  for (const auto& o : target.objects) {
    bool found = false;
    for (const auto& p : plan.objects) found = found || to_lower(p) == to_lower(o);
    if (!found) return false;
  }
  return true;
}

/// Optional external services; null members fall back to the mock brain.
struct CampaignClients {
  GenerationClient* brain = nullptr;
  GenerationClient* detector = nullptr;
  GenerationClient* paraphraser = nullptr;
};

struct CampaignArtifacts {
  std::vector<OptimizationTrace> traces;                  // per target, empty when the hijack did not run
  std::vector<std::vector<nlohmann::json>> extraction;    // per target
};

struct CampaignEnv {
  Vocabulary vocab;
  std::shared_ptr<ReferenceEmbedder> target_emb;
  std::shared_ptr<ReferenceEmbedder> shadow_emb;
  std::shared_ptr<KnowledgeBase> target_kb;
  std::shared_ptr<KnowledgeBase> shadow_kb;
};

inline CampaignEnv build_env(const CampaignSpec& spec) {
  CampaignEnv env;
  env.vocab = Vocabulary::from_texts(vocabulary_texts(spec.corpus, spec.filler));
  env.target_emb = make_embedder(spec.target_embedder, env.vocab);
  env.shadow_emb = make_embedder(spec.shadow_embedder, env.vocab);
  env.target_kb = std::make_shared<KnowledgeBase>(KnowledgeBase::from_entries(spec.corpus, env.target_emb));
  env.shadow_kb = std::make_shared<KnowledgeBase>(KnowledgeBase::from_entries(spec.corpus, env.shadow_emb));
  return env;
}

inline std::unique_ptr<Application> make_application(const CampaignSpec& spec, const CampaignEnv& env,
                                                     const CampaignClients& clients) {
  std::unique_ptr<Application> app;
  if (spec.app.brain == BrainKind::External) {
    if (!clients.brain) throw ConfigError("external brain requested but no client configured");
    app = std::make_unique<Application>(spec.app, *env.target_kb, *clients.brain, clients.paraphraser);
  } else {
    app = std::make_unique<Application>(spec.app, *env.target_kb);
  }
  for (const auto& f : spec.app.enabled_filters) app->add_filter(make_filter(f, spec.banned, clients.detector));
  return app;
}

/// Extraction, assembly, slot placement, optimisation on the shadow store,
/// then replay against the target application. Failures are recorded on the
/// record and never propagate.
inline TargetRecord run_target(std::size_t index, const CampaignSpec& spec, const CampaignEnv& env,
                               const CampaignClients& clients, OptimizationTrace* trace,
                               std::vector<nlohmann::json>* transcript) {
  TargetRecord rec;
  rec.index = index;
  rec.target = spec.targets[index];
  try {
    auto app = make_application(spec, env, clients);

    AttackMemory memory;
    TemplateGenerator generator(splitmix64(spec.seed ^ index));
    auto ex = run_extraction(rec.target, *app, memory, spec.extraction_budget, generator, *env.shadow_emb, spec.extraction);
    rec.extraction_success = ex.success;
    rec.queries = ex.n_q;
    rec.pieces = ex.knowledge.size();
    rec.action2nl_top1 = ex.top1;
    rec.action2nl_top4 = ex.top4;
    if (transcript) *transcript = ex.transcript;
    if (!ex.success) {
      rec.error = "extraction obtained no matching knowledge";
      return rec;
    }

    auto ins = build_assembly_instruction(rec.target, ex.knowledge, spec.banned);
    auto prompt = place_adversarial_slots(ins, spec.r, PromptMode::Text, spec.filler, spec.preamble);
    const auto* shadow_entry = env.shadow_kb->find_by_text(ins.source);
    if (!shadow_entry) {
      rec.error = "extracted knowledge not present in the shadow store";
      return rec;
    }
    rec.target_id = shadow_entry->id;

    auto cfg = spec.optimizer;
    cfg.seed = splitmix64(spec.optimizer.seed ^ spec.seed ^ (index + 1));
    auto hr = optimize(prompt, {rec.target_id}, *env.shadow_emb, *env.shadow_kb, cfg, spec.banned);
    rec.shadow_success = hr.success;
    rec.iterations = static_cast<int>(hr.trace.records.size());
    rec.final_prompt = hr.prompt.rendered();
    if (trace) *trace = hr.trace;

    auto retrieved = env.target_kb->retrieve(std::string_view(rec.final_prompt), cfg.k);
    if (cfg.success_rank > 0 && retrieved.hits.size() > cfg.success_rank) retrieved.hits.resize(cfg.success_rank);
    rec.hijack_success = check_success(retrieved, {rec.target_id}, cfg.tau).first;

    for (const auto& name : spec.filters_under_eval)
      rec.verdicts[name] = make_filter(name, spec.banned, clients.detector)->check(rec.final_prompt).verdict;

    auto resp = app->handle(rec.final_prompt);
    for (const auto& v : resp.verdicts)
      if (!rec.verdicts.contains(v.filter_name)) rec.verdicts[v.filter_name] = v.verdict;
    rec.plan = resp.plan;
    rec.end2end_success = !resp.verdict.blocked() && resp.plan && plan_matches(*resp.plan, rec.target);
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

inline void write_artifacts(const std::string& dir, const CampaignReport& report, const CampaignArtifacts& art) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "traces");
  {
    std::ofstream out(fs::path(dir) / "records.jsonl");
    for (const auto& r : report.records) out << to_json(r).dump() << '\n';
  }
  {
    std::ofstream out(fs::path(dir) / "report.json");
    out << report.to_json().dump(2) << '\n';
  }
  for (std::size_t i = 0; i < art.traces.size(); ++i) {
    std::ofstream out(fs::path(dir) / "traces" / ("hijack-" + std::to_string(i) + ".jsonl"));
    art.traces[i].write_jsonl(out);
  }
  for (std::size_t i = 0; i < art.extraction.size(); ++i) {
    std::ofstream out(fs::path(dir) / "traces" / ("extraction-" + std::to_string(i) + ".jsonl"));
    for (const auto& line : art.extraction[i]) out << line.dump() << '\n';
  }
}

/// Runs every target with a bounded worker pool and assembles the report.
/// Artifacts go to spec.output_dir when it is set.
inline CampaignReport run_campaign(const CampaignSpec& spec, const CampaignClients& clients = {},
                                   CampaignArtifacts* artifacts = nullptr) {
  if (spec.targets.empty()) throw ConfigError("campaign has no targets");
  spec.optimizer.validate();
  auto env = build_env(spec);

  const std::size_t n = spec.targets.size();
  std::vector<TargetRecord> records(n);
  CampaignArtifacts art;
  art.traces.resize(n);
  art.extraction.resize(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) records[i] = run_target(i, spec, env, clients, &art.traces[i], &art.extraction[i]);
  };
  const std::size_t workers = std::min(spec.workers, n);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  CampaignReport rep;
  rep.records = std::move(records);
  rep.aggregates = aggregates(rep.records);
  rep.config = {{"seed", spec.seed},
                {"optimizer", to_json(spec.optimizer)},
                {"shadow_embedder", to_json(spec.shadow_embedder)},
                {"target_embedder", to_json(spec.target_embedder)},
                {"r", spec.r},
                {"extraction_budget", spec.extraction_budget}};
  if (!spec.output_dir.empty()) write_artifacts(spec.output_dir, rep, art);
  if (artifacts) *artifacts = std::move(art);
  return rep;
}

// ---------------------------------------------------------------------------
// Hijack-only benchmark: the extracted knowledge is taken to be the target
// entry itself, so only the retrieval phase is measured.

struct HijackCase {
  ActionSpec target;
  std::string target_id;
};

struct HijackOutcome {
  bool shadow_success = false;
  bool success = false;  // on the target store
  std::string final_prompt;
  OptimizationTrace trace;
};

inline HijackOutcome run_hijack_case(const HijackCase& c, const KnowledgeBase& target_kb, const ReferenceEmbedder& shadow_emb,
                                     const KnowledgeBase& shadow_kb, OptimizerConfig cfg, const BannedWordList& banned,
                                     double r, const std::vector<std::string>& filler, const std::string& preamble = "") {
  const auto* entry = target_kb.find(c.target_id);
  if (!entry) throw Error("unknown target id: " + c.target_id);
  ExtractedRecord rec{entry->text, c.target.op, c.target.objects};
  auto ins = build_assembly_instruction(c.target, {rec}, banned);
  auto prompt = place_adversarial_slots(ins, r, PromptMode::Text, filler, preamble);
  const auto* shadow_entry = shadow_kb.find_by_text(entry->text);
  if (!shadow_entry) throw Error("target text not present in shadow store");
  auto res = optimize(prompt, {shadow_entry->id}, shadow_emb, shadow_kb, cfg, banned);
  HijackOutcome out;
  out.shadow_success = res.success;
  out.final_prompt = res.prompt.rendered();
  out.trace = std::move(res.trace);
  auto retrieved = target_kb.retrieve(std::string_view(out.final_prompt), cfg.k);
  if (cfg.success_rank > 0 && retrieved.hits.size() > cfg.success_rank) retrieved.hits.resize(cfg.success_rank);
  out.success = check_success(retrieved, {c.target_id}, cfg.tau).first;
  return out;
}

/// First corpus entry with the target's op whose objects include all of the
/// target's objects.
inline std::optional<std::string> locate_target_entry(const std::vector<KnowledgeEntry>& corpus, const ActionSpec& target) {
  for (const auto& e : corpus) {
    if (to_upper(e.op_label) != to_upper(target.op)) continue;
    bool all = true;
    for (const auto& o : target.objects)
      all = all && std::find(e.obj_labels.begin(), e.obj_labels.end(), o) != e.obj_labels.end();
    if (all) return e.id;
  }
  return std::nullopt;
}

struct HijackBenchmark {
  std::vector<HijackOutcome> outcomes;
  std::vector<std::string> errors;  // per target, empty on a clean run
  std::size_t shadow_successes = 0;
  std::size_t successes = 0;
};

/// Hijack phase only, for every target of the spec.
inline HijackBenchmark run_hijack_benchmark(const CampaignSpec& spec) {
  if (spec.targets.empty()) throw ConfigError("campaign has no targets");
  spec.optimizer.validate();
  auto env = build_env(spec);
  const std::size_t n = spec.targets.size();
  HijackBenchmark b;
  b.outcomes.resize(n);
  b.errors.resize(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        auto id = locate_target_entry(spec.corpus, spec.targets[i]);
        if (!id) throw Error("no corpus entry for target " + std::to_string(i));
        auto cfg = spec.optimizer;
        cfg.seed = splitmix64(spec.optimizer.seed ^ spec.seed ^ (i + 1));
        b.outcomes[i] = run_hijack_case({spec.targets[i], *id}, *env.target_kb, *env.shadow_emb, *env.shadow_kb, cfg,
                                        spec.banned, spec.r, spec.filler, spec.preamble);
      } catch (const std::exception& e) {
        b.errors[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::min(spec.workers, n);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& o : b.outcomes) b.shadow_successes += o.shadow_success, b.successes += o.success;
  return b;
}

/// Extraction phase only; the records carry extraction fields and nothing else.
inline std::vector<TargetRecord> run_extraction_phase(const CampaignSpec& spec, const CampaignClients& clients = {}) {
  if (spec.targets.empty()) throw ConfigError("campaign has no targets");
  auto env = build_env(spec);
  std::vector<TargetRecord> out;
  for (std::size_t i = 0; i < spec.targets.size(); ++i) {
    TargetRecord rec;
    rec.index = i;
    rec.target = spec.targets[i];
    try {
      auto app = make_application(spec, env, clients);
      AttackMemory memory;
      TemplateGenerator generator(splitmix64(spec.seed ^ i));
      auto ex = run_extraction(rec.target, *app, memory, spec.extraction_budget, generator, *env.shadow_emb, spec.extraction);
      rec.extraction_success = ex.success;
      rec.queries = ex.n_q;
      rec.pieces = ex.knowledge.size();
      rec.action2nl_top1 = ex.top1;
      rec.action2nl_top4 = ex.top4;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latent projection

enum class ProjectionSpace { Retriever, Filter };

struct ProjectedPoint {
  std::string id;
  std::string kind;  // "knowledge" or "prompt"
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

struct LabeledPrompt {
  std::string id;
  std::string text;
  std::string label;
};

/// Two leading principal components of the rows of `X` (centred first).
inline Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& X) {
  if (X.rows() < 3) throw Error("projection needs at least 3 points");
  Eigen::MatrixXd C = X.rowwise() - X.colwise().mean();
  if (C.cwiseAbs().maxCoeff() < 1e-15) throw DegenerateData();
  Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto d = cov.rows();
  Eigen::MatrixXd W(d, 2);
  W.col(0) = es.eigenvectors().col(d - 1);
  W.col(1) = d > 1 ? Eigen::VectorXd(es.eigenvectors().col(d - 2)) : Eigen::VectorXd::Zero(d);
  // Deterministic orientation: largest-magnitude loading positive.
  for (int c = 0; c < 2; ++c) {
    Eigen::Index i;
    W.col(c).cwiseAbs().maxCoeff(&i);
    if (W(i, c) < 0) W.col(c) *= -1.0;
  }
  return C * W;
}

inline std::vector<ProjectedPoint> project_points(const KnowledgeBase& entries, const std::vector<LabeledPrompt>& prompts,
                                                  ProjectionSpace space, const OperationFilter& filter = OperationFilter{}) {
  std::vector<ProjectedPoint> pts;
  std::vector<std::vector<double>> rows;
  auto features = [&](const std::string& text) {
    if (space == ProjectionSpace::Retriever) return entries.encoder().encode_text(text).values;
    return filter.score(text).scores;
  };
  for (const auto& e : entries.entries()) {
    pts.push_back({e.id, "knowledge", 0, 0, e.op_label});
    rows.push_back(space == ProjectionSpace::Retriever ? entries.embedding(e.id).values : features(e.text));
  }
  for (const auto& p : prompts) {
    pts.push_back({p.id, "prompt", 0, 0, p.label});
    rows.push_back(features(p.text));
  }
  if (rows.size() < 3) throw Error("projection needs at least 3 points");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  auto Y = pca_2d(X);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i].x = Y(static_cast<Eigen::Index>(i), 0);
    pts[i].y = Y(static_cast<Eigen::Index>(i), 1);
  }
  return pts;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

/// Writes columns id,kind,x,y,label.
inline std::vector<ProjectedPoint> export_latent_projection(const KnowledgeBase& entries,
                                                            const std::vector<LabeledPrompt>& prompts,
                                                            ProjectionSpace space, const std::string& csv_path) {
  auto pts = project_points(entries, prompts, space);
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write projection: " + csv_path);
  out << "id,kind,x,y,label\n";
  out.precision(17);
  for (const auto& p : pts)
    out << csv_field(p.id) << ',' << p.kind << ',' << p.x << ',' << p.y << ',' << csv_field(p.label) << '\n';
  return pts;
}

}  // namespace ragjack
