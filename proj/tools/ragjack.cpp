// SPDX-License-Identifier: Apache-2.0
//
// ragjack command-line driver.
//
// Exit status: 0 success, 1 campaign-level error, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ragjack/campaign.hpp"
#include "ragjack/http_clients.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ragjack;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> method;
  std::optional<double> r;
  std::optional<double> eps;
  std::optional<int> N;
  std::optional<std::size_t> k;
  bool json = false;
};

void add_common(CLI::App* sub, CommonFlags& f, bool need_config) {
  auto* c = sub->add_option("--config", f.config, "campaign config (JSON)");
  if (need_config) c->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "campaign seed");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--method", f.method, "fgsm | ifgsm | pgd | cw");
  sub->add_option("--r", f.r, "attack strength: fraction of slot tokens");
  sub->add_option("--eps", f.eps, "perturbation budget");
  sub->add_option("--N", f.N, "iteration budget");
  sub->add_option("--k", f.k, "retrieval depth");
  sub->add_flag("--json", f.json, "machine-readable JSON on stdout");
}

CampaignSpec load_spec(const CommonFlags& f) {
  auto spec = CampaignSpec::load(f.config);
  if (f.seed) spec.seed = *f.seed;
  if (!f.out.empty()) spec.output_dir = f.out;
  if (f.method) spec.optimizer.method = method_from_string(*f.method);
  if (f.r) spec.r = *f.r;
  if (f.eps) {
    spec.optimizer.epsilon = *f.eps;
    if (*f.eps > 0) spec.optimizer.alpha_init = std::min(spec.optimizer.alpha_init, *f.eps);
  }
  if (f.N) spec.optimizer.N = *f.N;
  if (f.k) spec.optimizer.k = spec.app.k = *f.k;
  spec.optimizer.validate();
  return spec;
}

struct Clients {
  std::unique_ptr<HttpGenerationClient> http;
  CampaignClients view;
};

// External services come from the environment; only wired when the config asks.
Clients make_clients(const CampaignSpec& spec) {
  Clients c;
  bool detector = std::find(spec.app.enabled_filters.begin(), spec.app.enabled_filters.end(), "llm_detector") !=
                      spec.app.enabled_filters.end() ||
                  std::find(spec.filters_under_eval.begin(), spec.filters_under_eval.end(), "llm_detector") !=
                      spec.filters_under_eval.end();
  if (spec.app.brain != BrainKind::External && !detector && !spec.app.paraphrase) return c;
  auto http = HttpGenerationClient::from_env();
  if (!http) throw ConfigError("RAGJACK_BRAIN_URL is not set");
  http->set_logger([](const std::string& line) { std::clog << "[http] " << line << '\n'; });
  c.http = std::make_unique<HttpGenerationClient>(std::move(*http));
  if (spec.app.brain == BrainKind::External) c.view.brain = c.http.get();
  if (detector) c.view.detector = c.http.get();
  if (spec.app.paraphrase) c.view.paraphraser = c.http.get();
  return c;
}

void emit(const json& j, bool as_json) {
  if (as_json) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  for (const auto& [key, value] : j.items()) std::cout << key << ": " << value.dump() << '\n';
}

int cmd_ingest(const CommonFlags& f, const std::string& corpus_path, std::size_t dim) {
  std::vector<KnowledgeEntry> corpus;
  EmbedderSpec es;
  if (!f.config.empty()) {
    auto spec = load_spec(f);
    corpus = spec.corpus;
    es = spec.target_embedder;
  } else if (!corpus_path.empty()) {
    corpus = read_corpus(corpus_path);
  } else {
    throw ConfigError("ingest needs --config or --corpus");
  }
  if (f.seed) es.seed = *f.seed;
  if (dim) es.dim = dim;
  auto vocab = Vocabulary::from_texts(vocabulary_texts(corpus));
  auto emb = make_embedder(es, vocab);
  auto kb = KnowledgeBase::from_entries(corpus, emb);
  json out = {{"entries", kb.size()}, {"vocab", vocab.size()}, {"dim", emb->dim()}, {"seed", emb->seed()}};
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    emb->save((fs::path(f.out) / "embedder.json").string());
    out["snapshot"] = (fs::path(f.out) / "embedder.json").string();
  }
  emit(out, f.json);
  return 0;
}

int cmd_extract(const CommonFlags& f) {
  auto spec = load_spec(f);
  auto clients = make_clients(spec);
  auto records = run_extraction_phase(spec, clients.view);
  double nq = compute_nq(records);
  json out = {{"targets", records.size()},
              {"asr_extraction", compute_asr(records, Phase::Extraction)},
              {"mean_nq", std::isfinite(nq) ? json(nq) : json(nullptr)}};
  if (!spec.output_dir.empty()) {
    fs::create_directories(spec.output_dir);
    std::ofstream o(fs::path(spec.output_dir) / "extraction.jsonl");
    for (const auto& r : records) o << to_json(r).dump() << '\n';
  }
  emit(out, f.json);
  return 0;
}

int cmd_hijack(const CommonFlags& f) {
  auto spec = load_spec(f);
  auto b = run_hijack_benchmark(spec);
  const double n = static_cast<double>(spec.targets.size());
  json prompts = json::array();
  std::size_t errors = 0;
  for (std::size_t i = 0; i < b.outcomes.size(); ++i) {
    errors += !b.errors[i].empty();
    prompts.push_back({{"index", i}, {"prompt", b.outcomes[i].final_prompt}, {"success", b.outcomes[i].success},
                       {"error", b.errors[i]}});
  }
  json out = {{"targets", spec.targets.size()},
              {"method", to_string(spec.optimizer.method)},
              {"shadow_successes", b.shadow_successes},
              {"successes", b.successes},
              {"asr_hijack", static_cast<double>(b.successes) / n},
              {"errors", errors}};
  if (!spec.output_dir.empty()) {
    fs::create_directories(fs::path(spec.output_dir) / "traces");
    for (std::size_t i = 0; i < b.outcomes.size(); ++i) {
      std::ofstream o(fs::path(spec.output_dir) / "traces" / ("hijack-" + std::to_string(i) + ".jsonl"));
      b.outcomes[i].trace.write_jsonl(o);
    }
    std::ofstream(fs::path(spec.output_dir) / "prompts.json") << prompts.dump(2) << '\n';
  }
  if (f.json) out["prompts"] = prompts;
  emit(out, f.json);
  return 0;
}

int cmd_attack(const CommonFlags& f) {
  auto spec = load_spec(f);
  auto clients = make_clients(spec);
  auto rep = run_campaign(spec, clients.view);
  if (f.json) {
    std::cout << rep.to_json().dump(2) << '\n';
  } else {
    emit(rep.aggregates, false);
  }
  return 0;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prompts file: " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!trim(line).empty()) out.push_back(line);
  return out;
}

int cmd_eval_guards(const CommonFlags& f, const std::string& prompts_path) {
  auto spec = load_spec(f);
  auto clients = make_clients(spec);
  std::vector<std::string> prompts;
  if (!prompts_path.empty()) {
    prompts = read_lines(prompts_path);
  } else {
    auto b = run_hijack_benchmark(spec);
    for (const auto& o : b.outcomes)
      if (!o.final_prompt.empty()) prompts.push_back(o.final_prompt);
  }
  auto names = spec.filters_under_eval.empty() ? spec.app.enabled_filters : spec.filters_under_eval;
  if (names.empty()) throw ConfigError("no filters to evaluate");
  json rates = json::object();
  for (const auto& name : names) rates[name] = bypass_rate(prompts, *make_filter(name, spec.banned, clients.view.detector));
  emit({{"prompts", prompts.size()}, {"bypass", rates}}, f.json);
  return 0;
}

int cmd_project(const CommonFlags& f) {
  auto spec = load_spec(f);
  if (spec.output_dir.empty()) throw ConfigError("project needs --out or output_dir");
  auto b = run_hijack_benchmark(spec);
  auto env = build_env(spec);
  std::vector<LabeledPrompt> prompts;
  for (std::size_t i = 0; i < b.outcomes.size(); ++i)
    if (!b.outcomes[i].final_prompt.empty())
      prompts.push_back({"prompt-" + std::to_string(i), b.outcomes[i].final_prompt, spec.targets[i].op});
  fs::create_directories(spec.output_dir);
  auto retr = (fs::path(spec.output_dir) / "projection_retriever.csv").string();
  auto filt = (fs::path(spec.output_dir) / "projection_filter.csv").string();
  auto a = export_latent_projection(*env.target_kb, prompts, ProjectionSpace::Retriever, retr);
  export_latent_projection(*env.target_kb, prompts, ProjectionSpace::Filter, filt);
  emit({{"points", a.size()}, {"retriever", retr}, {"filter", filt}}, f.json);
  return 0;
}

int cmd_report(const CommonFlags& f, const std::string& records_path) {
  std::string path = records_path;
  if (path.empty()) {
    if (f.out.empty()) throw ConfigError("report needs --records or --out");
    path = (fs::path(f.out) / "records.jsonl").string();
  }
  auto rep = report_from_records(path);
  emit(rep.aggregates, f.json);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-hijacking attack harness for retrieval-augmented applications"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string corpus_path, prompts_path, records_path;
  std::size_t dim = 0;

  auto* ingest = app.add_subcommand("ingest", "embed a knowledge file and optionally save the embedder snapshot");
  add_common(ingest, f, false);
  ingest->add_option("--corpus", corpus_path, "knowledge JSONL")->check(CLI::ExistingFile);
  ingest->add_option("--dim", dim, "embedding dimension");

  auto* extract = app.add_subcommand("extract", "knowledge-extraction phase only");
  add_common(extract, f, true);
  auto* hijack = app.add_subcommand("hijack", "hijacking-prompt optimisation only");
  add_common(hijack, f, true);
  auto* attack = app.add_subcommand("attack", "full pipeline: extraction, hijack, replay");
  add_common(attack, f, true);

  auto* guards = app.add_subcommand("eval-guards", "bypass rate per filter");
  add_common(guards, f, true);
  guards->add_option("--prompts", prompts_path, "one prompt per line (default: optimise the targets)")
      ->check(CLI::ExistingFile);

  auto* project = app.add_subcommand("project", "2-D projection CSVs of knowledge and hijacking prompts");
  add_common(project, f, true);

  auto* report = app.add_subcommand("report", "recompute aggregates from persisted records");
  add_common(report, f, false);
  report->add_option("--records", records_path, "records.jsonl")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(f, corpus_path, dim);
    if (*extract) return cmd_extract(f);
    if (*hijack) return cmd_hijack(f);
    if (*attack) return cmd_attack(f);
    if (*guards) return cmd_eval_guards(f, prompts_path);
    if (*project) return cmd_project(f);
    if (*report) return cmd_report(f, records_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
