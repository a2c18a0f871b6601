#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emharness/demos.hpp"
#include "emharness/errorlab.hpp"
#include "emharness/evaluation.hpp"
#include "emharness/explain.hpp"
#include "emharness/http_backend.hpp"
#include "emharness/llmclient.hpp"
#include "emharness/matcher.hpp"
#include "emharness/promptkit.hpp"
#include "emharness/records.hpp"

namespace emh::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kBackend = 3, kDegraded = 4 };

struct BackendOptions {
  std::string kind = "scripted";  // scripted | http
  std::string model = "scripted-model";
  std::string script;
  std::string endpoint = llm::HttpBackendConfig{}.endpoint;
  int timeout = 60;
  std::size_t parallelism = 1;
  double rate = 0.0;
  std::string cache;  // empty: <runs>/cache.jsonl
  bool no_cache = false;
};

/// Everything `run` needs; the resolved values are stored as config.json.
struct ExperimentConfig {
  std::string dataset;
  std::string dataset_dir;
  std::string schema;
  BackendOptions backend;
  std::string designs = "all";
  std::string strategy = "none";  // none | handpicked | random | related
  std::string handpicked;
  std::uint64_t seed = 42;
  std::size_t shots = 6;
  std::string demo_style = "conversational";
  std::string rules = "none";  // none | handwritten | learn
  std::string rules_file;
  std::string learn_from;
  std::string prices;
  std::string run_id;
  double temperature = 0.0;
  int max_output_tokens = 0;
  std::string format = "markdown";
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    auto t = records::detail::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline eval::ReportFormat parse_format(const std::string& f) {
  if (f == "markdown" || f == "md") return eval::ReportFormat::Markdown;
  if (f == "delimited" || f == "csv") return eval::ReportFormat::Delimited;
  throw ConfigError("unknown report format '" + f + "' (markdown | delimited)");
}

inline std::string report_ext(eval::ReportFormat f) { return f == eval::ReportFormat::Markdown ? ".md" : ".csv"; }

inline json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + p.string() + ": " + e.what());
  }
}

template <class F>
auto read_jsonl_file(const fs::path& p, F parse) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  return matcher::read_jsonl(in, parse, p.string());
}

inline void write_lines(const fs::path& p, const std::vector<json>& items) {
  std::string s;
  for (const auto& j : items) s += j.dump() + "\n";
  eval::write_file(p, s);
}

inline std::string json_string(const json& j, const char* key, const std::string& dflt = {}) {
  return j.contains(key) && j[key].is_string() ? j[key].get<std::string>() : dflt;
}

inline json to_json(const BackendOptions& b) {
  return {{"kind", b.kind},       {"model", b.model},         {"script", b.script},
          {"endpoint", b.endpoint}, {"timeout", b.timeout},   {"parallelism", b.parallelism},
          {"rate", b.rate}};
}

inline json to_json(const ExperimentConfig& c, const std::vector<std::string>& designs, const std::string& domain_noun) {
  return {{"run_id", c.run_id},
          {"dataset", c.dataset},
          {"dataset_dir", c.dataset_dir},
          {"schema", c.schema},
          {"domain_noun", domain_noun},
          {"backend", to_json(c.backend)},
          {"designs", designs},
          {"strategy", c.strategy},
          {"handpicked", c.handpicked},
          {"seed", c.seed},
          {"shots", c.shots},
          {"demo_style", c.demo_style},
          {"rules", c.rules},
          {"rules_file", c.rules_file},
          {"learn_from", c.learn_from},
          {"prices", c.prices},
          {"temperature", c.temperature},
          {"max_output_tokens", c.max_output_tokens},
          {"format", c.format}};
}

inline std::shared_ptr<llm::Backend> make_backend(const BackendOptions& b) {
  if (b.kind == "scripted") {
    if (b.script.empty()) throw ConfigError("the scripted backend needs --script");
    return std::make_shared<llm::ScriptedBackend>(llm::ScriptedBackend::from_file(b.script));
  }
  if (b.kind == "http") return std::make_shared<llm::HttpBackend>(llm::HttpBackendConfig{b.endpoint, "", b.timeout});
  throw ConfigError("unknown backend kind '" + b.kind + "' (scripted | http)");
}

inline llm::Client make_client(const BackendOptions& b, const fs::path& runs_dir) {
  std::shared_ptr<llm::ResponseCache> cache;
  if (!b.no_cache) cache = std::make_shared<llm::ResponseCache>(b.cache.empty() ? runs_dir / "cache.jsonl" : fs::path(b.cache));
  return llm::Client(make_backend(b), {}, cache);
}

/// Overlay backend flags given on the command line over the stored ones.
inline BackendOptions stored_backend(const json& cfg, const BackendOptions& cli, const CLI::App& app) {
  BackendOptions b = cli;
  const json& s = cfg.value("backend", json::object());
  auto take = [&](const char* flag, const char* key, std::string& dst) {
    if (app.count(flag) == 0 && s.contains(key)) dst = s[key].get<std::string>();
  };
  take("--backend", "kind", b.kind);
  take("--model", "model", b.model);
  take("--script", "script", b.script);
  take("--endpoint", "endpoint", b.endpoint);
  if (app.count("--parallelism") == 0 && s.contains("parallelism")) b.parallelism = s["parallelism"].get<std::size_t>();
  if (app.count("--rate") == 0 && s.contains("rate")) b.rate = s["rate"].get<double>();
  return b;
}

inline std::string counts_line(const std::string& split, const records::Dataset& ds) {
  return split + ": " + std::to_string(ds.pairs.size()) + " pairs (" + std::to_string(ds.positives()) + "/" +
         std::to_string(ds.negatives()) + ")";
}

struct RunFiles {
  fs::path dir;
  json config;
  records::Dataset test;
  std::vector<matcher::MatchDecision> decisions;
  std::vector<Conversation> conversations;  // aligned with decisions
};

inline fs::path run_dir(const fs::path& runs, const std::string& run_id) {
  if (run_id.empty()) throw ConfigError("--run-id is required");
  auto d = runs / run_id;
  if (!fs::is_directory(d)) throw ConfigError("run '" + run_id + "' not found under " + runs.string());
  return d;
}

inline records::Dataset load_run_dataset(const fs::path& dir, const json& cfg) {
  records::IngestionSchema schema;
  schema.domain_noun = json_string(cfg, "domain_noun", schema.domain_noun);
  return records::ingest_dataset(dir / "test.csv", schema, json_string(cfg, "dataset"), records::Split::Test);
}

/// Decisions and their prompts for one design of a run.
inline RunFiles load_run(const fs::path& runs, const std::string& run_id, std::string& design) {
  RunFiles rf;
  rf.dir = run_dir(runs, run_id);
  rf.config = read_json_file(rf.dir / "config.json");
  rf.test = load_run_dataset(rf.dir, rf.config);
  auto designs = rf.config.value("designs", std::vector<std::string>{});
  if (design.empty()) {
    if (designs.empty()) throw ConfigError("run '" + run_id + "' records no designs");
    design = designs.front();
  } else if (std::find(designs.begin(), designs.end(), design) == designs.end()) {
    throw ConfigError("design '" + design + "' was not part of run '" + run_id + "'");
  }
  std::map<std::string, Conversation> prompts;
  std::ifstream in(rf.dir / "conversations.jsonl", std::ios::binary);
  if (!in) throw ConfigError("run '" + run_id + "' has no conversations.jsonl");
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    if (j.at("design_name") == design)
      prompts[j.at("pair_id").get<std::string>()] = conversation_from_json(j.at("messages"));
  }
  for (auto& d : read_jsonl_file(rf.dir / "decisions.jsonl", matcher::decision_from_json)) {
    if (d.design_name != design) continue;
    auto it = prompts.find(d.pair_id);
    if (it == prompts.end()) throw ConfigError("no stored prompt for pair " + d.pair_id);
    rf.conversations.push_back(it->second);
    rf.decisions.push_back(std::move(d));
  }
  return rf;
}

/// Splices the keys of a `run --config FILE` manifest in front of the other
/// run flags. Top-level keys and keys of a `[run]` section are accepted.
inline std::vector<std::string> expand_manifest(std::vector<std::string> args) {
  auto run = std::find(args.begin(), args.end(), "run");
  if (run == args.end()) return args;
  std::string file;
  for (auto it = run + 1; it != args.end(); ++it) {
    if (*it == "--config" && it + 1 != args.end()) file = *(it + 1);
    else if (it->rfind("--config=", 0) == 0) file = it->substr(9);
  }
  if (file.empty()) return args;
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read manifest " + file);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError("invalid manifest " + file + ": " + e.what());
  }
  std::vector<std::string> flags;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == "run")) continue;
    if (item.name == "config") continue;
    for (const auto& v : item.inputs) flags.push_back("--" + item.name + "=" + v);
    if (item.inputs.empty()) flags.push_back("--" + item.name);
  }
  args.insert(run + 1, flags.begin(), flags.end());
  return args;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct IngestOptions {
  std::string dataset;
  std::string dir;
  std::string schema;
  std::string out;
  bool downsample = false;
  records::DownsampleConfig sampling;
};

inline int cmd_ingest(const IngestOptions& o, const fs::path& runs, std::ostream& out) {
  if (o.dataset.empty()) throw ConfigError("--dataset is required");
  std::optional<records::IngestionSchema> schema;
  if (!o.schema.empty()) schema = records::IngestionSchema::from_file(o.schema);
  auto b = records::ingest_benchmark_dir(o.dir, o.dataset, schema);
  if (o.downsample) {
    b.dev = records::downsample(b.dev, o.sampling);
    b.test = records::downsample(b.test, o.sampling);
  }
  fs::path dst = o.out.empty() ? runs / "datasets" / o.dataset : fs::path(o.out);
  fs::create_directories(dst);
  for (auto [name, ds] : {std::pair{"dev.csv", &b.dev}, std::pair{"test.csv", &b.test}}) {
    std::ostringstream ss;
    records::write_dataset_csv(*ds, ss);
    eval::write_file(dst / name, ss.str());
  }
  eval::write_file(dst / "schema.json", json{{"domain_noun", b.test.domain_noun}}.dump(2) + "\n");
  out << "dataset: " << o.dataset << "\n"
      << detail::counts_line("dev", b.dev) << "\n"
      << detail::counts_line("test", b.test) << "\n";
  return kOk;
}

inline int cmd_run(ExperimentConfig c, const fs::path& runs, std::ostream& out, std::ostream& err) {
  if (c.run_id.empty()) throw ConfigError("--run-id is required");
  if (c.dataset_dir.empty()) throw ConfigError("--dataset-dir is required");
  if (c.strategy != "none" && c.rules != "none")
    throw ConfigError("demonstration strategy and matching rules are mutually exclusive");
  if (c.strategy != "none" && c.strategy != "handpicked" && c.strategy != "random" && c.strategy != "related")
    throw ConfigError("unknown strategy '" + c.strategy + "' (none | handpicked | random | related)");
  if (c.rules != "none" && c.rules != "handwritten" && c.rules != "learn")
    throw ConfigError("unknown rules mode '" + c.rules + "' (none | handwritten | learn)");
  if (c.strategy != "none" && (c.shots < 2 || c.shots > 10 || c.shots % 2))
    throw ConfigError("shots must be one of 2, 4, 6, 8, 10");
  if (c.strategy == "handpicked" && c.handpicked.empty()) throw ConfigError("handpicked strategy needs --handpicked");
  if (c.rules == "handwritten" && c.rules_file.empty()) throw ConfigError("handwritten rules need --rules-file");
  if (c.rules == "learn" && c.learn_from.empty()) throw ConfigError("learned rules need --learn-from");
  if (c.demo_style != "conversational" && c.demo_style != "inline")
    throw ConfigError("unknown demo style '" + c.demo_style + "'");
  auto fmt = detail::parse_format(c.format);
  if (c.dataset.empty()) c.dataset = fs::path(c.dataset_dir).filename().string();

  std::optional<records::IngestionSchema> schema;
  if (!c.schema.empty()) schema = records::IngestionSchema::from_file(c.schema);
  auto bench = records::ingest_benchmark_dir(c.dataset_dir, c.dataset, schema);
  const auto& noun = bench.test.domain_noun;

  std::vector<prompts::PromptDesign> designs;
  if (c.designs == "all") designs = prompts::catalog_designs(noun);
  else
    for (const auto& n : detail::split_list(c.designs)) designs.push_back(prompts::find_design(n, noun));
  if (designs.empty()) throw ConfigError("no prompt designs selected");
  for (const auto& d : designs) (void)d.question();

  std::optional<eval::PriceTable> prices;
  if (!c.prices.empty()) prices = eval::PriceTable::from_file(c.prices);

  matcher::MatchOptions mo;
  mo.model_id = c.backend.model;
  mo.temperature = c.temperature;
  if (c.max_output_tokens > 0) mo.max_output_tokens = c.max_output_tokens;
  mo.batch = {c.backend.parallelism, c.backend.rate};
  mo.demo_style = c.demo_style == "inline" ? prompts::DemoStyle::Inline : prompts::DemoStyle::Conversational;
  demos::DemonstrationPool pool(bench.dev);
  if (c.strategy != "none") {
    demos::SelectionStrategy strat = demos::Related{};
    if (c.strategy == "handpicked")
      strat = demos::Handpicked::from_file(c.handpicked, schema.value_or(records::IngestionSchema{}));
    else if (c.strategy == "random")
      strat = demos::RandomSelection{c.seed};
    mo.demos = matcher::DemoConfig{&pool, strat, c.shots};
  }
  if (c.rules == "handwritten") mo.rules = prompts::load_rules_file(c.rules_file);

  auto client = detail::make_client(c.backend, runs);
  fs::path dir = runs / c.run_id;
  if (fs::exists(dir)) throw ConfigError("run '" + c.run_id + "' already exists; choose a new --run-id");
  fs::create_directories(dir / "reports");

  std::vector<std::string> names;
  for (const auto& d : designs) names.push_back(d.name);
  eval::write_file(dir / "config.json", detail::to_json(c, names, noun).dump(2) + "\n");
  {
    std::ostringstream ss;
    records::write_dataset_csv(bench.test, ss);
    eval::write_file(dir / "test.csv", ss.str());
  }

  if (c.rules == "learn") {
    auto examples = records::ingest_dataset(c.learn_from, schema.value_or(records::IngestionSchema{}), "rules",
                                            records::Split::Development);
    std::vector<records::LabeledPair> labeled;
    for (const auto& p : examples.pairs) labeled.push_back({p, p.gold});
    auto r = client.cached_complete({c.backend.model, prompts::render_rule_learning_prompt(labeled), c.temperature,
                                     std::nullopt});
    mo.rules = prompts::parse_rule_list(r.text);
    prompts::write_rules_file(*mo.rules, dir / "rules.txt");
  }

  auto gold = eval::gold_labels(bench.test);
  eval::ExperimentReport report;
  std::vector<json> decisions, failures, conversations, usage;
  for (const auto& d : designs) {
    auto run = matcher::match_dataset(bench.test, d, mo, client);
    for (const auto& x : run.decisions) decisions.push_back(matcher::to_json(x));
    for (const auto& f : run.failures) failures.push_back(matcher::to_json(f));
    for (std::size_t i = 0; i < run.conversations.size(); ++i)
      conversations.push_back({{"pair_id", bench.test.pairs[i].pair_id},
                               {"design_name", d.name},
                               {"messages", to_json(run.conversations[i])}});
    auto row = eval::summarize_run(run, gold, c.backend.model, d.name, prices ? &*prices : nullptr);
    std::size_t pt = 0, ct = 0;
    for (const auto& x : run.decisions) pt += x.usage.prompt_tokens, ct += x.usage.completion_tokens;
    usage.push_back({{"design_name", d.name},
                     {"model_id", c.backend.model},
                     {"decisions", run.decisions.size()},
                     {"prompt_tokens", pt},
                     {"completion_tokens", ct}});
    report.rows.push_back(row);
  }
  detail::write_lines(dir / "decisions.jsonl", decisions);
  detail::write_lines(dir / "failures.jsonl", failures);
  detail::write_lines(dir / "conversations.jsonl", conversations);
  detail::write_lines(dir / "usage.jsonl", usage);
  std::vector<json> rows;
  for (const auto& r : report.rows) rows.push_back(eval::to_json(r));
  detail::write_lines(dir / "reports" / "results.jsonl", rows);
  std::ostringstream rep, timing;
  eval::emit_report(report, fmt, rep);
  eval::emit_timing(report, fmt, timing);
  eval::write_file(dir / "reports" / ("report" + detail::report_ext(fmt)), rep.str());
  eval::write_file(dir / "reports" / ("timing" + detail::report_ext(fmt)), timing.str());
  out << rep.str();
  if (!failures.empty()) err << failures.size() << " request(s) failed; see " << (dir / "failures.jsonl").string() << "\n";
  out << "run " << c.run_id << ": " << decisions.size() << " decisions, " << failures.size() << " failures\n";
  return kOk;
}

struct ExplainOptions {
  std::string run_id;
  std::string design;
  BackendOptions backend;
  double inner_threshold = 0.5;
  bool skip_missing = false;
  std::string format = "markdown";
};

inline int cmd_explain(const ExplainOptions& o, const CLI::App& app, const fs::path& runs, std::ostream& out,
                       std::ostream& err) {
  std::string design = o.design;
  auto fmt = detail::parse_format(o.format);
  auto rf = detail::load_run(runs, o.run_id, design);
  auto backend = detail::stored_backend(rf.config, o.backend, app);
  auto client = detail::make_client(backend, runs);
  const double temperature = rf.config.value("temperature", 0.0);
  std::vector<llm::CompletionRequest> reqs;
  for (std::size_t i = 0; i < rf.decisions.size(); ++i) {
    Conversation prior = rf.conversations[i];
    prior.add(Role::Assistant, rf.decisions[i].raw_completion);
    reqs.push_back({backend.model, explain::render_explanation_prompt(prior), temperature, std::nullopt});
  }
  auto slots = client.run_batch(reqs, {backend.parallelism, backend.rate});
  std::vector<explain::StructuredExplanation> parsed;
  std::vector<json> good, bad;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& d = rf.decisions[i];
    if (!slots[i].ok()) {
      if (slots[i].kind == llm::FailureKind::Auth) std::rethrow_exception(slots[i].error);
      bad.push_back({{"pair_id", d.pair_id}, {"error", slots[i].message}, {"raw", nullptr}});
      continue;
    }
    try {
      parsed.push_back(explain::parse_structured_explanation(slots[i].result->text, d.pair_id, d.predicted));
      good.push_back(explain::to_json(parsed.back()));
    } catch (const ExplanationParseError& e) {
      bad.push_back({{"pair_id", d.pair_id}, {"error", e.what()}, {"raw", e.raw()}});
    }
  }
  detail::write_lines(rf.dir / "explanations.jsonl", good);
  detail::write_lines(rf.dir / "explanation_failures.jsonl", bad);
  eval::write_file(rf.dir / "explain.json",
                   json{{"design_name", design}, {"parsed", good.size()}, {"failures", bad.size()}}.dump(2) + "\n");

  std::ostringstream agg;
  explain::emit_aggregate_report(explain::aggregate_explanations(parsed), fmt, agg);
  eval::write_file(rf.dir / "reports" / ("explanations" + detail::report_ext(fmt)), agg.str());

  std::unordered_map<std::string, const records::CandidatePair*> pairs;
  for (const auto& p : rf.test.pairs) pairs[p.pair_id] = &p;
  std::ostringstream corr;
  eval::detail::TableWriter w(corr, fmt);
  w.header({"Metric", "Pearson r", "Collected", "Skipped", "Fallbacks"});
  for (auto m : {explain::StringMetric::Cosine, explain::StringMetric::GeneralizedJaccard}) {
    try {
      auto r = explain::correlate_with_string_metrics(
          parsed, pairs, m, o.skip_missing ? explain::MissingAttribute::Skip : explain::MissingAttribute::FullSerialization,
          o.inner_threshold);
      w.row({std::string(explain::to_string(m)), eval::fixed2(r.r), std::to_string(r.collected),
             std::to_string(r.skipped), std::to_string(r.fallbacks)});
    } catch (const UndefinedStatisticError& e) {
      w.row({std::string(explain::to_string(m)), "undefined", "-", "-", "-"});
    }
  }
  eval::write_file(rf.dir / "reports" / ("correlation" + detail::report_ext(fmt)), corr.str());

  out << agg.str() << "\n" << corr.str();
  out << "explanations: " << good.size() << " parsed, " << bad.size() << " parse failures\n";
  if (!bad.empty()) {
    err << "degraded: " << bad.size() << " explanation(s) could not be parsed\n";
    return kDegraded;
  }
  return kOk;
}

struct AnalyzeOptions {
  std::string run_id;
  std::string annotations;
  BackendOptions backend;
  std::size_t token_budget = 100000;
  std::string format = "markdown";
};

inline int cmd_analyze_errors(const AnalyzeOptions& o, const CLI::App& app, const fs::path& runs, std::ostream& out,
                              std::ostream& err) {
  auto fmt = detail::parse_format(o.format);
  auto dir = detail::run_dir(runs, o.run_id);
  if (!fs::exists(dir / "explain.json")) throw ConfigError("run '" + o.run_id + "' has no explanations; run explain first");
  std::string design = detail::read_json_file(dir / "explain.json").at("design_name").get<std::string>();
  auto rf = detail::load_run(runs, o.run_id, design);
  auto backend = detail::stored_backend(rf.config, o.backend, app);
  std::unordered_map<std::string, explain::StructuredExplanation> expl;
  for (auto& e : detail::read_jsonl_file(dir / "explanations.jsonl", explain::explanation_from_json))
    expl.emplace(e.pair_id, std::move(e));
  auto errors = errorlab::collect_errors(rf.decisions, rf.test, expl);
  if (errors.fp.empty() && errors.fn.empty()) {
    out << "no erroneous decisions in run " << o.run_id << "; error class synthesis skipped\n";
    return kOk;
  }
  auto client = detail::make_client(backend, runs);
  std::optional<errorlab::PolarAnnotations> ann;
  if (!o.annotations.empty()) ann = errorlab::load_annotations(o.annotations);
  const double temperature = rf.config.value("temperature", 0.0);

  std::vector<json> catalog_out, assign_out;
  std::vector<std::pair<std::string, errorlab::AccuracyReport>> accuracy;
  std::size_t failed = 0;
  for (auto pol : {errorlab::Polarity::FalsePositive, errorlab::Polarity::FalseNegative}) {
    const auto& cases = pol == errorlab::Polarity::FalsePositive ? errors.fp : errors.fn;
    if (cases.empty()) {
      out << to_string(pol) << ": no errors\n";
      continue;
    }
    auto classes = errorlab::synthesize_error_classes(client, backend.model, cases, pol, o.token_budget, temperature);
    for (const auto& c : classes) catalog_out.push_back(errorlab::to_json(c));
    std::vector<llm::CompletionRequest> reqs;
    for (const auto& e : cases)
      reqs.push_back({backend.model, errorlab::render_classification_prompt(classes, e), temperature, std::nullopt});
    auto slots = client.run_batch(reqs, {backend.parallelism, backend.rate});
    std::vector<errorlab::ClassAssignment> assignments;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i].ok()) {
        if (slots[i].kind == llm::FailureKind::Auth) std::rethrow_exception(slots[i].error);
        ++failed;
        err << "classification of " << cases[i].pair_id << " failed: " << slots[i].message << "\n";
        continue;
      }
      assignments.push_back(errorlab::parse_classification(slots[i].result->text, classes, cases[i].pair_id));
      auto j = errorlab::to_json(assignments.back());
      j["polarity"] = std::string(to_string(pol));
      assign_out.push_back(j);
    }
    out << to_string(pol) << ": " << cases.size() << " errors, " << classes.size() << " error classes\n";
    for (const auto& c : classes) out << "  " << c.index << ". " << c.name << ": " << c.description << "\n";
    if (ann)
      accuracy.emplace_back(std::string(to_string(pol)),
                            errorlab::classification_accuracy(
                                assignments, pol == errorlab::Polarity::FalsePositive ? ann->fp : ann->fn, classes));
  }
  detail::write_lines(dir / "error_classes.jsonl", catalog_out);
  detail::write_lines(dir / "assignments.jsonl", assign_out);
  if (ann) {
    std::ostringstream rep;
    errorlab::emit_accuracy_report(accuracy, fmt, rep);
    eval::write_file(dir / "reports" / ("error_accuracy" + detail::report_ext(fmt)), rep.str());
    out << rep.str();
  }
  if (failed) return kDegraded;
  return kOk;
}

struct CostOptions {
  std::vector<std::string> run_ids;
  std::vector<std::string> scenarios;  // label,model,prompt_tokens,completion_tokens
  std::string prices;
  std::string baseline;
  std::string out;
  std::string format = "markdown";
};

inline int cmd_cost(const CostOptions& o, const fs::path& runs, std::ostream& out) {
  if (o.prices.empty()) throw ConfigError("--prices is required");
  auto prices = eval::PriceTable::from_file(o.prices);
  auto fmt = detail::parse_format(o.format);
  std::vector<eval::CostLine> lines;
  for (const auto& id : o.run_ids) {
    auto dir = detail::run_dir(runs, id);
    auto cfg = detail::read_json_file(dir / "config.json");
    std::string model = cfg.value("backend", json::object()).value("model", std::string());
    double n = 0, pt = 0, ct = 0;
    std::ifstream in(dir / "usage.jsonl");
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      n += j.at("decisions").get<double>();
      pt += j.at("prompt_tokens").get<double>();
      ct += j.at("completion_tokens").get<double>();
    }
    eval::CostLine l{id, model, n > 0 ? pt / n : 0.0, n > 0 ? ct / n : 0.0, 0.0};
    l.cost_per_prompt = eval::cost_per_prompt(l.mean_prompt_tokens, l.mean_completion_tokens, model, prices);
    lines.push_back(l);
  }
  for (const auto& s : o.scenarios) {
    auto parts = detail::split_list(s);
    if (parts.size() != 4) throw ConfigError("scenario must be 'label,model,prompt_tokens,completion_tokens': " + s);
    eval::CostLine l{parts[0], parts[1], 0, 0, 0};
    try {
      l.mean_prompt_tokens = std::stod(parts[2]);
      l.mean_completion_tokens = std::stod(parts[3]);
    } catch (const std::exception&) {
      throw ConfigError("scenario token counts must be numbers: " + s);
    }
    l.cost_per_prompt = eval::cost_per_prompt(l.mean_prompt_tokens, l.mean_completion_tokens, l.model_id, prices);
    lines.push_back(l);
  }
  if (lines.empty()) throw ConfigError("cost needs at least one --run-id or --scenario");
  std::optional<std::size_t> base;
  if (!o.baseline.empty()) {
    for (std::size_t i = 0; i < lines.size(); ++i)
      if (lines[i].label == o.baseline) base = i;
    if (!base) throw ConfigError("unknown baseline '" + o.baseline + "'");
  }
  std::ostringstream rep;
  eval::emit_cost_report(lines, base, fmt, rep);
  for (const auto& l : lines) rep << l.label << ": " << eval::cents(l.cost_per_prompt) << " per prompt\n";
  if (!o.out.empty()) eval::write_file(o.out, rep.str());
  else if (!o.run_ids.empty())
    eval::write_file(runs / o.run_ids.front() / "reports" / ("cost" + detail::report_ext(fmt)), rep.str());
  out << rep.str();
  return kOk;
}

struct OracleOptions {
  std::string dataset_dir;
  std::string schema;
  std::string out;
  bool invert = false;
  std::string explanation;
  std::string classes;
  std::string classification;
};

/// Writes a scripted-backend file answering every test pair with its gold
/// label; optional canned answers for the explanation and error-analysis
/// prompts.
inline int cmd_make_oracle_script(const OracleOptions& o, std::ostream& out) {
  if (o.out.empty()) throw ConfigError("--out is required");
  std::optional<records::IngestionSchema> schema;
  if (!o.schema.empty()) schema = records::IngestionSchema::from_file(o.schema);
  auto b = records::ingest_benchmark_dir(o.dataset_dir, "oracle", schema);
  json entries = json::array();
  auto add = [&](const std::string& pattern, const std::string& response) {
    entries.push_back({{"match_kind", "substring"}, {"pattern", pattern}, {"response", response}});
  };
  // Follow-up prompts embed the framed pair too, so they must come first.
  if (!o.explanation.empty()) add(std::string(explain::kSignConventionSentence), o.explanation);
  if (!o.classes.empty()) add("Derive a set of error classes", o.classes);
  if (!o.classes.empty()) add("Merge them into a single list", o.classes);
  if (!o.classification.empty()) add("Pick all error classes that apply", o.classification);
  for (const auto& e : matcher::make_oracle_script(b.test, o.invert)) add(e.pattern, e.response);
  eval::write_file(o.out, json{{"fallback", nullptr}, {"entries", entries}}.dump(2) + "\n");
  out << "wrote " << entries.size() << " script entries to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline void add_backend_options(CLI::App* cmd, BackendOptions& b) {
  cmd->add_option("--backend", b.kind, "Backend kind: scripted | http");
  cmd->add_option("--model", b.model, "Model identifier sent to the backend");
  cmd->add_option("--script", b.script, "Scripted backend response file");
  cmd->add_option("--endpoint", b.endpoint, "Chat-completions URL for the http backend");
  cmd->add_option("--timeout", b.timeout, "HTTP timeout in seconds");
  cmd->add_option("--parallelism", b.parallelism, "Concurrent requests")->check(CLI::PositiveNumber);
  cmd->add_option("--rate", b.rate, "Request rate cap per second (0 = none)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--cache", b.cache, "Response cache file (default <runs-dir>/cache.jsonl)");
  cmd->add_flag("--no-cache", b.no_cache, "Disable the response cache");
}

inline int main_with_args(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Entity matching experiments with chat-completion models"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string runs = "runs";
  app.add_option("--runs-dir", runs, "Directory holding run directories and the response cache");

  IngestOptions ing;
  auto* ingest = app.add_subcommand("ingest", "Validate a benchmark directory and print its counts");
  ingest->add_option("--dataset", ing.dataset, "Dataset name")->required();
  ingest->add_option("--dir", ing.dir, "Directory with dev.csv / test.csv")->required();
  ingest->add_option("--schema", ing.schema, "Ingestion schema JSON");
  ingest->add_option("--out", ing.out, "Where to write the normalized copy");
  ingest->add_flag("--downsample", ing.downsample, "Cap positives/negatives per split");
  ingest->add_option("--max-positives", ing.sampling.max_positives);
  ingest->add_option("--max-negatives", ing.sampling.max_negatives);
  ingest->add_option("--seed", ing.sampling.seed);

  ExperimentConfig cfg;
  auto* run = app.add_subcommand("run", "Match a test split with one or more prompt designs");
  std::string manifest;
  run->add_option("--config", manifest, "Experiment manifest (key = value); flags given on the command line win");
  run->add_option("--dataset", cfg.dataset, "Dataset name");
  run->add_option("--dataset-dir", cfg.dataset_dir, "Directory with dev.csv / test.csv");
  run->add_option("--schema", cfg.schema, "Ingestion schema JSON");
  add_backend_options(run, cfg.backend);
  run->add_option("--designs", cfg.designs, "Comma-separated design names or 'all'");
  run->add_option("--strategy", cfg.strategy, "none | handpicked | random | related");
  run->add_option("--handpicked", cfg.handpicked, "Handpicked demonstrations file");
  run->add_option("--seed", cfg.seed, "Seed for random demonstrations");
  run->add_option("--shots", cfg.shots, "Number of demonstrations (2..10, even)");
  run->add_option("--demo-style", cfg.demo_style, "conversational | inline");
  run->add_option("--rules", cfg.rules, "none | handwritten | learn");
  run->add_option("--rules-file", cfg.rules_file, "Handwritten rules, one per line");
  run->add_option("--learn-from", cfg.learn_from, "Labeled pairs to learn rules from");
  run->add_option("--prices", cfg.prices, "Price table JSON");
  run->add_option("--run-id", cfg.run_id, "Run directory name");
  run->add_option("--temperature", cfg.temperature);
  run->add_option("--max-output-tokens", cfg.max_output_tokens);
  run->add_option("--format", cfg.format, "markdown | delimited");

  ExplainOptions ex;
  auto* explain_cmd = app.add_subcommand("explain", "Ask for structured explanations of a run's decisions");
  explain_cmd->add_option("--run-id", ex.run_id)->required();
  explain_cmd->add_option("--design", ex.design, "Design to explain (default: first of the run)");
  add_backend_options(explain_cmd, ex.backend);
  explain_cmd->add_option("--inner-threshold", ex.inner_threshold, "Generalized Jaccard inner threshold");
  explain_cmd->add_flag("--skip-missing", ex.skip_missing, "Skip attributes absent from the records");
  explain_cmd->add_option("--format", ex.format);

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze-errors", "Synthesize and score error classes");
  analyze->add_option("--run-id", an.run_id)->required();
  analyze->add_option("--annotations", an.annotations, "Annotation file (pair_id,polarity,classes)");
  add_backend_options(analyze, an.backend);
  analyze->add_option("--token-budget", an.token_budget, "Split synthesis prompts above this many tokens (0 = never)");
  analyze->add_option("--format", an.format);

  CostOptions co;
  auto* cost = app.add_subcommand("cost", "Token and cost comparison");
  cost->add_option("--run-id", co.run_ids, "Run to include (repeatable)");
  cost->add_option("--scenario", co.scenarios, "label,model,prompt_tokens,completion_tokens (repeatable)");
  cost->add_option("--prices", co.prices, "Price table JSON")->required();
  cost->add_option("--baseline", co.baseline, "Label of the baseline line");
  cost->add_option("--out", co.out, "Output file");
  cost->add_option("--format", co.format);

  OracleOptions oo;
  auto* oracle = app.add_subcommand("make-oracle-script", "Write a scripted backend that answers with gold labels");
  oracle->add_option("--dataset-dir", oo.dataset_dir)->required();
  oracle->add_option("--schema", oo.schema);
  oracle->add_option("--out", oo.out)->required();
  oracle->add_flag("--invert", oo.invert, "Answer with the opposite label");
  oracle->add_option("--explanation", oo.explanation, "Answer for explanation prompts");
  oracle->add_option("--classes", oo.classes, "Answer for error class synthesis prompts");
  oracle->add_option("--classification", oo.classification, "Answer for error classification prompts");

  try {
    args = detail::expand_manifest(std::move(args));
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfig;
  }
  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(ing, runs, out);
    if (run->parsed()) return cmd_run(cfg, runs, out, err);
    if (explain_cmd->parsed()) return cmd_explain(ex, *explain_cmd, runs, out, err);
    if (analyze->parsed()) return cmd_analyze_errors(an, *analyze, runs, out, err);
    if (cost->parsed()) return cmd_cost(co, runs, out);
    if (oracle->parsed()) return cmd_make_oracle_script(oo, out);
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const IngestionError& e) {
    err << "ingestion error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParseError& e) {
    err << "could not parse model output: " << e.what() << "\n";
    return kDegraded;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return main_with_args(std::move(args));
}

}  // namespace emh::cli
