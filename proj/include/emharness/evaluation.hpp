#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "emharness/csv.hpp"
#include "emharness/matcher.hpp"
#include "emharness/records.hpp"
#include "emharness/textmetrics.hpp"

namespace emh::eval {

using records::Label;

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

using GoldLabels = std::unordered_map<std::string, Label>;

inline GoldLabels gold_labels(const records::Dataset& ds) {
  GoldLabels g;
  for (const auto& p : ds.pairs) g.emplace(p.pair_id, p.gold);
  return g;
}

/// Match is the positive class.
inline ConfusionCounts confusion(const std::vector<matcher::MatchDecision>& decisions, const GoldLabels& gold) {
  ConfusionCounts c;
  for (const auto& d : decisions) {
    auto it = gold.find(d.pair_id);
    if (it == gold.end()) throw ConfigError("decision for unknown pair id '" + d.pair_id + "'");
    bool pred = d.predicted == Label::Match, truth = it->second == Label::Match;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct Metrics {
  double precision = 0, recall = 0, f1 = 0;
};

/// Zero denominators yield 0.
inline Metrics precision_recall_f1(const ConfusionCounts& c) {
  Metrics m;
  if (c.tp + c.fp) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision + m.recall > 0) m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

/// Mean and population SD of F1 over designs.
inline text::MeanSd sensitivity(const std::map<std::string, double>& f1_by_design) {
  if (f1_by_design.empty()) throw UndefinedStatisticError("sensitivity over an empty design set");
  std::vector<double> xs;
  for (const auto& [_, f] : f1_by_design) xs.push_back(f);
  return text::mean_and_population_sd(xs);
}

// ---------------------------------------------------------------------------
// Cost

struct ModelPrice {
  double prompt_per_1m = 0;
  double completion_per_1m = 0;
};

class PriceTable {
 public:
  PriceTable() = default;
  PriceTable(std::initializer_list<std::pair<const std::string, ModelPrice>> init) {
    for (const auto& [m, p] : init) set(m, p);
  }

  void set(const std::string& model, ModelPrice p) {
    if (p.prompt_per_1m < 0 || p.completion_per_1m < 0) throw ConfigError("negative price for model " + model);
    prices_[model] = p;
  }

  const ModelPrice& at(const std::string& model) const {
    auto it = prices_.find(model);
    if (it == prices_.end()) throw ConfigError("no price configured for model '" + model + "'");
    return it->second;
  }

  bool contains(const std::string& model) const { return prices_.count(model) != 0; }

  /// `[{"model_id":..., "prompt_price_per_1m":..., "completion_price_per_1m":...}]`,
  /// optionally wrapped as `{"models": [...]}`.
  static PriceTable from_json(const nlohmann::json& j) {
    const auto& arr = j.is_array() ? j : j.at("models");
    PriceTable t;
    for (const auto& e : arr)
      t.set(e.at("model_id").get<std::string>(),
            {e.at("prompt_price_per_1m").get<double>(), e.at("completion_price_per_1m").get<double>()});
    return t;
  }

  static PriceTable from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read price table " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("invalid price table " + path.string() + ": " + e.what());
    }
  }

 private:
  std::map<std::string, ModelPrice> prices_;
};

/// Currency units (prices are per one million tokens). Token counts may be
/// means, hence double.
inline double cost_per_prompt(double prompt_tokens, double completion_tokens, const std::string& model_id,
                              const PriceTable& prices) {
  const auto& p = prices.at(model_id);
  return prompt_tokens * p.prompt_per_1m / 1e6 + completion_tokens * p.completion_per_1m / 1e6;
}

inline double cost_per_prompt(const llm::TokenUsage& usage, const std::string& model_id, const PriceTable& prices) {
  return cost_per_prompt(static_cast<double>(usage.prompt_tokens), static_cast<double>(usage.completion_tokens),
                         model_id, prices);
}

// ---------------------------------------------------------------------------
// Reports

struct DesignResult {
  std::string model_id;
  std::string design;
  ConfusionCounts counts;
  Metrics metrics;
  std::size_t failures = 0;
  std::size_t ambiguous = 0;
  double mean_prompt_tokens = 0;
  double mean_completion_tokens = 0;
  std::optional<double> cost_per_prompt;  // currency units
  std::optional<double> total_cost;
  double mean_latency = 0;  // seconds
  double wall_seconds = 0;
};

struct ModelSummary {
  std::string model_id;
  double mean_f1 = 0;  // percent
  double sd_f1 = 0;    // percent, population
  std::size_t designs = 0;
  bool complete_catalog = false;
};

inline constexpr std::size_t kCatalogSize = 10;

struct ExperimentReport {
  std::vector<DesignResult> rows;

  /// Per model, in first-appearance order. F1 values in percent.
  std::vector<ModelSummary> summaries() const {
    std::vector<ModelSummary> out;
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, double>> f1s;
    for (const auto& r : rows) {
      if (!f1s.count(r.model_id)) order.push_back(r.model_id);
      f1s[r.model_id][r.design] = r.metrics.f1 * 100.0;
    }
    for (const auto& m : order) {
      auto s = sensitivity(f1s[m]);
      out.push_back({m, s.mean, s.sd, f1s[m].size(), f1s[m].size() >= kCatalogSize});
    }
    return out;
  }

  const DesignResult* find(const std::string& model, const std::string& design) const {
    for (const auto& r : rows)
      if (r.model_id == model && r.design == design) return &r;
    return nullptr;
  }
};

/// Aggregates one (model, design) run into a report row.
inline DesignResult summarize_run(const matcher::MatchRun& run, const GoldLabels& gold, const std::string& model_id,
                                  const std::string& design, const PriceTable* prices = nullptr) {
  DesignResult r;
  r.model_id = model_id;
  r.design = design;
  r.counts = confusion(run.decisions, gold);
  r.metrics = precision_recall_f1(r.counts);
  r.failures = run.failures.size();
  double pt = 0, ct = 0;
  for (const auto& d : run.decisions) {
    pt += static_cast<double>(d.usage.prompt_tokens);
    ct += static_cast<double>(d.usage.completion_tokens);
    if (matcher::is_ambiguous(d.raw_completion)) ++r.ambiguous;
  }
  const double n = static_cast<double>(run.decisions.size());
  if (n > 0) {
    r.mean_prompt_tokens = pt / n;
    r.mean_completion_tokens = ct / n;
  }
  if (prices && prices->contains(model_id)) {
    r.cost_per_prompt = cost_per_prompt(r.mean_prompt_tokens, r.mean_completion_tokens, model_id, *prices);
    r.total_cost = cost_per_prompt(pt, ct, model_id, *prices);
  }
  double lat = 0;
  for (double l : run.latencies) lat += l;
  if (!run.latencies.empty()) r.mean_latency = lat / static_cast<double>(run.latencies.size());
  r.wall_seconds = run.wall_seconds;
  return r;
}

using RowKey = std::pair<std::string, std::string>;  // (model, design)

/// Per-prompt cost of every row divided by the baseline row's.
inline std::map<RowKey, double> cost_ratios(const ExperimentReport& report, const RowKey& baseline) {
  const auto* base = report.find(baseline.first, baseline.second);
  if (!base) throw ConfigError("baseline " + baseline.first + "/" + baseline.second + " not in report");
  if (!base->cost_per_prompt || *base->cost_per_prompt == 0.0)
    throw UndefinedStatisticError("baseline " + baseline.first + "/" + baseline.second + " has zero cost");
  std::map<RowKey, double> out;
  for (const auto& r : report.rows)
    if (r.cost_per_prompt) out[{r.model_id, r.design}] = *r.cost_per_prompt / *base->cost_per_prompt;
  return out;
}

inline std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

/// Currency units rendered in cents with two decimals, e.g. "0.02¢".
inline std::string cents(double currency) { return fixed2(currency * 100.0) + "\xC2\xA2"; }

enum class ReportFormat { Markdown, Delimited };

namespace detail {

class TableWriter {
 public:
  TableWriter(std::ostream& out, ReportFormat fmt) : out_(out), fmt_(fmt) {}

  void header(const std::vector<std::string>& cols) {
    row(cols);
    if (fmt_ == ReportFormat::Markdown) {
      std::string sep = "|";
      for (std::size_t i = 0; i < cols.size(); ++i) sep += i == 0 ? " --- |" : " ---: |";
      out_ << sep << '\n';
    }
  }

  void row(const std::vector<std::string>& cells) {
    if (fmt_ == ReportFormat::Delimited) {
      out_ << csv::join(cells) << '\n';
      return;
    }
    out_ << '|';
    for (const auto& c : cells) out_ << ' ' << c << " |";
    out_ << '\n';
  }

 private:
  std::ostream& out_;
  ReportFormat fmt_;
};

}  // namespace detail

/// Deterministic table: one row per (model, design), then Mean and
/// Standard deviation rows per model. F1, precision and recall in percent.
/// Timing is emitted separately (emit_timing) so reports stay reproducible.
inline void emit_report(const ExperimentReport& report, ReportFormat fmt, std::ostream& out) {
  detail::TableWriter w(out, fmt);
  w.header({"Model", "Prompt", "Precision", "Recall", "F1", "TP", "FP", "TN", "FN", "Failed", "Ambiguous",
            "Mean # Tokens prompt", "Mean # Tokens completion", "Cost per prompt", "Total cost"});
  for (const auto& r : report.rows) {
    w.row({r.model_id, r.design, fixed2(r.metrics.precision * 100), fixed2(r.metrics.recall * 100),
           fixed2(r.metrics.f1 * 100), std::to_string(r.counts.tp), std::to_string(r.counts.fp),
           std::to_string(r.counts.tn), std::to_string(r.counts.fn), std::to_string(r.failures),
           std::to_string(r.ambiguous), fixed2(r.mean_prompt_tokens), fixed2(r.mean_completion_tokens),
           r.cost_per_prompt ? cents(*r.cost_per_prompt) : "-", r.total_cost ? cents(*r.total_cost) : "-"});
  }
  if (report.rows.empty()) return;
  for (const auto& s : report.summaries()) {
    std::string note = s.complete_catalog ? "" : " (" + std::to_string(s.designs) + " of " +
                                                     std::to_string(kCatalogSize) + " designs)";
    std::vector<std::string> mean(15, ""), sd(15, "");
    mean[0] = sd[0] = s.model_id;
    mean[1] = "Mean" + note;
    sd[1] = "Standard deviation" + note;
    mean[4] = fixed2(s.mean_f1);
    sd[4] = fixed2(s.sd_f1);
    w.row(mean);
    w.row(sd);
  }
}

inline void emit_timing(const ExperimentReport& report, ReportFormat fmt, std::ostream& out) {
  detail::TableWriter w(out, fmt);
  w.header({"Model", "Prompt", "Runtime per prompt (s)", "Wall time (s)"});
  for (const auto& r : report.rows) w.row({r.model_id, r.design, fixed2(r.mean_latency), fixed2(r.wall_seconds)});
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void emit_report(const ExperimentReport& report, ReportFormat fmt, const std::filesystem::path& path) {
  std::ostringstream ss;
  emit_report(report, fmt, ss);
  write_file(path, ss.str());
}

inline nlohmann::json to_json(const DesignResult& r) {
  nlohmann::json j = {{"model_id", r.model_id},
                      {"design", r.design},
                      {"tp", r.counts.tp},
                      {"fp", r.counts.fp},
                      {"tn", r.counts.tn},
                      {"fn", r.counts.fn},
                      {"failures", r.failures},
                      {"ambiguous", r.ambiguous},
                      {"mean_prompt_tokens", r.mean_prompt_tokens},
                      {"mean_completion_tokens", r.mean_completion_tokens}};
  j["cost_per_prompt"] = r.cost_per_prompt ? nlohmann::json(*r.cost_per_prompt) : nlohmann::json();
  j["total_cost"] = r.total_cost ? nlohmann::json(*r.total_cost) : nlohmann::json();
  return j;
}

inline DesignResult design_result_from_json(const nlohmann::json& j) {
  DesignResult r;
  r.model_id = j.at("model_id").get<std::string>();
  r.design = j.at("design").get<std::string>();
  r.counts = {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
              j.at("fn").get<std::size_t>()};
  r.metrics = precision_recall_f1(r.counts);
  r.failures = j.value("failures", std::size_t{0});
  r.ambiguous = j.value("ambiguous", std::size_t{0});
  r.mean_prompt_tokens = j.value("mean_prompt_tokens", 0.0);
  r.mean_completion_tokens = j.value("mean_completion_tokens", 0.0);
  if (j.contains("cost_per_prompt") && !j["cost_per_prompt"].is_null()) r.cost_per_prompt = j["cost_per_prompt"].get<double>();
  if (j.contains("total_cost") && !j["total_cost"].is_null()) r.total_cost = j["total_cost"].get<double>();
  return r;
}

// ---------------------------------------------------------------------------
// Cost comparison

struct CostLine {
  std::string label;  // run or scenario name
  std::string model_id;
  double mean_prompt_tokens = 0;
  double mean_completion_tokens = 0;
  double cost_per_prompt = 0;  // currency units
};

/// Token and cost table with increases relative to `baseline` (an index
/// into `lines`).
inline void emit_cost_report(const std::vector<CostLine>& lines, std::optional<std::size_t> baseline,
                             ReportFormat fmt, std::ostream& out) {
  detail::TableWriter w(out, fmt);
  w.header({"Run", "Model", "Mean # Tokens prompt", "Mean # Tokens completion", "Mean # Tokens combined",
            "Cost per prompt", "Token incr.", "Cost incr."});
  if (baseline && *baseline >= lines.size()) throw ConfigError("unknown baseline");
  for (const auto& l : lines) {
    double combined = l.mean_prompt_tokens + l.mean_completion_tokens;
    std::string tok = "-", cost = "-";
    if (baseline) {
      const auto& b = lines[*baseline];
      double bc = b.mean_prompt_tokens + b.mean_completion_tokens;
      if (bc > 0) tok = fixed2(combined / bc) + "x";
      if (b.cost_per_prompt > 0) cost = fixed2(l.cost_per_prompt / b.cost_per_prompt) + "x";
    }
    w.row({l.label, l.model_id, fixed2(l.mean_prompt_tokens), fixed2(l.mean_completion_tokens), fixed2(combined),
           cents(l.cost_per_prompt), tok, cost});
  }
}

}  // namespace emh::eval
