#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "emharness/conversation.hpp"
#include "emharness/csv.hpp"
#include "emharness/errors.hpp"
#include "emharness/evaluation.hpp"
#include "emharness/records.hpp"
#include "emharness/textmetrics.hpp"

namespace emh::explain {

using records::Label;

inline constexpr std::string_view kSignConventionSentence =
    "The importance value must be negative if the attribute comparison contributed to a non-match decision "
    "and positive if it contributed to a match decision.";

inline constexpr std::string_view kExplanationRequest =
    "Now explain your decision in a structured format. List all attributes of both entity descriptions "
    "that you used for the matching decision, one attribute per line, exactly in this format:\n"
    "attribute: <attribute name>, importance: <value between -1 and 1>, similarity: <value between 0 and 1>\n";

inline constexpr std::string_view kSimilaritySentence =
    "The similarity value states how similar the values of this attribute are in the two entity descriptions.";

/// Appends the second-turn request for a structured explanation to a
/// conversation that ends with the model's decision.
inline Conversation render_explanation_prompt(const Conversation& prior) {
  if (prior.empty() || prior.messages.back().role != Role::Assistant)
    throw ConfigError("explanation prompt needs a conversation ending with the model's decision");
  Conversation conv = prior;
  std::string body(kExplanationRequest);
  body += kSignConventionSentence;
  body += ' ';
  body += kSimilaritySentence;
  conv.add(Role::User, std::move(body));
  return conv;
}

enum Warning : unsigned {
  kNone = 0,
  kClampedImportance = 1u << 0,
  kClampedSimilarity = 1u << 1,
  kDuplicate = 1u << 2,
};

struct AttributeAssessment {
  std::string attribute;
  double importance = 0;
  double similarity = 0;
  unsigned warnings = kNone;
};

struct StructuredExplanation {
  std::string pair_id;
  Label predicted = Label::NonMatch;
  std::vector<AttributeAssessment> assessments;
};

/// Lowercase, internal whitespace collapsed, markdown emphasis and trailing
/// colons removed.
inline std::string normalize_attribute(std::string_view raw) {
  std::string s;
  for (char c : raw)
    if (c != '*' && c != '`') s += c;
  while (!s.empty() && (s.back() == ':' || std::isspace(static_cast<unsigned char>(s.back())))) s.pop_back();
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

namespace detail {

inline std::optional<double> to_number(std::string_view s) {
  auto t = std::string(records::detail::trim(s));
  if (t.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    double v = std::stod(t, &used);
    if (used != t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::vector<std::string> split_cells(std::string_view line) {
  std::string s(records::detail::trim(line));
  if (!s.empty() && s.front() == '|') s.erase(0, 1);
  if (!s.empty() && s.back() == '|') s.pop_back();
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto p = s.find('|', start);
    cells.emplace_back(records::detail::trim(std::string_view(s).substr(start, p - start)));
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return cells;
}

inline void add_assessment(std::vector<AttributeAssessment>& out, std::string attribute, double importance,
                           double similarity) {
  AttributeAssessment a{std::move(attribute), importance, similarity, kNone};
  if (a.importance < -1 || a.importance > 1) {
    a.importance = std::clamp(a.importance, -1.0, 1.0);
    a.warnings |= kClampedImportance;
  }
  if (a.similarity < 0 || a.similarity > 1) {
    a.similarity = std::clamp(a.similarity, 0.0, 1.0);
    a.warnings |= kClampedSimilarity;
  }
  for (auto& prev : out)
    if (prev.attribute == a.attribute) {
      a.warnings |= kDuplicate;
      prev = std::move(a);
      return;
    }
  out.push_back(std::move(a));
}

}  // namespace detail

/// Accepts `attribute: X, importance: v, similarity: s` lines, optionally
/// bulleted or numbered, and pipe tables whose header names the attribute,
/// importance and similarity columns. Out-of-range values are clamped and
/// flagged; a repeated attribute replaces the earlier one.
inline StructuredExplanation parse_structured_explanation(const std::string& text, std::string pair_id,
                                                          Label predicted) {
  static const std::regex canonical(
      R"(attribute\s*:\s*(.+?)\s*[,;]\s*importance\s*:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*[,;]\s*similarity\s*:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))",
      std::regex::icase | std::regex::ECMAScript);
  StructuredExplanation ex{std::move(pair_id), predicted, {}};
  struct TableCols {
    std::size_t attr, imp, sim;
  };
  std::optional<TableCols> table;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    for (std::size_t p; (p = line.find("**")) != std::string::npos;) line.erase(p, 2);
    std::smatch m;
    if (std::regex_search(line, m, canonical)) {
      auto imp = detail::to_number(m[2].str());
      auto sim = detail::to_number(m[3].str());
      auto attr = normalize_attribute(m[1].str());
      if (imp && sim && !attr.empty()) detail::add_assessment(ex.assessments, attr, *imp, *sim);
      continue;
    }
    if (line.find('|') == std::string::npos) {
      table.reset();
      continue;
    }
    auto cells = detail::split_cells(line);
    std::optional<std::size_t> a, i, s;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      auto c = normalize_attribute(cells[k]);
      if (c == "attribute") a = k;
      else if (c == "importance") i = k;
      else if (c == "similarity") s = k;
    }
    if (a && i && s) {
      table = TableCols{*a, *i, *s};
      continue;
    }
    if (!table) continue;
    std::size_t need = std::max({table->attr, table->imp, table->sim});
    if (cells.size() <= need) continue;
    auto imp = detail::to_number(cells[table->imp]);
    auto sim = detail::to_number(cells[table->sim]);
    auto attr = normalize_attribute(cells[table->attr]);
    if (imp && sim && !attr.empty()) detail::add_assessment(ex.assessments, attr, *imp, *sim);
  }
  if (ex.assessments.empty())
    throw ExplanationParseError("no attribute assessments found in explanation", text);
  return ex;
}

/// Canonical line form, one assessment per line.
inline std::string format_structured_explanation(const StructuredExplanation& ex) {
  std::string out;
  for (const auto& a : ex.assessments) {
    nlohmann::json imp = a.importance, sim = a.similarity;  // shortest round-trip representation
    out += "attribute: " + a.attribute + ", importance: " + imp.dump() + ", similarity: " + sim.dump() + "\n";
  }
  return out;
}

struct AttributeAggregate {
  std::string attribute;
  double frequency = 0;
  double mean_importance = 0;
  double sd_importance = 0;
  std::size_t mentions = 0;
};

/// Per predicted label, the attributes sorted by descending frequency (ties
/// by name). Statistics cover mentions only.
inline std::map<Label, std::vector<AttributeAggregate>> aggregate_explanations(
    const std::vector<StructuredExplanation>& explanations) {
  std::map<Label, std::size_t> totals;
  std::map<Label, std::map<std::string, std::vector<double>>> imps;
  for (const auto& ex : explanations) {
    ++totals[ex.predicted];
    std::set<std::string> seen;
    for (const auto& a : ex.assessments)
      if (seen.insert(a.attribute).second) imps[ex.predicted][a.attribute].push_back(a.importance);
  }
  std::map<Label, std::vector<AttributeAggregate>> out;
  for (auto& [label, attrs] : imps) {
    auto& vec = out[label];
    for (auto& [name, values] : attrs) {
      auto ms = text::mean_and_population_sd(values);
      vec.push_back({name, static_cast<double>(values.size()) / static_cast<double>(totals[label]), ms.mean, ms.sd,
                     values.size()});
    }
    std::sort(vec.begin(), vec.end(), [](const auto& x, const auto& y) {
      if (x.mentions != y.mentions) return x.mentions > y.mentions;
      return x.attribute < y.attribute;
    });
  }
  return out;
}

struct CoverageSummary {
  std::size_t total = 0;
  std::size_t above_threshold = 0;
};

inline CoverageSummary attribute_coverage_summary(const std::vector<AttributeAggregate>& aggregates,
                                                  double threshold = 0.10) {
  CoverageSummary s{aggregates.size(), 0};
  for (const auto& a : aggregates)
    if (a.frequency >= threshold) ++s.above_threshold;
  return s;
}

enum class StringMetric { Cosine, GeneralizedJaccard };

inline std::string_view to_string(StringMetric m) {
  return m == StringMetric::Cosine ? "cosine" : "generalized_jaccard";
}

/// What to compare when an explained attribute is not a record attribute.
enum class MissingAttribute { FullSerialization, Skip };

struct CorrelationResult {
  double r = 0;
  std::size_t collected = 0;
  std::size_t skipped = 0;
  std::size_t fallbacks = 0;
  double inner_threshold = 0.5;
};

inline double string_metric(StringMetric metric, std::string_view a, std::string_view b, double inner_threshold) {
  auto ba = text::TokenBag::from_text(a), bb = text::TokenBag::from_text(b);
  return metric == StringMetric::Cosine ? text::cosine(ba, bb) : text::generalized_jaccard(ba, bb, inner_threshold);
}

namespace detail {

inline std::optional<std::string_view> find_value(const records::EntityRecord& rec, const std::string& attribute) {
  for (const auto& a : rec.attributes())
    if (normalize_attribute(a.name) == attribute) {
      if (a.value && !records::detail::trim(*a.value).empty()) return std::string_view(*a.value);
      return std::nullopt;
    }
  return std::nullopt;
}

}  // namespace detail

/// Metric value the model's similarity for `attribute` is compared against.
/// nullopt when the pair cannot supply one under `missing`.
inline std::optional<double> reference_similarity(const records::CandidatePair& pair, const std::string& attribute,
                                                  StringMetric metric, MissingAttribute missing, bool* fell_back = nullptr,
                                                  double inner_threshold = 0.5) {
  auto l = detail::find_value(pair.left, attribute);
  auto r = detail::find_value(pair.right, attribute);
  if (fell_back) *fell_back = false;
  if (l && r) return string_metric(metric, *l, *r, inner_threshold);
  if (missing == MissingAttribute::Skip) return std::nullopt;
  if (fell_back) *fell_back = true;
  return string_metric(metric, records::serialize_entity(pair.left), records::serialize_entity(pair.right),
                       inner_threshold);
}

/// Pearson r between model similarities and a string metric over all
/// assessments whose pair is known.
inline CorrelationResult correlate_with_string_metrics(
    const std::vector<StructuredExplanation>& explanations,
    const std::unordered_map<std::string, const records::CandidatePair*>& pairs, StringMetric metric,
    MissingAttribute missing = MissingAttribute::FullSerialization, double inner_threshold = 0.5) {
  CorrelationResult res;
  res.inner_threshold = inner_threshold;
  std::vector<double> model, ref;
  for (const auto& ex : explanations) {
    auto it = pairs.find(ex.pair_id);
    for (const auto& a : ex.assessments) {
      if (it == pairs.end()) {
        ++res.skipped;
        continue;
      }
      bool fb = false;
      auto v = reference_similarity(*it->second, a.attribute, metric, missing, &fb, inner_threshold);
      if (!v) {
        ++res.skipped;
        continue;
      }
      if (fb) ++res.fallbacks;
      model.push_back(a.similarity);
      ref.push_back(*v);
    }
  }
  res.collected = model.size();
  if (model.size() < 2)
    throw UndefinedStatisticError("correlation needs at least two comparable assessments, got " +
                                  std::to_string(model.size()));
  res.r = text::pearson(model, ref);
  return res;
}

// ---------------------------------------------------------------------------
// Persistence and reports

inline nlohmann::json to_json(const StructuredExplanation& ex) {
  auto arr = nlohmann::json::array();
  for (const auto& a : ex.assessments)
    arr.push_back({{"attribute", a.attribute},
                   {"importance", a.importance},
                   {"similarity", a.similarity},
                   {"warnings", a.warnings}});
  return {{"pair_id", ex.pair_id}, {"predicted", std::string(records::to_string(ex.predicted))}, {"assessments", arr}};
}

inline StructuredExplanation explanation_from_json(const nlohmann::json& j) {
  StructuredExplanation ex;
  ex.pair_id = j.at("pair_id").get<std::string>();
  ex.predicted = records::label_from_string(j.at("predicted").get<std::string>());
  for (const auto& a : j.at("assessments"))
    ex.assessments.push_back({a.at("attribute").get<std::string>(), a.at("importance").get<double>(),
                              a.at("similarity").get<double>(), a.value("warnings", 0u)});
  return ex;
}

/// Matches / Non-Matches side by side, one row per attribute rank.
inline void emit_aggregate_report(const std::map<Label, std::vector<AttributeAggregate>>& agg,
                                  eval::ReportFormat fmt, std::ostream& out, std::size_t top = 0) {
  eval::detail::TableWriter w(out, fmt);
  w.header({"Matches Attribute", "Freq.", "Mean Import.", "St.Dev.", "Non-Matches Attribute", "Freq.", "Mean Import.",
            "St.Dev."});
  static const std::vector<AttributeAggregate> none;
  auto side = [&](Label l) -> const std::vector<AttributeAggregate>& {
    auto it = agg.find(l);
    return it == agg.end() ? none : it->second;
  };
  const auto& m = side(Label::Match);
  const auto& n = side(Label::NonMatch);
  std::size_t rows = std::max(m.size(), n.size());
  if (top) rows = std::min(rows, top);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<std::string> cells;
    for (const auto* v : {&m, &n}) {
      if (i < v->size()) {
        const auto& a = (*v)[i];
        cells.insert(cells.end(), {a.attribute, eval::fixed2(a.frequency), eval::fixed2(a.mean_importance),
                                   eval::fixed2(a.sd_importance)});
      } else {
        cells.insert(cells.end(), {"", "", "", ""});
      }
    }
    w.row(cells);
  }
}

}  // namespace emh::explain
