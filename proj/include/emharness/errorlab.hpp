#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
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
#include "emharness/evaluation.hpp"
#include "emharness/explain.hpp"
#include "emharness/llmclient.hpp"
#include "emharness/matcher.hpp"
#include "emharness/records.hpp"

namespace emh::errorlab {

using records::Label;

enum class Polarity { FalsePositive, FalseNegative };

inline std::string_view to_string(Polarity p) { return p == Polarity::FalsePositive ? "FP" : "FN"; }

inline Polarity polarity_from_string(std::string_view s) {
  std::string l = text::to_lower(s);
  if (l == "fp" || l == "false_positive" || l == "falsepositive" || l == "false positive") return Polarity::FalsePositive;
  if (l == "fn" || l == "false_negative" || l == "falsenegative" || l == "false negative") return Polarity::FalseNegative;
  throw ConfigError("unknown error polarity '" + std::string(s) + "'");
}

struct ErrorCase {
  std::string pair_id;
  Polarity polarity = Polarity::FalsePositive;
  records::CandidatePair pair;
  explain::StructuredExplanation explanation;

  Label gold() const { return polarity == Polarity::FalsePositive ? Label::NonMatch : Label::Match; }
  Label predicted() const { return polarity == Polarity::FalsePositive ? Label::Match : Label::NonMatch; }
};

struct ErrorClass {
  int index = 0;  // 1-based, contiguous per polarity
  std::string name;
  std::string description;
  Polarity polarity = Polarity::FalsePositive;

  friend bool operator==(const ErrorClass&, const ErrorClass&) = default;
};

struct ClassAssignment {
  std::string pair_id;
  std::map<int, double> assigned;  // class index -> confidence
  std::vector<std::string> warnings;
};

struct CollectedErrors {
  std::vector<ErrorCase> fp;
  std::vector<ErrorCase> fn;
};

/// Wrong decisions split by polarity, each with its explanation.
inline CollectedErrors collect_errors(const std::vector<matcher::MatchDecision>& decisions,
                                      const records::Dataset& gold,
                                      const std::unordered_map<std::string, explain::StructuredExplanation>& explanations) {
  CollectedErrors out;
  std::vector<std::string> missing;
  for (const auto& d : decisions) {
    const auto* pair = gold.find(d.pair_id);
    if (!pair) throw ConfigError("decision for unknown pair id '" + d.pair_id + "'");
    if (d.predicted == pair->gold) continue;
    auto it = explanations.find(d.pair_id);
    if (it == explanations.end()) {
      missing.push_back(d.pair_id);
      continue;
    }
    Polarity pol = d.predicted == Label::Match ? Polarity::FalsePositive : Polarity::FalseNegative;
    (pol == Polarity::FalsePositive ? out.fp : out.fn).push_back({d.pair_id, pol, *pair, it->second});
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& m : missing) ids += (ids.empty() ? "" : ", ") + m;
    throw ConfigError("no explanation for erroneous decisions: " + ids);
  }
  return out;
}

namespace detail {

inline std::string_view polarity_phrase(Polarity p) {
  return p == Polarity::FalsePositive
             ? "false positives: pairs that do not refer to the same real-world entity but were predicted as matches"
             : "false negatives: pairs that refer to the same real-world entity but were predicted as non-matches";
}

inline std::string_view label_text(Label l) { return l == Label::Match ? "Match" : "Non-Match"; }

inline std::string render_case(const ErrorCase& e) {
  std::string expl = explain::format_structured_explanation(e.explanation);
  if (!expl.empty() && expl.back() == '\n') expl.pop_back();
  return records::frame_pair(e.pair) + "\nCorrect label: " + std::string(label_text(e.gold())) +
         "\nPredicted label: " + std::string(label_text(e.predicted())) + "\nExplanation:\n" + expl;
}

inline void check_polarity(const std::vector<ErrorCase>& errors, Polarity polarity) {
  if (errors.empty()) throw ConfigError("error class synthesis needs at least one error");
  for (const auto& e : errors)
    if (e.polarity != polarity) throw ConfigError("error " + e.pair_id + " has the wrong polarity for this prompt");
}

inline std::string format_classes(const std::vector<ErrorClass>& classes) {
  std::string out;
  for (const auto& c : classes)
    out += std::to_string(c.index) + ". " + c.name + ": " + c.description + "\n";
  return out;
}

}  // namespace detail

inline Conversation render_synthesis_prompt(const std::vector<ErrorCase>& errors, Polarity polarity) {
  detail::check_polarity(errors, polarity);
  std::string body =
      "The following pairs of entity descriptions were classified wrongly by an entity matching system. All of "
      "them are ";
  body += detail::polarity_phrase(polarity);
  body +=
      ". Each pair is followed by the correct label, the predicted label and the structured explanation the "
      "system gave for its decision. Derive a set of error classes that describe why the system made these "
      "errors. Return a numbered list with one class per line in the format 'N. Name: Description'.";
  for (std::size_t i = 0; i < errors.size(); ++i)
    body += "\n\nError " + std::to_string(i + 1) + ":\n" + detail::render_case(errors[i]);
  Conversation conv;
  conv.add(Role::User, std::move(body));
  return conv;
}

/// Asks the model to merge class lists synthesized from separate chunks.
inline Conversation render_merge_prompt(const std::vector<std::vector<ErrorClass>>& lists, Polarity polarity) {
  std::string body = "The following lists of error classes were derived from separate subsets of the ";
  body += detail::polarity_phrase(polarity);
  body +=
      " of an entity matching system. Merge them into a single list without duplicates. Return a numbered list "
      "with one class per line in the format 'N. Name: Description'.";
  for (std::size_t i = 0; i < lists.size(); ++i)
    body += "\n\nList " + std::to_string(i + 1) + ":\n" + detail::format_classes(lists[i]);
  while (!body.empty() && body.back() == '\n') body.pop_back();
  Conversation conv;
  conv.add(Role::User, std::move(body));
  return conv;
}

/// Parses "N. Name: description" entries. Markdown bold is ignored, lines
/// directly following an entry continue its description, and indices are
/// renumbered 1..n in order of appearance.
inline std::vector<ErrorClass> parse_error_classes(const std::string& completion, Polarity polarity) {
  static const std::regex entry(R"(^\s*(?:[-*]\s+)?(\d+)[.)]\s*([^:]+?)\s*:\s*(.*)$)");
  std::vector<ErrorClass> out;
  bool continuing = false;
  std::size_t start = 0;
  while (start <= completion.size()) {
    auto end = completion.find('\n', start);
    if (end == std::string::npos) end = completion.size();
    std::string line = prompts::detail::strip_markdown_emphasis(completion.substr(start, end - start));
    start = end + 1;
    auto trimmed = records::detail::trim(line);
    std::smatch m;
    if (std::regex_match(line, m, entry)) {
      out.push_back({static_cast<int>(out.size() + 1), std::string(records::detail::trim(m[2].str())),
                     std::string(records::detail::trim(m[3].str())), polarity});
      continuing = true;
    } else if (trimmed.empty()) {
      continuing = false;
    } else if (continuing) {
      auto& d = out.back().description;
      if (!d.empty()) d += ' ';
      d.append(trimmed);
    }
  }
  if (out.empty()) throw ParseError("no numbered error classes found", completion);
  return out;
}

inline Conversation render_classification_prompt(const std::vector<ErrorClass>& classes, const ErrorCase& error) {
  if (classes.empty()) throw ConfigError("classification needs a non-empty class catalog");
  for (const auto& c : classes)
    if (c.polarity != error.polarity)
      throw ConfigError("error class catalog polarity does not match error " + error.pair_id);
  std::string body = "The following error classes describe why an entity matching system produced ";
  body += detail::polarity_phrase(error.polarity);
  body += ".\n\n" + detail::format_classes(classes) + "\n" + detail::render_case(error);
  body +=
      "\n\nPick all error classes that apply to this pair and provide a confidence value between 0 and 1 for "
      "each of them. Answer in the format 'Classes: <number> (<confidence>), ...'. If no class applies, answer "
      "'none apply'.";
  Conversation conv;
  conv.add(Role::User, std::move(body));
  return conv;
}

/// Reads class references with confidences: "2 (0.8)", "2: 0.8", exact
/// class names optionally followed by "(0.7)", and bare numbers on lines
/// that start with "class". Unknown indices are dropped with a warning;
/// missing confidences default to 1.0.
inline ClassAssignment parse_classification(const std::string& completion, const std::vector<ErrorClass>& catalog,
                                            std::string pair_id = {}) {
  static const std::regex conf_after(R"(^\s*\(\s*(\d*\.?\d+)\s*\))");
  static const std::regex numbered(R"((\d+)\s*(?:\(\s*(\d*\.?\d+)\s*\)|:\s*(\d*\.?\d+)(?![\d.]))?)");
  ClassAssignment res;
  res.pair_id = std::move(pair_id);
  std::set<int> known;
  for (const auto& c : catalog) known.insert(c.index);
  auto put = [&](int idx, double conf) {
    if (!known.count(idx)) {
      res.warnings.push_back("unknown class index " + std::to_string(idx));
      return;
    }
    res.assigned[idx] = std::clamp(conf, 0.0, 1.0);
  };

  std::string work = prompts::detail::strip_markdown_emphasis(completion);
  std::string lower = text::to_lower(work);
  // Longest names first so that a name containing another is resolved whole.
  std::vector<const ErrorClass*> by_len;
  for (const auto& c : catalog) by_len.push_back(&c);
  std::sort(by_len.begin(), by_len.end(), [](auto* a, auto* b) { return a->name.size() > b->name.size(); });
  for (const auto* c : by_len) {
    if (c->name.empty()) continue;
    std::string needle = text::to_lower(c->name);
    auto word = [&](unsigned char c) { return std::isalnum(c) != 0; };
    for (std::size_t p = 0; (p = lower.find(needle, p)) != std::string::npos;) {
      std::size_t after = p + needle.size();
      if ((p > 0 && word(lower[p - 1])) || (after < lower.size() && word(lower[after]))) {
        p = after;
        continue;
      }
      double conf = 1.0;
      std::smatch m;
      std::string tail = work.substr(after);
      if (std::regex_search(tail, m, conf_after)) {
        conf = std::stod(m[1].str());
        after += static_cast<std::size_t>(m.length(0));
      }
      // Drop a class number written right before the name ("1. Year Discrepancy").
      std::size_t b = p;
      while (b > 0 && (work[b - 1] == ' ' || work[b - 1] == '.' || work[b - 1] == ':' || work[b - 1] == ')')) --b;
      std::size_t digits = b;
      while (digits > 0 && std::isdigit(static_cast<unsigned char>(work[digits - 1]))) --digits;
      if (digits < b) p = digits;
      std::fill(work.begin() + static_cast<std::ptrdiff_t>(p), work.begin() + static_cast<std::ptrdiff_t>(after), ' ');
      std::fill(lower.begin() + static_cast<std::ptrdiff_t>(p), lower.begin() + static_cast<std::ptrdiff_t>(after), ' ');
      put(c->index, conf);
    }
  }

  std::size_t start = 0;
  while (start <= work.size()) {
    auto end = work.find('\n', start);
    if (end == std::string::npos) end = work.size();
    std::string line = work.substr(start, end - start);
    start = end + 1;
    auto t = text::to_lower(records::detail::trim(line));
    bool class_line = t.rfind("class", 0) == 0 || t.rfind("error class", 0) == 0;
    for (auto it = std::sregex_iterator(line.begin(), line.end(), numbered); it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      // Skip digits that are part of a decimal such as "0.9".
      auto pos = static_cast<std::size_t>(m.position(0));
      if (pos > 0 && (line[pos - 1] == '.' || std::isdigit(static_cast<unsigned char>(line[pos - 1])))) continue;
      bool has_conf = m[2].matched || m[3].matched;
      if (!has_conf && !class_line) continue;
      int idx = std::stoi(m[1].str());
      double conf = m[2].matched ? std::stod(m[2].str()) : m[3].matched ? std::stod(m[3].str()) : 1.0;
      put(idx, conf);
    }
  }
  if (res.assigned.empty() && res.warnings.empty() && lower.find("none") == std::string::npos)
    res.warnings.push_back("no class references found; treated as no class applying");
  return res;
}

/// Membership threshold on confidences when scoring against annotations.
inline constexpr double kMembershipThreshold = 0.5;

struct ClassAccuracy {
  int index = 0;
  double accuracy = 0;  // percent
};

struct AccuracyReport {
  std::vector<ClassAccuracy> per_class;
  double mean = 0;  // percent
  std::size_t errors = 0;
};

using Annotations = std::unordered_map<std::string, std::set<int>>;

/// Per class: share of errors where model and annotators agree on
/// membership, in percent.
inline AccuracyReport classification_accuracy(const std::vector<ClassAssignment>& assignments,
                                              const Annotations& annotations, const std::vector<ErrorClass>& catalog) {
  std::vector<std::string> gaps;
  for (const auto& a : assignments)
    if (!annotations.count(a.pair_id)) gaps.push_back(a.pair_id);
  if (!gaps.empty()) {
    std::string ids;
    for (const auto& g : gaps) ids += (ids.empty() ? "" : ", ") + g;
    throw ConfigError("annotations missing for: " + ids);
  }
  AccuracyReport rep;
  rep.errors = assignments.size();
  if (assignments.empty() || catalog.empty()) return rep;
  double sum = 0;
  for (const auto& c : catalog) {
    std::size_t agree = 0;
    for (const auto& a : assignments) {
      auto it = a.assigned.find(c.index);
      bool model = it != a.assigned.end() && it->second >= kMembershipThreshold;
      bool human = annotations.at(a.pair_id).count(c.index) != 0;
      if (model == human) ++agree;
    }
    double acc = 100.0 * static_cast<double>(agree) / static_cast<double>(assignments.size());
    rep.per_class.push_back({c.index, acc});
    sum += acc;
  }
  rep.mean = sum / static_cast<double>(catalog.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Synthesis driver with prompt-size chunking

/// Splits errors into consecutive chunks whose synthesis prompts stay within
/// `token_budget` (whitespace tokens). A single oversized error forms its
/// own chunk. Budget 0 disables chunking.
inline std::vector<std::vector<ErrorCase>> plan_synthesis_chunks(const std::vector<ErrorCase>& errors, Polarity polarity,
                                                                 std::size_t token_budget) {
  if (token_budget == 0 || errors.empty()) return {errors};
  auto cost = [&](const std::vector<ErrorCase>& chunk) {
    return llm::whitespace_token_count(render_synthesis_prompt(chunk, polarity).last_user_content());
  };
  if (cost(errors) <= token_budget) return {errors};
  std::vector<std::vector<ErrorCase>> chunks;
  std::vector<ErrorCase> cur;
  for (const auto& e : errors) {
    cur.push_back(e);
    if (cur.size() > 1 && cost(cur) > token_budget) {
      cur.pop_back();
      chunks.push_back(std::move(cur));
      cur = {e};
    }
  }
  if (!cur.empty()) chunks.push_back(std::move(cur));
  return chunks;
}

inline std::vector<ErrorClass> synthesize_error_classes(llm::Client& client, const std::string& model_id,
                                                        const std::vector<ErrorCase>& errors, Polarity polarity,
                                                        std::size_t token_budget = 0, double temperature = 0.0) {
  auto chunks = plan_synthesis_chunks(errors, polarity, token_budget);
  std::vector<std::vector<ErrorClass>> lists;
  for (const auto& chunk : chunks) {
    auto r = client.cached_complete({model_id, render_synthesis_prompt(chunk, polarity), temperature, std::nullopt});
    lists.push_back(parse_error_classes(r.text, polarity));
  }
  if (lists.size() == 1) return lists.front();
  auto r = client.cached_complete({model_id, render_merge_prompt(lists, polarity), temperature, std::nullopt});
  return parse_error_classes(r.text, polarity);
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json to_json(const ErrorClass& c) {
  return {{"polarity", std::string(to_string(c.polarity))},
          {"index", c.index},
          {"name", c.name},
          {"description", c.description}};
}

inline ErrorClass error_class_from_json(const nlohmann::json& j) {
  return {j.at("index").get<int>(), j.at("name").get<std::string>(), j.at("description").get<std::string>(),
          polarity_from_string(j.at("polarity").get<std::string>())};
}

inline nlohmann::json to_json(const ClassAssignment& a) {
  auto arr = nlohmann::json::array();
  for (const auto& [idx, conf] : a.assigned) arr.push_back({{"index", idx}, {"confidence", conf}});
  return {{"pair_id", a.pair_id}, {"assigned", arr}, {"warnings", a.warnings}};
}

inline ClassAssignment assignment_from_json(const nlohmann::json& j) {
  ClassAssignment a;
  a.pair_id = j.at("pair_id").get<std::string>();
  for (const auto& e : j.at("assigned")) a.assigned[e.at("index").get<int>()] = e.at("confidence").get<double>();
  a.warnings = j.value("warnings", std::vector<std::string>{});
  return a;
}

struct PolarAnnotations {
  Annotations fp;
  Annotations fn;
};

/// Delimited file with header `pair_id,polarity,classes`; classes are
/// semicolon-separated indices and may be empty.
inline PolarAnnotations load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read annotation file " + path.string());
  csv::Reader reader(in);
  csv::Row header, row;
  if (!reader.next(header)) throw IngestionError(path.string() + ": empty annotation file");
  auto col = [&](const char* name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestionError(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  auto id = col("pair_id"), pol = col("polarity"), cls = col("classes");
  PolarAnnotations out;
  while (reader.next(row)) {
    if (row.size() == 1 && records::detail::trim(row[0]).empty()) continue;
    if (row.size() != header.size())
      throw IngestionError(path.string() + " line " + std::to_string(reader.line()) + ": wrong field count");
    std::set<int> classes;
    std::string field = row[cls];
    std::size_t s = 0;
    while (s <= field.size()) {
      auto e = field.find(';', s);
      if (e == std::string::npos) e = field.size();
      auto tok = records::detail::trim(std::string_view(field).substr(s, e - s));
      if (!tok.empty()) {
        try {
          classes.insert(std::stoi(std::string(tok)));
        } catch (const std::exception&) {
          throw IngestionError(path.string() + " line " + std::to_string(reader.line()) + ", column 'classes': bad index '" +
                               std::string(tok) + "'");
        }
      }
      s = e + 1;
    }
    auto& target = polarity_from_string(row[pol]) == Polarity::FalsePositive ? out.fp : out.fn;
    target[std::string(records::detail::trim(row[id]))] = std::move(classes);
  }
  return out;
}

/// Error class | FP | FN | ... with a Mean row, accuracies in percent.
inline void emit_accuracy_report(const std::vector<std::pair<std::string, AccuracyReport>>& columns,
                                 eval::ReportFormat fmt, std::ostream& out) {
  eval::detail::TableWriter w(out, fmt);
  std::vector<std::string> head{"Error class"};
  std::size_t rows = 0;
  for (const auto& [name, rep] : columns) {
    head.push_back(name);
    rows = std::max(rows, rep.per_class.size());
  }
  w.header(head);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<std::string> cells{std::to_string(i + 1)};
    for (const auto& [_, rep] : columns)
      cells.push_back(i < rep.per_class.size() ? eval::fixed2(rep.per_class[i].accuracy) : "");
    w.row(cells);
  }
  std::vector<std::string> mean{"Mean"};
  for (const auto& [_, rep] : columns) mean.push_back(rep.per_class.empty() ? "" : eval::fixed2(rep.mean));
  w.row(mean);
}

}  // namespace emh::errorlab
