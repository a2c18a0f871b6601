#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emharness/conversation.hpp"
#include "emharness/errors.hpp"
#include "emharness/records.hpp"

namespace emh::prompts {

using records::CandidatePair;
using records::Label;
using records::LabeledPair;

enum class Scope { Domain, General };
enum class Complexity { Simple, Complex };
enum class OutputFormat { Free, Force };
enum class Ordering { TaskFirst, SerializationFirst };

inline constexpr std::string_view kForceSentence = "Answer with 'Yes' if they do and 'No' if they do not.";
inline constexpr std::string_view kRulesHeader = "The following rules must be considered:";
inline constexpr std::string_view kGeneralNoun = "entity descriptions";

/// Singular form used by the complex wording ("... the same real-world X?").
inline std::string singular_noun(std::string_view plural) {
  static const std::map<std::string, std::string, std::less<>> table = {
      {"product descriptions", "product"},
      {"publications", "publication"},
      {"entity descriptions", "entity"},
      {"product offers", "product"},
      {"restaurant descriptions", "restaurant"},
  };
  auto it = table.find(plural);
  if (it == table.end()) throw ConfigError("no singular form known for domain noun '" + std::string(plural) + "'");
  return it->second;
}

struct PromptDesign {
  std::string name;
  Scope scope = Scope::General;
  Complexity complexity = Complexity::Complex;
  OutputFormat format = OutputFormat::Free;
  Ordering ordering = Ordering::TaskFirst;
  std::string domain_noun = std::string(kGeneralNoun);

  /// The task question for this design and noun.
  std::string question() const {
    std::string noun = scope == Scope::General ? std::string(kGeneralNoun) : domain_noun;
    if (complexity == Complexity::Simple) return "Do the two " + noun + " match?";
    return "Do the two " + noun + " refer to the same real-world " + singular_noun(noun) + "?";
  }
};

/// The ten zero-shot designs in table order: eight task-first combinations
/// of scope, complexity and output format, then the two serialization-first
/// designs, which carry domain wording and no format instruction.
inline std::vector<PromptDesign> catalog_designs(const std::string& domain_noun) {
  std::vector<PromptDesign> out;
  for (auto scope : {Scope::Domain, Scope::General})
    for (auto cx : {Complexity::Complex, Complexity::Simple})
      for (auto fmt : {OutputFormat::Force, OutputFormat::Free}) {
        std::string name = std::string(scope == Scope::Domain ? "domain" : "general") + "-" +
                           (cx == Complexity::Complex ? "complex" : "simple") + "-" +
                           (fmt == OutputFormat::Force ? "force" : "free");
        out.push_back({name, scope, cx, fmt, Ordering::TaskFirst, domain_noun});
      }
  for (auto cx : {Complexity::Complex, Complexity::Simple})
    out.push_back({cx == Complexity::Complex ? "Narayan-complex" : "Narayan-simple", Scope::Domain, cx,
                   OutputFormat::Free, Ordering::SerializationFirst, domain_noun});
  return out;
}

inline PromptDesign find_design(const std::string& name, const std::string& domain_noun) {
  for (auto& d : catalog_designs(domain_noun))
    if (d.name == name) return d;
  throw ConfigError("unknown prompt design '" + name + "'");
}

enum class RuleOrigin { Handwritten, Learned };

struct RuleSet {
  RuleOrigin origin = RuleOrigin::Handwritten;
  std::vector<std::string> rules;
};

/// Plain text, one rule per line; blank lines ignored.
inline RuleSet load_rules_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read rules file " + path.string());
  RuleSet rs{RuleOrigin::Handwritten, {}};
  std::string line;
  while (std::getline(in, line)) {
    auto t = records::detail::trim(line);
    if (!t.empty()) rs.rules.emplace_back(t);
  }
  if (rs.rules.empty()) throw ConfigError("rules file " + path.string() + " contains no rules");
  return rs;
}

inline void write_rules_file(const RuleSet& rs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rs.rules) out << r << '\n';
}

/// How demonstrations are laid out.
enum class DemoStyle {
  Conversational,  ///< one user/assistant turn pair per demonstration
  Inline,          ///< all demonstrations inside the single user message
};

inline std::string_view demo_answer(Label l) { return l == Label::Match ? "Yes." : "No."; }

/// Task text plus framed pair in the order the design prescribes.
inline std::string layout(const PromptDesign& design, const CandidatePair& pair) {
  std::string framed = records::frame_pair(pair);
  if (design.ordering == Ordering::SerializationFirst) return framed + "\n\n" + design.question();
  std::string task = design.question();
  if (design.format == OutputFormat::Force) {
    task += ' ';
    task += kForceSentence;
  }
  return task + "\n\n" + framed;
}

inline std::string render_rules_preamble(const RuleSet& rules) {
  std::string out(kRulesHeader);
  for (std::size_t i = 0; i < rules.rules.size(); ++i)
    out += "\n" + std::to_string(i + 1) + ". " + rules.rules[i];
  return out;
}

inline Conversation render_match_prompt(const PromptDesign& design, const CandidatePair& pair,
                                        std::span<const LabeledPair> demos = {},
                                        const RuleSet* rules = nullptr,
                                        DemoStyle style = DemoStyle::Conversational) {
  if (!demos.empty() && rules)
    throw ConfigError("demonstrations and matching rules cannot be combined in one prompt");
  Conversation conv;
  if (rules) {
    if (rules->rules.empty()) throw ConfigError("rule set is empty");
    conv.add(Role::User, render_rules_preamble(*rules) + "\n\n" + layout(design, pair));
    return conv;
  }
  if (style == DemoStyle::Conversational) {
    for (const auto& d : demos) {
      conv.add(Role::User, layout(design, d.pair));
      conv.add(Role::Assistant, std::string(demo_answer(d.label)));
    }
    conv.add(Role::User, layout(design, pair));
    return conv;
  }
  std::string body;
  for (const auto& d : demos) {
    body += layout(design, d.pair);
    body += "\nAnswer: ";
    body += demo_answer(d.label);
    body += "\n\n";
  }
  body += layout(design, pair);
  conv.add(Role::User, std::move(body));
  return conv;
}

inline constexpr std::string_view kRuleLearningInstruction =
    "Below are labeled examples of pairs of entity descriptions. Derive a set of general matching rules "
    "that decide whether two entity descriptions refer to the same real-world entity. Return the rules "
    "as a numbered list with one rule per line.";

inline Conversation render_rule_learning_prompt(std::span<const LabeledPair> examples) {
  if (examples.empty()) throw ConfigError("rule learning needs at least one example");
  bool pos = false, neg = false;
  for (const auto& e : examples) (e.label == Label::Match ? pos : neg) = true;
  if (!pos || !neg) throw ConfigError("rule learning needs both matching and non-matching examples");
  std::string body(kRuleLearningInstruction);
  for (const auto& e : examples) {
    body += "\n\n";
    body += records::frame_pair(e.pair);
    body += e.label == Label::Match ? "\nLabel: Match" : "\nLabel: Non-Match";
  }
  Conversation conv;
  conv.add(Role::User, std::move(body));
  return conv;
}

namespace detail {

inline std::string strip_markdown_emphasis(std::string s) {
  for (auto tok : {"**", "__"}) {
    std::size_t p;
    while ((p = s.find(tok)) != std::string::npos) s.erase(p, 2);
  }
  return s;
}

/// Length of a list marker ("1.", "2)", "-", "*", "•") at the start of s,
/// including following whitespace; 0 when there is none.
inline std::size_t list_marker_length(std::string_view s) {
  std::size_t i = 0;
  if (!s.empty() && (s[0] == '-' || s[0] == '*' || s[0] == '+')) {
    i = 1;
  } else if (s.rfind("\xE2\x80\xA2", 0) == 0) {
    i = 3;
  } else {
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == 0 || i >= s.size() || (s[i] != '.' && s[i] != ')')) return 0;
    ++i;
  }
  if (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) return 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  return true;
}

}  // namespace detail

/// Extracts rules from a numbered or bulleted completion. Only list items at
/// the outermost indentation count; nested items, unmarked lines and lines
/// introducing examples are dropped.
inline RuleSet parse_rule_list(const std::string& completion) {
  struct Item {
    std::size_t indent;
    std::string text;
  };
  std::vector<Item> items;
  std::size_t start = 0;
  while (start <= completion.size()) {
    auto end = completion.find('\n', start);
    if (end == std::string::npos) end = completion.size();
    std::string line = detail::strip_markdown_emphasis(completion.substr(start, end - start));
    start = end + 1;
    std::size_t indent = line.find_first_not_of(" \t");
    if (indent == std::string::npos) continue;
    std::string_view rest = std::string_view(line).substr(indent);
    auto m = detail::list_marker_length(rest);
    if (m == 0) continue;
    auto text = records::detail::trim(rest.substr(m));
    if (text.empty()) continue;
    if (detail::starts_with_ci(text, "example") || detail::starts_with_ci(text, "e.g.")) continue;
    items.push_back({indent, std::string(text)});
  }
  if (items.empty()) throw ParseError("no rule list found in completion", completion);
  std::size_t outer = items.front().indent;
  for (const auto& it : items) outer = std::min(outer, it.indent);
  RuleSet rs{RuleOrigin::Learned, {}};
  for (auto& it : items)
    if (it.indent == outer) rs.rules.push_back(std::move(it.text));
  return rs;
}

}  // namespace emh::prompts
