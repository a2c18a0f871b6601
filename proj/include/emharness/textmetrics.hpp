#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emharness/errors.hpp"

namespace emh::text {

inline bool is_ascii_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Lowercase, whitespace split, leading/trailing punctuation stripped.
/// Internal punctuation is kept so model numbers like "12mm/0.5''" survive.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_ascii_punct(text[b])) ++b;
    while (e > b && is_ascii_punct(text[e - 1])) --e;
    if (b < e) tokens.push_back(to_lower(text.substr(b, e - b)));
    i = j;
  }
  return tokens;
}

/// Multiset of canonical tokens.
class TokenBag {
 public:
  TokenBag() = default;
  explicit TokenBag(std::vector<std::string> tokens) {
    for (auto& t : tokens) ++counts_[std::move(t)];
  }

  static TokenBag from_text(std::string_view text) { return TokenBag(tokenize(text)); }

  const std::map<std::string, std::size_t>& counts() const { return counts_; }
  std::size_t distinct() const { return counts_.size(); }
  bool empty() const { return counts_.empty(); }
  bool contains(const std::string& t) const { return counts_.count(t) != 0; }

 private:
  std::map<std::string, std::size_t> counts_;
};

/// Set Jaccard. Both empty yields 1.0, one empty yields 0.0.
inline double jaccard(const TokenBag& a, const TokenBag& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto ia = a.counts().begin(), ib = b.counts().begin();
  while (ia != a.counts().end() && ib != b.counts().end()) {
    if (ia->first < ib->first) ++ia;
    else if (ib->first < ia->first) ++ib;
    else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  std::size_t uni = a.distinct() + b.distinct() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Cosine of token frequency vectors; 0.0 if either bag is empty.
inline double cosine(const TokenBag& a, const TokenBag& b) {
  if (a.empty() || b.empty()) return 0.0;
  double dot = 0, na = 0, nb = 0;
  for (const auto& [t, c] : a.counts()) {
    na += static_cast<double>(c * c);
    auto it = b.counts().find(t);
    if (it != b.counts().end()) dot += static_cast<double>(c * it->second);
  }
  for (const auto& [t, c] : b.counts()) nb += static_cast<double>(c * c);
  double r = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(r, 0.0, 1.0);
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0u : 1u)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// 1 - levenshtein / max length. Two empty strings are identical.
inline double edit_similarity(std::string_view a, std::string_view b) {
  std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

using InnerSimilarity = std::function<double(std::string_view, std::string_view)>;

inline double exact_match_similarity(std::string_view a, std::string_view b) { return a == b ? 1.0 : 0.0; }

/// Soft Jaccard over distinct tokens. Token pairs are matched greedily in
/// descending inner similarity (ties by token text), one-to-one, keeping
/// those with similarity >= threshold and > 0. Greedy approximates the
/// optimal assignment.
inline double generalized_jaccard(const TokenBag& a, const TokenBag& b, double inner_threshold,
                                  const InnerSimilarity& inner) {
  if (inner_threshold < 0.0 || inner_threshold > 1.0)
    throw ConfigError("generalized_jaccard threshold must lie in [0,1]");
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  struct Candidate {
    double sim;
    std::size_t i, j;
  };
  std::vector<std::string_view> ta, tb;
  for (const auto& [t, _] : a.counts()) ta.push_back(t);
  for (const auto& [t, _] : b.counts()) tb.push_back(t);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t j = 0; j < tb.size(); ++j) {
      double s = inner(ta[i], tb[j]);
      if (s > 0.0 && s >= inner_threshold) cands.push_back({s, i, j});
    }
  // Tokens are sorted, so index order is lexicographic order.
  std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    if (x.i != y.i) return x.i < y.i;
    return x.j < y.j;
  });
  std::vector<bool> used_a(ta.size()), used_b(tb.size());
  double total = 0.0;
  std::size_t matches = 0;
  for (const auto& c : cands) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = true;
    total += c.sim;
    ++matches;
  }
  double denom = static_cast<double>(ta.size() + tb.size() - matches);
  return std::clamp(total / denom, 0.0, 1.0);
}

inline double generalized_jaccard(const TokenBag& a, const TokenBag& b, double inner_threshold = 0.5) {
  return generalized_jaccard(a, b, inner_threshold, edit_similarity);
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and population standard deviation (divisor N).
inline MeanSd mean_and_population_sd(std::span<const double> xs) {
  if (xs.empty()) throw UndefinedStatisticError("mean of an empty sequence");
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) return {xs.front(), 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double n = static_cast<double>(xs.size());
  double mean = sum / n;
  // Second pass with the compensation term folded in.
  double ss = 0.0, comp = 0.0;
  for (double x : xs) {
    double d = x - mean;
    ss += d * d;
    comp += d;
  }
  double var = (ss - comp * comp / n) / n;
  return {mean, std::sqrt(std::max(var, 0.0))};
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw UndefinedStatisticError("pearson: length mismatch (" + std::to_string(xs.size()) + " vs " +
                                  std::to_string(ys.size()) + ")");
  if (xs.size() < 2) throw UndefinedStatisticError("pearson: need at least two observations");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(xs) || constant(ys)) throw UndefinedStatisticError("pearson: zero variance input");
  auto mx = mean_and_population_sd(xs).mean;
  auto my = mean_and_population_sd(ys).mean;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedStatisticError("pearson: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace emh::text
