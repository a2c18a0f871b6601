#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "emharness/errors.hpp"
#include "emharness/records.hpp"
#include "emharness/textmetrics.hpp"

namespace emh::demos {

using records::CandidatePair;
using records::Label;
using records::LabeledPair;

/// Labeled development pairs split by polarity, with the token bag of each
/// framed pair precomputed for related-demonstration retrieval.
class DemonstrationPool {
 public:
  struct Entry {
    const CandidatePair* pair;
    text::TokenBag bag;
  };

  explicit DemonstrationPool(const records::Dataset& dev) : source_(&dev) {
    for (const auto& p : dev.pairs) {
      Entry e{&p, text::TokenBag::from_text(records::frame_pair(p))};
      (p.gold == Label::Match ? positives_ : negatives_).push_back(std::move(e));
    }
  }

  const records::Dataset& source() const { return *source_; }
  const std::vector<Entry>& positives() const { return positives_; }
  const std::vector<Entry>& negatives() const { return negatives_; }

 private:
  const records::Dataset* source_;
  std::vector<Entry> positives_;
  std::vector<Entry> negatives_;
};

/// Fixed expert-selected demonstrations, used in file order.
struct Handpicked {
  std::vector<CandidatePair> pairs;

  explicit Handpicked(std::vector<CandidatePair> p) : pairs(std::move(p)) {
    bool pos = false, neg = false;
    for (const auto& x : pairs) (x.gold == Label::Match ? pos : neg) = true;
    if (!pos || !neg) throw ConfigError("handpicked demonstrations must contain both polarities");
  }

  static Handpicked from_file(const std::filesystem::path& path, const records::IngestionSchema& schema = {}) {
    return Handpicked(records::ingest_dataset(path, schema, "handpicked", records::Split::Development).pairs);
  }
};

struct RandomSelection {
  std::uint64_t seed = 0;
};

struct Related {};

using SelectionStrategy = std::variant<Handpicked, RandomSelection, Related>;

struct ScoredId {
  std::string id;
  double score;

  friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

/// Token-set Jaccard of every candidate against the query, sorted by
/// descending score, ties by ascending id.
inline std::vector<ScoredId> rank_by_jaccard(const std::string& query_text,
                                             const std::vector<std::pair<std::string, std::string>>& candidates) {
  auto q = text::TokenBag::from_text(query_text);
  std::vector<ScoredId> out;
  out.reserve(candidates.size());
  for (const auto& [id, txt] : candidates) out.push_back({id, text::jaccard(q, text::TokenBag::from_text(txt))});
  std::stable_sort(out.begin(), out.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::vector<LabeledPair> interleave(std::vector<const CandidatePair*> pos, std::vector<const CandidatePair*> neg) {
  std::vector<LabeledPair> out;
  for (std::size_t i = 0; i < std::max(pos.size(), neg.size()); ++i) {
    if (i < pos.size()) out.push_back({*pos[i], Label::Match});
    if (i < neg.size()) out.push_back({*neg[i], Label::NonMatch});
  }
  return out;
}

inline std::vector<const DemonstrationPool::Entry*> eligible(const std::vector<DemonstrationPool::Entry>& side,
                                                            const CandidatePair* query) {
  std::vector<const DemonstrationPool::Entry*> out;
  for (const auto& e : side)
    if (!query || e.pair->pair_id != query->pair_id) out.push_back(&e);
  return out;
}

inline std::vector<const CandidatePair*> top_related(const std::vector<const DemonstrationPool::Entry*>& side,
                                                     const text::TokenBag& q, std::size_t k) {
  std::vector<std::pair<double, const CandidatePair*>> scored;
  scored.reserve(side.size());
  for (auto* e : side) scored.emplace_back(text::jaccard(q, e->bag), e->pair);
  auto cmp = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->pair_id < b.second->pair_id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), cmp);
  std::vector<const CandidatePair*> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace detail

/// Picks `shots` demonstrations, half of each polarity, interleaved
/// positive/negative. The query pair is never returned (compared by id).
inline std::vector<LabeledPair> select_demonstrations(const DemonstrationPool& pool, const SelectionStrategy& strategy,
                                                      std::size_t shots, const CandidatePair* query = nullptr) {
  if (shots < 2 || shots % 2 != 0)
    throw ConfigError("shots must be even and at least 2, got " + std::to_string(shots));
  const std::size_t half = shots / 2;

  if (const auto* hp = std::get_if<Handpicked>(&strategy)) {
    std::vector<const CandidatePair*> pos, neg;
    for (const auto& p : hp->pairs) {
      if (query && p.pair_id == query->pair_id) continue;
      auto& side = p.gold == Label::Match ? pos : neg;
      if (side.size() < half) side.push_back(&p);
    }
    if (pos.size() < half || neg.size() < half)
      throw ConfigError("handpicked file holds " + std::to_string(pos.size()) + " positives and " +
                        std::to_string(neg.size()) + " negatives, need " + std::to_string(half) + " of each");
    return detail::interleave(std::move(pos), std::move(neg));
  }

  auto pos = detail::eligible(pool.positives(), query);
  auto neg = detail::eligible(pool.negatives(), query);
  if (pos.size() < half || neg.size() < half)
    throw ConfigError("demonstration pool holds " + std::to_string(pos.size()) + " positives and " +
                      std::to_string(neg.size()) + " negatives, need " + std::to_string(half) + " of each");

  if (const auto* rnd = std::get_if<RandomSelection>(&strategy)) {
    std::uint64_t seed = rnd->seed;
    if (query) seed ^= detail::fnv1a(query->pair_id);
    std::vector<const CandidatePair*> p, n;
    for (auto i : records::sample_indices(pos.size(), half, seed)) p.push_back(pos[i]->pair);
    for (auto i : records::sample_indices(neg.size(), half, seed + 1)) n.push_back(neg[i]->pair);
    return detail::interleave(std::move(p), std::move(n));
  }

  if (!query) throw ConfigError("related demonstration selection needs a query pair");
  auto q = text::TokenBag::from_text(records::frame_pair(*query));
  return detail::interleave(detail::top_related(pos, q, half), detail::top_related(neg, q, half));
}

}  // namespace emh::demos
