#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "emharness/csv.hpp"
#include "emharness/errors.hpp"

namespace emh::records {

enum class Label { Match, NonMatch };

inline std::string_view to_string(Label l) { return l == Label::Match ? "Match" : "NonMatch"; }

inline Label label_from_string(std::string_view s) {
  if (s == "Match") return Label::Match;
  if (s == "NonMatch") return Label::NonMatch;
  throw ConfigError("unknown label '" + std::string(s) + "'");
}

enum class Split { Development, Test };

inline std::string_view to_string(Split s) { return s == Split::Development ? "dev" : "test"; }

struct Attribute {
  std::string name;
  std::optional<std::string> value;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

/// One entity description. Attribute order is significant: it is the order
/// in which values are serialized.
class EntityRecord {
 public:
  EntityRecord() = default;
  EntityRecord(std::string id, std::vector<Attribute> attributes)
      : id_(std::move(id)), attributes_(std::move(attributes)) {
    std::unordered_set<std::string_view> seen;
    for (const auto& a : attributes_)
      if (!seen.insert(a.name).second)
        throw IngestionError("duplicate attribute '" + a.name + "' in record " + id_);
  }

  const std::string& id() const { return id_; }
  const std::vector<Attribute>& attributes() const { return attributes_; }

  /// Value of the named attribute; nullopt when absent or empty.
  std::optional<std::string_view> value(std::string_view name) const {
    for (const auto& a : attributes_)
      if (a.name == name) {
        if (a.value && !a.value->empty()) return std::string_view(*a.value);
        return std::nullopt;
      }
    return std::nullopt;
  }

  friend bool operator==(const EntityRecord&, const EntityRecord&) = default;

 private:
  std::string id_;
  std::vector<Attribute> attributes_;
};

struct CandidatePair {
  std::string pair_id;
  EntityRecord left;
  EntityRecord right;
  Label gold = Label::NonMatch;
};

struct LabeledPair {
  CandidatePair pair;
  Label label = Label::NonMatch;
};

struct Dataset {
  std::string name;
  Split split = Split::Test;
  std::string domain_noun = "entity descriptions";
  std::vector<CandidatePair> pairs;

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(),
                                                  [](const auto& p) { return p.gold == Label::Match; }));
  }
  std::size_t negatives() const { return pairs.size() - positives(); }

  const CandidatePair* find(std::string_view pair_id) const {
    for (const auto& p : pairs)
      if (p.pair_id == pair_id) return &p;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Serialization

/// Attribute values joined by single spaces in attribute order. Absent and
/// empty values are skipped and attribute names are never emitted.
inline std::string serialize_entity(const EntityRecord& record) {
  std::string out;
  for (const auto& a : record.attributes()) {
    if (!a.value) continue;
    std::string_view v = *a.value;
    auto b = v.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) continue;
    auto e = v.find_last_not_of(" \t\r\n");
    if (!out.empty()) out += ' ';
    out.append(v.substr(b, e - b + 1));
  }
  return out;
}

inline std::string frame_pair(const CandidatePair& pair) {
  return "Entity 1: '" + serialize_entity(pair.left) + "'\nEntity 2: '" + serialize_entity(pair.right) + "'";
}

// ---------------------------------------------------------------------------
// Ingestion

/// Declarative column mapping for pair-wise benchmark files.
///
/// Columns starting with `left_prefix` / `right_prefix` become attributes of
/// the left / right record, named by the column with the prefix removed.
/// When `left_columns` / `right_columns` are given, only those columns (full
/// header names, in that order) are used.
struct IngestionSchema {
  std::string pair_id_column = "pair_id";
  std::string label_column = "label";
  std::string left_prefix = "left_";
  std::string right_prefix = "right_";
  std::string left_id_column = "left_id";
  std::string right_id_column = "right_id";
  std::vector<std::string> left_columns;
  std::vector<std::string> right_columns;
  std::string domain_noun = "entity descriptions";

  static IngestionSchema from_json(const nlohmann::json& j) {
    IngestionSchema s;
    auto get = [&](const char* key, std::string& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::string>();
    };
    get("pair_id_column", s.pair_id_column);
    get("label_column", s.label_column);
    get("left_prefix", s.left_prefix);
    get("right_prefix", s.right_prefix);
    get("left_id_column", s.left_id_column);
    get("right_id_column", s.right_id_column);
    get("domain_noun", s.domain_noun);
    if (j.contains("left_columns")) s.left_columns = j.at("left_columns").get<std::vector<std::string>>();
    if (j.contains("right_columns")) s.right_columns = j.at("right_columns").get<std::vector<std::string>>();
    return s;
  }

  static IngestionSchema from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open schema file " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("invalid schema file " + path.string() + ": " + e.what());
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct ColumnPlan {
  std::size_t index;
  std::string attribute;
};

inline std::vector<ColumnPlan> plan_side(const csv::Row& header, const std::string& prefix,
                                         const std::string& id_column,
                                         const std::vector<std::string>& explicit_columns,
                                         const std::string& path) {
  std::vector<ColumnPlan> plan;
  auto strip = [&](const std::string& col) {
    return col.rfind(prefix, 0) == 0 ? col.substr(prefix.size()) : col;
  };
  if (!explicit_columns.empty()) {
    // Shared "<side>_" prefix of explicit columns, e.g. "a_" in a_name, a_city.
    std::string common = explicit_columns.front();
    for (const auto& col : explicit_columns) {
      std::size_t n = 0;
      while (n < common.size() && n < col.size() && common[n] == col[n]) ++n;
      common.resize(n);
    }
    auto us = common.rfind('_');
    common = us == std::string::npos ? "" : common.substr(0, us + 1);
    for (const auto& col : explicit_columns) {
      auto it = std::find(header.begin(), header.end(), col);
      if (it == header.end())
        throw IngestionError(path + ": schema column '" + col + "' not found in header");
      std::string attr = col.rfind(prefix, 0) == 0 ? strip(col) : col.substr(common.size());
      if (attr.empty()) attr = col;
      plan.push_back({static_cast<std::size_t>(it - header.begin()), attr});
    }
    return plan;
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& col = header[i];
    if (col == id_column || prefix.empty() || col.rfind(prefix, 0) != 0) continue;
    plan.push_back({i, strip(col)});
  }
  return plan;
}

inline std::optional<std::size_t> column_index(const csv::Row& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace detail

inline Dataset ingest_dataset(std::istream& in, const IngestionSchema& schema, std::string name,
                              Split split, const std::string& source = "<stream>") {
  csv::Reader reader(in);
  csv::Row header;
  Dataset ds;
  ds.name = std::move(name);
  ds.split = split;
  ds.domain_noun = schema.domain_noun;
  if (!reader.next(header)) throw IngestionError(source + ": empty file (no header row)");
  for (auto& h : header) h = std::string(detail::trim(h));
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  auto label_idx = detail::column_index(header, schema.label_column);
  if (!label_idx) throw IngestionError(source + ": missing label column '" + schema.label_column + "'");
  auto id_idx = detail::column_index(header, schema.pair_id_column);
  auto lid_idx = detail::column_index(header, schema.left_id_column);
  auto rid_idx = detail::column_index(header, schema.right_id_column);
  auto left_plan = detail::plan_side(header, schema.left_prefix, schema.left_id_column, schema.left_columns, source);
  auto right_plan =
      detail::plan_side(header, schema.right_prefix, schema.right_id_column, schema.right_columns, source);

  std::unordered_set<std::string> seen_ids;
  csv::Row row;
  std::size_t row_no = 0;
  while (reader.next(row)) {
    if (row.size() == 1 && detail::trim(row[0]).empty()) continue;
    ++row_no;
    std::string where = source + " line " + std::to_string(reader.line());
    if (row.size() != header.size())
      throw IngestionError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(row.size()));
    auto lab = detail::trim(row[*label_idx]);
    Label gold;
    if (lab == "1")
      gold = Label::Match;
    else if (lab == "0")
      gold = Label::NonMatch;
    else
      throw IngestionError(where + ", column '" + schema.label_column + "': label must be 0 or 1, got '" +
                           std::string(lab) + "'");

    std::string pair_id = id_idx ? std::string(detail::trim(row[*id_idx])) : std::to_string(row_no - 1);
    if (pair_id.empty())
      throw IngestionError(where + ", column '" + schema.pair_id_column + "': empty pair id");
    if (!seen_ids.insert(pair_id).second)
      throw IngestionError(where + ", column '" + schema.pair_id_column + "': duplicate pair id '" + pair_id + "'");

    auto build = [&](const std::vector<detail::ColumnPlan>& plan, std::optional<std::size_t> rid,
                     const char* suffix) {
      std::vector<Attribute> attrs;
      attrs.reserve(plan.size());
      for (const auto& c : plan) {
        std::string v = row[c.index];
        attrs.push_back({c.attribute, v.empty() ? std::nullopt : std::optional<std::string>(std::move(v))});
      }
      std::string rec_id = rid ? std::string(detail::trim(row[*rid])) : pair_id + suffix;
      try {
        return EntityRecord(std::move(rec_id), std::move(attrs));
      } catch (const IngestionError& e) {
        throw IngestionError(where + ": " + e.what());
      }
    };
    ds.pairs.push_back({pair_id, build(left_plan, lid_idx, "_l"), build(right_plan, rid_idx, "_r"), gold});
  }
  return ds;
}

inline Dataset ingest_dataset(const std::filesystem::path& path, const IngestionSchema& schema,
                              std::string name = {}, Split split = Split::Test) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path.string());
  if (name.empty()) name = path.stem().string();
  return ingest_dataset(in, schema, std::move(name), split, path.string());
}

struct Benchmark {
  Dataset dev;
  Dataset test;
};

/// Loads `<dir>/dev.csv` and `<dir>/test.csv`. A `schema.json` inside the
/// directory is used when no schema is given.
inline Benchmark ingest_benchmark_dir(const std::filesystem::path& dir, const std::string& name,
                                      std::optional<IngestionSchema> schema = std::nullopt) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IngestionError("benchmark directory not found: " + dir.string());
  if (!schema) {
    auto sp = dir / "schema.json";
    schema = fs::exists(sp) ? IngestionSchema::from_file(sp) : IngestionSchema{};
  }
  Benchmark b;
  auto dev = dir / "dev.csv";
  auto test = dir / "test.csv";
  if (!fs::exists(test)) throw IngestionError("missing " + test.string());
  b.test = ingest_dataset(test, *schema, name, Split::Test);
  if (fs::exists(dev)) b.dev = ingest_dataset(dev, *schema, name, Split::Development);
  else {
    b.dev.name = name;
    b.dev.split = Split::Development;
    b.dev.domain_noun = schema->domain_noun;
  }
  return b;
}

/// Writes a dataset back in the pair-wise delimited format understood by
/// ingest_dataset with the default schema.
inline void write_dataset_csv(const Dataset& ds, std::ostream& out) {
  std::vector<std::string> lcols, rcols;
  auto collect = [](std::vector<std::string>& cols, const EntityRecord& r) {
    for (const auto& a : r.attributes())
      if (std::find(cols.begin(), cols.end(), a.name) == cols.end()) cols.push_back(a.name);
  };
  for (const auto& p : ds.pairs) {
    collect(lcols, p.left);
    collect(rcols, p.right);
  }
  csv::Row header{"pair_id", "label", "left_id"};
  for (const auto& c : lcols) header.push_back("left_" + c);
  header.push_back("right_id");
  for (const auto& c : rcols) header.push_back("right_" + c);
  out << csv::join(header) << '\n';
  for (const auto& p : ds.pairs) {
    csv::Row row{p.pair_id, p.gold == Label::Match ? "1" : "0", p.left.id()};
    for (const auto& c : lcols) row.emplace_back(p.left.value(c).value_or(""));
    row.push_back(p.right.id());
    for (const auto& c : rcols) row.emplace_back(p.right.value(c).value_or(""));
    out << csv::join(row) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Down-sampling

/// Unbiased integer in [0, bound) from a 64-bit Mersenne Twister. Spelled out
/// because std::uniform_int_distribution differs between standard libraries.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % bound;
}

/// Seeded selection of k of n indices, returned in ascending order.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + bounded(rng, n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct DownsampleConfig {
  std::size_t max_positives = 250;
  std::size_t max_negatives = 1000;
  std::uint64_t seed = 42;
};

/// Keeps at most max_positives matches and max_negatives non-matches,
/// preserving the original pair order.
inline Dataset downsample(const Dataset& ds, const DownsampleConfig& cfg) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i)
    (ds.pairs[i].gold == Label::Match ? pos : neg).push_back(i);
  std::vector<std::size_t> keep;
  for (auto i : sample_indices(pos.size(), cfg.max_positives, cfg.seed)) keep.push_back(pos[i]);
  for (auto i : sample_indices(neg.size(), cfg.max_negatives, cfg.seed ^ 0x9E3779B97F4A7C15ULL))
    keep.push_back(neg[i]);
  std::sort(keep.begin(), keep.end());
  Dataset out{ds.name, ds.split, ds.domain_noun, {}};
  out.pairs.reserve(keep.size());
  for (auto i : keep) out.pairs.push_back(ds.pairs[i]);
  return out;
}

}  // namespace emh::records
