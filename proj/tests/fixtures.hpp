#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "emharness/records.hpp"

namespace fx {

using emh::records::Attribute;
using emh::records::CandidatePair;
using emh::records::Dataset;
using emh::records::EntityRecord;
using emh::records::Label;
using emh::records::Split;

inline EntityRecord rec(std::string id, std::vector<std::pair<std::string, std::optional<std::string>>> kv) {
  std::vector<Attribute> attrs;
  for (auto& [k, v] : kv) attrs.push_back({k, v});
  return EntityRecord(std::move(id), std::move(attrs));
}

inline CandidatePair pair(std::string id, EntityRecord l, EntityRecord r, Label gold) {
  return {std::move(id), std::move(l), std::move(r), gold};
}

/// The pair every golden rendering uses.
inline CandidatePair golden_pair() {
  return pair("g1", rec("L1", {{"title", "DYMO D1 Tape 12mm x 7m"}, {"brand", "DYMO"}, {"price", "12.99"}}),
              rec("R1", {{"title", "Dymo 45013 D1 Label Tape 12 mm"}, {"brand", "Dymo"}, {"price", std::nullopt}}),
              Label::Match);
}

inline CandidatePair demo_positive() {
  return pair("d+", rec("a", {{"title", "Apple iPhone 12 64GB"}, {"color", "black"}}),
              rec("b", {{"title", "iPhone 12 64 GB Apple"}, {"color", "black"}}), Label::Match);
}

inline CandidatePair demo_negative() {
  return pair("d-", rec("a", {{"title", "Apple iPhone 12 64GB"}, {"color", "black"}}),
              rec("c", {{"title", "Apple iPhone 11 128GB"}, {"color", "black"}}), Label::NonMatch);
}

/// Synthetic product pairs: positives describe one product twice with
/// noise, negatives two different products. Every pair carries a unique sku
/// so framed pairs never contain one another.
inline Dataset synthetic(std::size_t n, std::size_t positives, std::uint64_t seed, Split split = Split::Test,
                         std::string prefix = "p") {
  static const std::vector<std::string> brands = {"Sony", "Dell", "Asus", "Canon", "Bosch", "Logitech", "Samsung", "HP"};
  static const std::vector<std::string> kinds = {"laptop", "camera", "mouse", "drill", "monitor", "keyboard", "printer"};
  static const std::vector<std::string> extra = {"black", "silver", "pro", "kit", "new", "2023", "bundle", "white"};
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  Dataset ds;
  ds.name = "synthetic";
  ds.split = split;
  ds.domain_noun = "product descriptions";
  for (std::size_t i = 0; i < n; ++i) {
    bool pos = i < positives;
    std::string brand = pick(brands), kind = pick(kinds);
    std::string model = std::to_string(100 + rng() % 900);
    std::string left_title = brand + " " + kind + " " + model + " " + pick(extra);
    std::string right_title;
    std::string right_brand = brand;
    if (pos) {
      right_title = kind + " " + brand + " " + model + " " + pick(extra);
    } else {
      right_brand = rng() % 2 ? brand : pick(brands);
      right_title = right_brand + " " + kind + " " + std::to_string(100 + (std::stoi(model) + 1 + rng() % 50) % 900) + " " + pick(extra);
    }
    std::string id = prefix + std::to_string(i);
    ds.pairs.push_back(pair(id,
                            rec(id + "_l", {{"title", left_title}, {"brand", brand}, {"sku", "L" + id}}),
                            rec(id + "_r", {{"title", right_title}, {"brand", right_brand}, {"sku", "R" + id}}),
                            pos ? Label::Match : Label::NonMatch));
  }
  return ds;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("emh_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fx
