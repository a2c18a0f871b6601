#include <gtest/gtest.h>

#include <sstream>

#include "emharness/finetune.hpp"
#include "emharness/records.hpp"
#include "fixtures.hpp"

using namespace emh;
using namespace emh::records;

namespace {

Dataset ingest_text(const std::string& csv, const IngestionSchema& schema = {}) {
  std::istringstream in(csv);
  return ingest_dataset(in, schema, "t", Split::Test);
}

std::string wdc_like_csv(std::size_t pos, std::size_t neg) {
  std::string s = "pair_id,label,left_title,left_brand,right_title,right_brand\n";
  for (std::size_t i = 0; i < pos + neg; ++i)
    s += "w" + std::to_string(i) + "," + (i < pos ? "1" : "0") + ",Title " + std::to_string(i) + ",B,Other " +
         std::to_string(i) + ",B\n";
  return s;
}

}  // namespace

TEST(Serialize, ConcatenatesValuesInOrder) {
  EXPECT_EQ(serialize_entity(fx::rec("x", {{"title", "DYMO D1"}, {"size", "12mm x 7m"}})), "DYMO D1 12mm x 7m");
}

TEST(Serialize, SkipsAbsentValues) {
  EXPECT_EQ(serialize_entity(fx::rec("x", {{"title", "A"}, {"brand", std::nullopt}, {"price", "5"}})), "A 5");
  EXPECT_EQ(serialize_entity(fx::rec("x", {{"title", "A"}, {"brand", "   "}, {"price", " 5 "}})), "A 5");
}

TEST(Serialize, EmptyRecord) { EXPECT_EQ(serialize_entity(EntityRecord("x", {})), ""); }

TEST(Frame, Template) {
  auto p = fx::pair("1", fx::rec("l", {{"t", "abc"}}), fx::rec("r", {{"t", "xyz"}}), Label::Match);
  EXPECT_EQ(frame_pair(p), "Entity 1: 'abc'\nEntity 2: 'xyz'");
}

TEST(Frame, IdenticalSidesAndApostrophes) {
  auto p = fx::pair("1", fx::rec("l", {{"t", "Joe's Diner"}}), fx::rec("r", {{"t", "Joe's Diner"}}), Label::Match);
  EXPECT_EQ(frame_pair(p), "Entity 1: 'Joe's Diner'\nEntity 2: 'Joe's Diner'");
}

TEST(EntityRecord, DuplicateAttributeRejected) {
  EXPECT_THROW(fx::rec("x", {{"a", "1"}, {"a", "2"}}), IngestionError);
}

TEST(Ingest, CountsWdcShapedFile) {
  auto ds = ingest_text(wdc_like_csv(259, 980));
  EXPECT_EQ(ds.pairs.size(), 1239u);
  EXPECT_EQ(ds.positives(), 259u);
  EXPECT_EQ(ds.negatives(), 980u);
}

TEST(Ingest, HeaderOnly) { EXPECT_TRUE(ingest_text("pair_id,label,left_t,right_t\n").pairs.empty()); }

TEST(Ingest, ThreeRows) {
  auto ds = ingest_text("pair_id,label,left_t,right_t\na,1,x,y\nb,0,x,z\nc,0,q,r\n");
  EXPECT_EQ(ds.positives(), 1u);
  EXPECT_EQ(ds.negatives(), 2u);
  EXPECT_EQ(ds.pairs[0].left.attributes()[0].name, "t");
  EXPECT_EQ(ds.pairs[0].left.id(), "a_l");
}

TEST(Ingest, QuotedFieldsAndEmptyValues) {
  auto ds = ingest_text("pair_id,label,left_title,left_price,right_title,right_price\n"
                        "a,1,\"Tape, 12mm \"\"black\"\"\",,\"x\ny\",3\n");
  ASSERT_EQ(ds.pairs.size(), 1u);
  EXPECT_EQ(serialize_entity(ds.pairs[0].left), "Tape, 12mm \"black\"");
  EXPECT_FALSE(ds.pairs[0].left.attributes()[1].value.has_value());
  EXPECT_EQ(serialize_entity(ds.pairs[0].right), "x\ny 3");
}

TEST(Ingest, PreservesColumnOrder) {
  auto ds = ingest_text("right_b,left_b,label,left_a,right_a,pair_id\n1,2,1,3,4,z\n");
  EXPECT_EQ(serialize_entity(ds.pairs[0].left), "2 3");
  EXPECT_EQ(serialize_entity(ds.pairs[0].right), "1 4");
}

TEST(Ingest, MissingLabelColumn) {
  try {
    ingest_text("pair_id,left_t,right_t\na,x,y\n");
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("label"), std::string::npos);
  }
}

TEST(Ingest, BadLabelNamesLineAndColumn) {
  try {
    ingest_text("pair_id,label,left_t,right_t\na,1,x,y\nb,yes,x,y\n");
    FAIL();
  } catch (const IngestionError& e) {
    std::string w = e.what();
    EXPECT_NE(w.find("line 3"), std::string::npos) << w;
    EXPECT_NE(w.find("'label'"), std::string::npos) << w;
  }
}

TEST(Ingest, DuplicatePairId) {
  EXPECT_THROW(ingest_text("pair_id,label,left_t,right_t\na,1,x,y\na,0,x,y\n"), IngestionError);
}

TEST(Ingest, FieldCountMismatch) {
  EXPECT_THROW(ingest_text("pair_id,label,left_t,right_t\na,1,x\n"), IngestionError);
}

TEST(Ingest, RowIndexIdsWithoutIdColumn) {
  auto ds = ingest_text("label,left_t,right_t\n1,x,y\n0,x,z\n");
  EXPECT_EQ(ds.pairs[0].pair_id, "0");
  EXPECT_EQ(ds.pairs[1].pair_id, "1");
}

TEST(Ingest, ExplicitSchema) {
  IngestionSchema s;
  s.pair_id_column = "id";
  s.label_column = "is_match";
  s.left_columns = {"a_name", "a_city"};
  s.right_columns = {"b_name", "b_city"};
  s.domain_noun = "restaurant descriptions";
  auto ds = ingest_text("id,is_match,a_name,a_city,b_name,b_city\n7,1,Spago,LA,Spago Grill,Los Angeles\n", s);
  EXPECT_EQ(ds.domain_noun, "restaurant descriptions");
  EXPECT_EQ(serialize_entity(ds.pairs[0].right), "Spago Grill Los Angeles");
  EXPECT_EQ(ds.pairs[0].left.attributes()[0].name, "name");
}

TEST(Ingest, RoundTripThroughWriter) {
  auto ds = fx::synthetic(20, 5, 3);
  std::ostringstream out;
  write_dataset_csv(ds, out);
  auto back = ingest_text(out.str());
  ASSERT_EQ(back.pairs.size(), ds.pairs.size());
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    EXPECT_EQ(back.pairs[i].pair_id, ds.pairs[i].pair_id);
    EXPECT_EQ(back.pairs[i].gold, ds.pairs[i].gold);
    EXPECT_EQ(frame_pair(back.pairs[i]), frame_pair(ds.pairs[i]));
  }
}

TEST(Ingest, BenchmarkDirectory) {
  fx::TempDir dir;
  fx::write(dir / "bench/test.csv", wdc_like_csv(3, 2));
  fx::write(dir / "bench/dev.csv", wdc_like_csv(2, 2));
  fx::write(dir / "bench/schema.json", R"({"domain_noun": "product descriptions"})");
  auto b = ingest_benchmark_dir(dir / "bench", "wdc");
  EXPECT_EQ(b.test.pairs.size(), 5u);
  EXPECT_EQ(b.dev.split, Split::Development);
  EXPECT_EQ(b.test.domain_noun, "product descriptions");
  EXPECT_THROW(ingest_benchmark_dir(dir / "missing", "x"), IngestionError);
}

TEST(Downsample, CapsAndIsDeterministic) {
  auto ds = fx::synthetic(300, 80, 9);
  DownsampleConfig cfg{20, 50, 42};
  auto a = downsample(ds, cfg), b = downsample(ds, cfg);
  EXPECT_EQ(a.positives(), 20u);
  EXPECT_EQ(a.negatives(), 50u);
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) EXPECT_EQ(a.pairs[i].pair_id, b.pairs[i].pair_id);
  auto c = downsample(ds, {20, 50, 43});
  bool differs = false;
  for (std::size_t i = 0; i < a.pairs.size(); ++i) differs |= a.pairs[i].pair_id != c.pairs[i].pair_id;
  EXPECT_TRUE(differs);
}

TEST(Downsample, SmallSplitsUntouched) {
  auto ds = fx::synthetic(30, 10, 1);
  auto d = downsample(ds, {});
  EXPECT_EQ(d.pairs.size(), 30u);
}

TEST(SampleIndices, KnownSequenceIsStable) {
  auto a = sample_indices(100, 5, 7);
  EXPECT_EQ(a, sample_indices(100, 5, 7));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 5u);
}

TEST(Finetune, ExportsOneRecordPerPair) {
  auto ds = fx::synthetic(5, 2, 4);
  auto design = prompts::find_design("general-complex-force", ds.domain_noun);
  std::ostringstream out;
  EXPECT_EQ(export_finetune_dataset(ds, design, out), 5u);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    const auto& last = j.at("messages").back();
    EXPECT_EQ(last.at("role"), "assistant");
    EXPECT_EQ(last.at("content"), ds.pairs[n].gold == Label::Match ? "Yes" : "No");
    ++n;
  }
  EXPECT_EQ(n, 5u);
}

TEST(Finetune, EmptyDatasetAndFreeDesign) {
  Dataset empty;
  std::ostringstream out;
  EXPECT_EQ(export_finetune_dataset(empty, prompts::find_design("domain-simple-force", empty.domain_noun), out), 0u);
  EXPECT_TRUE(out.str().empty());
  EXPECT_THROW(export_finetune_dataset(empty, prompts::find_design("domain-simple-free", empty.domain_noun), out),
               ConfigError);
}
