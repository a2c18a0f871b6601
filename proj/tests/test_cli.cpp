#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "emharness/cli.hpp"
#include "fixtures.hpp"

using namespace emh;
namespace fs = std::filesystem;

namespace {

constexpr const char* kCanonicalExplanation =
    "attribute: title, importance: 0.8, similarity: 0.9\nattribute: brand, importance: 0.2, similarity: 1.0";
constexpr const char* kFiveClasses =
    "1. Model number mismatch: The model numbers differ.\n"
    "2. Brand confusion: Brands are read as different.\n"
    "3. Missing values: One side lacks attributes.\n"
    "4. Variant confusion: Product variants are treated as equal.\n"
    "5. Accessory: One entity is an accessory.";

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::main_with_args(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    bench_ = tmp_ / "bench";
    runs_ = (tmp_ / "runs").string();
    auto test = fx::synthetic(50, 20, 11);
    auto dev = fx::synthetic(30, 15, 12, records::Split::Development, "d");
    for (auto [name, ds] : {std::pair{"test.csv", &test}, std::pair{"dev.csv", &dev}}) {
      std::ostringstream ss;
      records::write_dataset_csv(*ds, ss);
      fx::write(bench_ / name, ss.str());
    }
    fx::write(bench_ / "schema.json", R"({"domain_noun": "product descriptions"})");
  }

  std::string script(const std::string& name, std::vector<std::string> extra = {}) {
    auto path = (tmp_ / name).string();
    std::vector<std::string> args = {"make-oracle-script", "--dataset-dir", bench_.string(), "--out", path};
    args.insert(args.end(), extra.begin(), extra.end());
    EXPECT_EQ(invoke(args).code, 0);
    return path;
  }

  Result run(const std::string& run_id, const std::string& script_path, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"--runs-dir", runs_, "run", "--dataset-dir", bench_.string(), "--script",
                                     script_path, "--run-id", run_id};
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args);
  }

  fs::path run_path(const std::string& id) const { return fs::path(runs_) / id; }

  fx::TempDir tmp_;
  fs::path bench_;
  std::string runs_;
};

}  // namespace

TEST_F(CliTest, IngestPrintsCountsAndIsRepeatable) {
  auto a = invoke({"--runs-dir", runs_, "ingest", "--dataset", "syn", "--dir", bench_.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("test: 50 pairs (20/30)"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("dev: 30 pairs (15/15)"), std::string::npos) << a.out;
  EXPECT_TRUE(fs::exists(fs::path(runs_) / "datasets/syn/test.csv"));
  auto b = invoke({"--runs-dir", runs_, "ingest", "--dataset", "syn", "--dir", bench_.string()});
  EXPECT_EQ(a.out, b.out);
}

TEST_F(CliTest, IngestMissingDirectory) {
  auto r = invoke({"--runs-dir", runs_, "ingest", "--dataset", "x", "--dir", (tmp_ / "nope").string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("not found"), std::string::npos);
}

TEST_F(CliTest, IngestBadRowNamesLine) {
  fx::write(tmp_ / "bad/test.csv", "pair_id,label,left_t,right_t\na,1,x,y\nb,maybe,x,y\n");
  auto r = invoke({"ingest", "--dataset", "x", "--dir", (tmp_ / "bad").string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST_F(CliTest, OracleRunOverAllDesigns) {
  auto r = run("oracle", script("oracle.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto dir = run_path("oracle");
  for (auto f : {"config.json", "test.csv", "decisions.jsonl", "failures.jsonl", "conversations.jsonl", "usage.jsonl",
                 "reports/report.md", "reports/results.jsonl", "reports/timing.md"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(count_lines(fx::slurp(dir / "decisions.jsonl")), 500u);
  EXPECT_TRUE(fx::slurp(dir / "failures.jsonl").empty());
  auto report = fx::slurp(dir / "reports/report.md");
  for (const auto& d : prompts::catalog_designs("product descriptions"))
    EXPECT_NE(report.find(d.name), std::string::npos) << d.name;
  std::istringstream in(fx::slurp(dir / "reports/results.jsonl"));
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    auto res = eval::design_result_from_json(nlohmann::json::parse(line));
    EXPECT_DOUBLE_EQ(res.metrics.f1, 1.0);
  }
  EXPECT_EQ(rows, 10u);
  EXPECT_NE(report.find("0.00"), std::string::npos);
}

TEST_F(CliTest, SingleDesignGivesSingleRow) {
  auto r = run("one", script("oracle.json"), {"--designs", "domain-complex-free"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(fx::slurp(run_path("one") / "reports/results.jsonl"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(nlohmann::json::parse(lines[0]).at("design"), "domain-complex-free");
}

TEST_F(CliTest, StrategyAndRulesAreExclusive) {
  fx::write(tmp_ / "rules.txt", "Brands must agree.\n");
  auto r = run("both", script("oracle.json"),
               {"--strategy", "related", "--rules", "handwritten", "--rules-file", (tmp_ / "rules.txt").string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_FALSE(fs::exists(run_path("both")));
  EXPECT_FALSE(fs::exists(fs::path(runs_) / "cache.jsonl"));
}

TEST_F(CliTest, InvalidShotsAndUnknownDesign) {
  EXPECT_EQ(run("s", script("oracle.json"), {"--strategy", "random", "--shots", "3"}).code, cli::kConfig);
  EXPECT_EQ(run("d", script("oracle.json"), {"--designs", "nope"}).code, cli::kConfig);
}

TEST_F(CliTest, ExistingRunIdIsRejected) {
  auto s = script("oracle.json");
  ASSERT_EQ(run("dup", s, {"--designs", "general-simple-force"}).code, 0);
  EXPECT_EQ(run("dup", s, {"--designs", "general-simple-force"}).code, cli::kConfig);
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
  auto s = script("oracle.json");
  ASSERT_EQ(run("a", s, {"--no-cache", "--parallelism", "4"}).code, 0);
  ASSERT_EQ(run("b", s, {"--no-cache"}).code, 0);
  for (auto f : {"decisions.jsonl", "conversations.jsonl", "usage.jsonl", "reports/report.md"})
    EXPECT_EQ(fx::slurp(run_path("a") / f), fx::slurp(run_path("b") / f)) << f;
}

TEST_F(CliTest, FewShotAndHandwrittenRules) {
  auto s = script("oracle.json");
  ASSERT_EQ(run("fs", s, {"--designs", "general-complex-force", "--strategy", "related", "--shots", "4"}).code, 0);
  std::istringstream in(fx::slurp(run_path("fs") / "conversations.jsonl"));
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(nlohmann::json::parse(line).at("messages").size(), 9u);
  fx::write(tmp_ / "rules.txt", "Brands must agree.\n");
  ASSERT_EQ(run("rules", s,
                {"--designs", "general-complex-force", "--rules", "handwritten", "--rules-file",
                 (tmp_ / "rules.txt").string()})
                .code,
            0);
  EXPECT_NE(fx::slurp(run_path("rules") / "conversations.jsonl").find("Brands must agree."), std::string::npos);
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  auto s = script("oracle.json");
  fx::write(tmp_ / "run.toml", "dataset-dir = \"" + bench_.string() + "\"\nscript = \"" + s +
                                   "\"\ndesigns = \"general-simple-free\"\nrun-id = \"fromfile\"\n");
  auto r = invoke({"--runs-dir", runs_, "run", "--config", (tmp_ / "run.toml").string(), "--designs",
                "domain-simple-force"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto cfg = nlohmann::json::parse(fx::slurp(run_path("fromfile") / "config.json"));
  EXPECT_EQ(cfg.at("designs"), nlohmann::json::array({"domain-simple-force"}));
}

TEST_F(CliTest, AuthFailureAbortsWithBackendCode) {
  fx::write(tmp_ / "auth.json", R"({"entries": [{"pattern": "Entity 1", "fail": "auth"}]})");
  auto r = run("auth", (tmp_ / "auth.json").string(), {"--designs", "general-simple-force"});
  EXPECT_EQ(r.code, cli::kBackend);
}

TEST_F(CliTest, PerPairFailuresStillSucceed) {
  fx::write(tmp_ / "partial.json", R"({"entries": [{"pattern": "Lp0'", "fail": "permanent"}], "fallback": "No."})");
  auto r = run("partial", (tmp_ / "partial.json").string(), {"--designs", "general-simple-force"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(fx::slurp(run_path("partial") / "failures.jsonl")), 1u);
  EXPECT_EQ(count_lines(fx::slurp(run_path("partial") / "decisions.jsonl")), 49u);
}

TEST_F(CliTest, ExplainCanonicalAndProse) {
  auto good = script("good.json", {"--explanation", kCanonicalExplanation});
  ASSERT_EQ(run("ex", good, {"--designs", "general-complex-force"}).code, 0);
  auto r = invoke({"--runs-dir", runs_, "explain", "--run-id", "ex"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(fx::slurp(run_path("ex") / "explanations.jsonl")), 50u);
  EXPECT_TRUE(fx::slurp(run_path("ex") / "explanation_failures.jsonl").empty());
  auto agg = fx::slurp(run_path("ex") / "reports/explanations.md");
  auto corr = fx::slurp(run_path("ex") / "reports/correlation.md");
  EXPECT_NE(agg.find("title"), std::string::npos);
  EXPECT_NE(corr.find("cosine"), std::string::npos) << corr;

  auto again = invoke({"--runs-dir", runs_, "explain", "--run-id", "ex"});
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(agg, fx::slurp(run_path("ex") / "reports/explanations.md"));
  EXPECT_EQ(corr, fx::slurp(run_path("ex") / "reports/correlation.md"));

  auto prose = script("prose.json", {"--explanation", "I compared the products and they looked alike."});
  ASSERT_EQ(run("px", prose, {"--designs", "general-complex-force", "--no-cache"}).code, 0);
  auto p = invoke({"--runs-dir", runs_, "explain", "--run-id", "px", "--no-cache"});
  EXPECT_EQ(p.code, cli::kDegraded);
  EXPECT_EQ(count_lines(fx::slurp(run_path("px") / "explanation_failures.jsonl")), 50u);
}

TEST_F(CliTest, ExplainMissingRun) {
  EXPECT_EQ(invoke({"--runs-dir", runs_, "explain", "--run-id", "ghost"}).code, cli::kConfig);
}

TEST_F(CliTest, AnalyzeZeroErrorRunSkipsCatalog) {
  auto s = script("good.json", {"--explanation", kCanonicalExplanation});
  ASSERT_EQ(run("clean", s, {"--designs", "general-complex-force"}).code, 0);
  ASSERT_EQ(invoke({"--runs-dir", runs_, "explain", "--run-id", "clean"}).code, 0);
  auto r = invoke({"--runs-dir", runs_, "analyze-errors", "--run-id", "clean"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("no erroneous decisions"), std::string::npos);
  EXPECT_FALSE(fs::exists(run_path("clean") / "error_classes.jsonl"));
}

TEST_F(CliTest, AnalyzeInvertedRunWithAgreeingAnnotations) {
  auto s = script("inv.json", {"--invert", "--explanation", kCanonicalExplanation, "--classes", kFiveClasses,
                               "--classification", "Classes: 1 (0.9)"});
  ASSERT_EQ(run("inv", s, {"--designs", "general-complex-force"}).code, 0);
  ASSERT_EQ(invoke({"--runs-dir", runs_, "explain", "--run-id", "inv"}).code, 0);
  std::string ann = "pair_id,polarity,classes\n";
  for (int i = 0; i < 50; ++i) ann += "p" + std::to_string(i) + "," + (i < 20 ? "FN" : "FP") + ",1\n";
  fx::write(tmp_ / "ann.csv", ann);
  auto r = invoke({"--runs-dir", runs_, "analyze-errors", "--run-id", "inv", "--annotations", (tmp_ / "ann.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(fx::slurp(run_path("inv") / "error_classes.jsonl")), 10u);
  EXPECT_EQ(count_lines(fx::slurp(run_path("inv") / "assignments.jsonl")), 50u);
  auto acc = fx::slurp(run_path("inv") / "reports/error_accuracy.md");
  EXPECT_NE(acc.find("| Mean | 100.00 | 100.00 |"), std::string::npos) << acc;
  EXPECT_EQ(acc.find("| 0."), std::string::npos);
}

TEST_F(CliTest, CostScenariosAndBaselines) {
  fx::write(tmp_ / "prices.json",
            R"([{"model_id": "Turbo03", "prompt_price_per_1m": 1.5, "completion_price_per_1m": 2.0},
                {"model_id": "GPT4", "prompt_price_per_1m": 30, "completion_price_per_1m": 60}])");
  auto prices = (tmp_ / "prices.json").string();
  auto r = invoke({"cost", "--prices", prices, "--scenario", "zs,Turbo03,71,49", "--baseline", "zs", "--out",
                (tmp_ / "cost.md").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("zs: 0.02\xC2\xA2 per prompt"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("1.00x"), std::string::npos);
  EXPECT_EQ(invoke({"cost", "--prices", prices, "--scenario", "zs,Turbo03,71,49", "--baseline", "nope"}).code,
            cli::kConfig);
  EXPECT_EQ(invoke({"cost", "--prices", prices, "--scenario", "zs,Unknown,71,49"}).code, cli::kConfig);

  fx::write(tmp_ / "empty/test.csv", "pair_id,label,left_t,right_t\n");
  auto s = script("oracle.json");
  ASSERT_EQ(invoke({"--runs-dir", runs_, "run", "--dataset-dir", (tmp_ / "empty").string(), "--script", s, "--run-id",
                 "empty", "--model", "Turbo03", "--designs", "general-simple-force"})
                .code,
            0);
  auto e = invoke({"--runs-dir", runs_, "cost", "--prices", prices, "--run-id", "empty"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("| empty | Turbo03 | 0.00 | 0.00 | 0.00 | 0.00\xC2\xA2 |"), std::string::npos) << e.out;
  EXPECT_TRUE(fs::exists(run_path("empty") / "reports/cost.md"));
}

TEST_F(CliTest, BinaryExitCodes) {
  std::string cmd = std::string(EMH_CLI_PATH) + " ingest --dataset x --dir " + (tmp_ / "nope").string() + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::kConfig);
  cmd = std::string(EMH_CLI_PATH) + " --runs-dir " + runs_ + " ingest --dataset x --dir " + bench_.string() + " >/dev/null";
  status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
