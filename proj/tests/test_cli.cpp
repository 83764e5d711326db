#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "retlab/cli.hpp"

using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "retlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = retlab::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::string temp_file(const std::string& name, const std::string& content) {
  const std::string path = testing::TempDir() + name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(Cli, SweepoutExactExample) {
  auto r = run({"sweepout", "--measure", "uniform:2", "--pattern", "11", "--K", "3", "--exact"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"k", "s_tilde", "hitting_tail", "return_tail", "c_k"}));
  const std::vector<std::string> s{"1", "3/4", "5/8", "1/2"};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(rows[k + 1][1], s[k]);
  EXPECT_EQ(rows[2][4], "1/4");
}

TEST(Cli, ExactOutputsHaveOnlyRationalTokens) {
  const std::regex token(R"(^-?[0-9]+(/[0-9]+)?$)");
  for (auto args : std::vector<std::vector<std::string>>{
           {"sweepout", "--pattern", "0110", "--K", "40", "--exact"},
           {"sweepout", "--measure", "markov:9/10,1/10;1/10,9/10", "--pattern", "010", "--K", "20", "--exact"},
           {"tauf", "--observable", "mixed:0110:1/8", "--K", "30", "--exact", "--format", "csv"}}) {
    auto r = run(args);
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = csv_rows(r.out);
    for (std::size_t i = 1; i < rows.size(); ++i)
      for (const auto& c : rows[i]) EXPECT_TRUE(std::regex_match(c, token)) << c;
  }
}

TEST(Cli, EscapeJson) {
  auto r = run({"escape", "--measure", "uniform:2", "--pattern", "11"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  EXPECT_NEAR(j["rho_closed"].get<double>(), std::log(2.0) - std::log((1 + std::sqrt(5.0)) / 2), 1e-12);
  EXPECT_EQ(j["config"]["pattern"], "11");
  for (const char* key : {"root", "root_expansion", "rho_spectral", "rho_fit", "mu_A", "ratio", "ratio_closed_limit",
                          "sup_dev_exp", "sup_dev_mu"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Cli, EscapeFamilyReportsPeriodicDiscrepancy) {
  auto r = run({"escape", "--family", "constant:0", "--lmin", "8", "--lmax", "12", "--format", "csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("stated=1.5"), std::string::npos);
  EXPECT_NE(r.out.find("discrepancy=true"), std::string::npos);
  auto rows = csv_rows(r.out);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"l", "mu", "rho", "ratio", "sup_dev_exp", "sup_dev_mu"}));
  EXPECT_EQ(rows.size(), 6u);
}

TEST(Cli, LaplaceFibonacciExample) {
  auto r = run({"laplace", "--family", "fibonacci", "--lmax", "16", "--t", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 10u);  // header + l = 8..16
  const auto& header = rows[0];
  const auto col = std::find(header.begin(), header.end(), "deviation") - header.begin();
  ASSERT_LT(col, static_cast<long>(header.size()));
  EXPECT_EQ(rows.back()[0], "16");
  EXPECT_LT(std::stod(rows.back()[col]), 0.02);
}

TEST(Cli, ReRunsAreBitIdentical) {
  for (auto args : std::vector<std::vector<std::string>>{
           {"mc", "--pattern", "0110", "--N", "20000", "--seed", "5"},
           {"mc", "--pattern", "0110", "--N", "20000", "--seed", "5", "--kind", "hitting", "--jobs", "2"},
           {"rholim", "--lmin", "8", "--lmax", "12"},
           {"tauf", "--mode", "sample", "--observable", "scaled:01:1/2", "--N", "5000"}}) {
    auto a = run(args), b = run(args);
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
  }
  auto one = run({"mc", "--pattern", "0110", "--N", "20000", "--seed", "5", "--format", "csv"});
  auto two = run({"mc", "--pattern", "0110", "--N", "20000", "--seed", "5", "--format", "csv", "--jobs", "3"});
  // Only the echoed worker count differs.
  EXPECT_EQ(one.out.substr(one.out.find('\n')), two.out.substr(two.out.find('\n')));
}

TEST(Cli, MonteCarloJson) {
  auto r = run({"mc", "--family", "fibonacci", "--l", "10", "--N", "30000"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  EXPECT_EQ(j["rng"], "retlab-ctr-v1");
  EXPECT_EQ(j["seed"], 20240611u);
  EXPECT_EQ(j["N"], 30000u);
  EXPECT_TRUE(j.contains("capped"));
  EXPECT_TRUE(j["kac_ok"].get<bool>());
  EXPECT_TRUE(j["tails_within_band"].get<bool>());
  EXPECT_FALSE(j.contains("samples"));
}

TEST(Cli, RawSamplesBehindFlag) {
  const std::string path = testing::TempDir() + "retlab_samples.csv";
  auto r = run({"mc", "--pattern", "01", "--N", "100", "--samples-out", path});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  auto rows = csv_rows(buf.str());
  EXPECT_EQ(rows.size(), 101u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "tau"}));
}

TEST(Cli, TaufModes) {
  auto series = run({"tauf", "--observable", "scaled:0:1/2", "--K", "5", "--exact", "--format", "csv"});
  ASSERT_EQ(series.code, 0) << series.err;
  auto rows = csv_rows(series.out);
  const std::vector<std::string> expected{"1", "1", "3/4", "1/2", "5/16", "3/16"};
  for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_EQ(rows[k + 1][1], expected[k]);

  auto id = run({"tauf", "--mode", "identity", "--observable", "mixed:0110:1/8", "--K", "10", "--measure",
                 "markov:9/10,1/10;1/10,9/10"});
  ASSERT_EQ(id.code, 0) << id.err;
  auto j = json::parse(id.out);
  EXPECT_EQ(j["worst_residual"], "0");
  EXPECT_TRUE(j["zero"].get<bool>());

  for (std::string kind : {"hitting", "return"}) {
    auto s = run({"tauf", "--mode", "sample", "--observable", "mixed:0110:1/8", "--kind", kind, "--N", "50000"});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_TRUE(json::parse(s.out)["tails_within_band"].get<bool>()) << kind;
  }

  auto file = temp_file("retlab_obs.json", R"({"depth": 2, "values": {"00": "1/2", "01": "1"}})");
  auto from_file = run({"tauf", "--observable", "@" + file, "--K", "3", "--exact"});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(json::parse(from_file.out)["rows"][0]["s_tilde_f"], "1");

  auto study = run({"tauf", "--mode", "study", "--lmin", "8", "--lmax", "9", "--t", "1"});
  ASSERT_EQ(study.code, 0) << study.err;
  auto sj = json::parse(study.out);
  EXPECT_EQ(sj["rows"].size(), 2u);
  EXPECT_EQ(sj["rows"][0]["hypothesis_ratio"], 1.0);
}

TEST(Cli, ClassifyBoundsRholim) {
  auto c = run({"classify", "--pattern", "0000000001", "--epsilon", "0.1"});
  ASSERT_EQ(c.code, 0) << c.err;
  auto cj = json::parse(c.out);
  EXPECT_TRUE(cj["member"].get<bool>());
  EXPECT_NEAR(cj["q_A"].get<double>(), 0.990043, 1e-6);

  auto b = run({"bounds", "--pattern", "0000000001", "--epsilon", "0.099"});
  ASSERT_EQ(b.code, 0) << b.err;
  auto bj = json::parse(b.out);
  EXPECT_TRUE(bj["in_sandwich"].get<bool>());
  EXPECT_NEAR(bj["upper"]["bound"].get<double>(), 0.0010007, 1e-6);

  auto rejected = run({"bounds", "--pattern", "0000000001", "--epsilon", "0.1"});
  EXPECT_EQ(rejected.code, 1);
  EXPECT_EQ(json::parse(rejected.err)["error"]["code"], "not_applicable");

  auto nonmember = run({"bounds", "--pattern", "0000", "--epsilon", "0.05"});
  EXPECT_EQ(nonmember.code, 1);
  EXPECT_EQ(json::parse(nonmember.err)["error"]["code"], "non_member");

  auto table = run({"rholim", "--lmin", "8", "--lmax", "14"});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("sandwich_ok=true"), std::string::npos);
  EXPECT_EQ(csv_rows(table.out).size(), 8u);
}

TEST(Cli, Ledger) {
  auto r = run({"ledger", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  EXPECT_GE(j["entries"].size(), 5u);
  bool periodic = false;
  for (const auto& e : j["entries"]) periodic |= e["id"] == "periodic-limit";
  EXPECT_TRUE(periodic);
}

TEST(Cli, ConfigFileMergesUnderFlags) {
  auto path = temp_file("retlab_cfg.json", R"({"measure": "uniform:2", "pattern": "0110", "K": 6, "exact": true})");
  auto r = run({"sweepout", "--config", path, "--K", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(csv_rows(r.out).size(), 4u);
  EXPECT_EQ(r.out.rfind("# config ", 0), 0u);
  EXPECT_NE(r.out.find("\"K\":2"), std::string::npos);
  EXPECT_NE(r.out.find("\"pattern\":\"0110\""), std::string::npos);

  auto unknown = run({"sweepout", "--config", temp_file("retlab_bad.json", R"({"pattern": "0", "colour": 1})")});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_EQ(json::parse(unknown.err)["error"]["code"], "usage");

  auto badtype = run({"sweepout", "--config", temp_file("retlab_bad2.json", R"({"pattern": "0", "K": "ten"})")});
  EXPECT_EQ(badtype.code, 1);

  auto notjson = run({"sweepout", "--config", temp_file("retlab_bad3.json", "{pattern")});
  EXPECT_EQ(notjson.code, 1);
}

TEST(Cli, ExitCodes) {
  auto none = run({});
  EXPECT_EQ(none.code, 1);
  EXPECT_EQ(json::parse(none.err)["error"]["code"], "usage");
  EXPECT_EQ(run({"sweepout", "--pattern", "0", "--frobnicate"}).code, 1);
  EXPECT_EQ(run({"sweepout"}).code, 1);
  EXPECT_EQ(run({"sweepout", "--pattern", "2"}).code, 1);
  EXPECT_EQ(run({"sweepout", "--pattern", "0", "--format", "xml"}).code, 1);
  EXPECT_EQ(run({"mc", "--pattern", "0", "--kind", "sideways"}).code, 1);

  auto budget = run({"sweepout", "--pattern", "0110", "--K", "5000", "--exact"});
  EXPECT_EQ(budget.code, 2);
  EXPECT_EQ(json::parse(budget.err)["error"]["code"], "budget_exceeded");
  auto tauf_budget = run({"tauf", "--observable", "scaled:0110:1/999999", "--K", "3"});
  EXPECT_EQ(tauf_budget.code, 2);

  auto help = run({"laplace", "--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("--t"), std::string::npos);
}

TEST(Cli, OutputPath) {
  const std::string path = testing::TempDir() + "retlab_out.json";
  std::remove(path.c_str());
  auto r = run({"escape", "--pattern", "0110", "--out", path});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::ifstream in(path);
  auto j = json::parse(in);
  EXPECT_EQ(j["pattern"], "0110");
  EXPECT_EQ(run({"escape", "--pattern", "0110", "--out", "/nonexistent/dir/x.json"}).code, 1);
}
