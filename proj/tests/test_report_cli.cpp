#include <gtest/gtest.h>

#include "qualpipe/config.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/report.hpp"
#include "support.hpp"

namespace qualpipe {
namespace {

using namespace testsupport;

double leading_percent(const std::string& cell) { return std::stod(cell.substr(0, cell.find(' '))); }

TEST(Distribution, StoredCountsFixture) {
  std::map<char, std::uint64_t> counts = {
      {'A', 24721}, {'B', 12728}, {'C', 6144}, {'D', 4280}, {'E', 58728 - 47873}};
  auto d = report::compute_theme_distribution(counts, ThemeTaxonomy::builtin());
  EXPECT_EQ(d.grand_total, 58728u);
  ASSERT_EQ(d.rows.size(), 5u);
  EXPECT_EQ(d.rows[4].count, 10855u);
  const double expected[] = {42, 22, 10.5, 7, 18.5};
  auto md = report::render_distribution(d).markdown;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(d.rows[i].percent, expected[i], 0.6) << d.rows[i].code;
    auto cell = report::percent_count(d.rows[i].percent, d.rows[i].count);
    EXPECT_NE(md.find(cell), std::string::npos) << cell;
    EXPECT_NEAR(leading_percent(cell), expected[i], 0.6);
  }
  EXPECT_NE(md.find("| A. Need for Enhancing Transparency and Explainability | 42.1 (24,721) |"),
            std::string::npos);
  EXPECT_NE(md.find("| Total | 58,728 |"), std::string::npos);
}

TEST(Distribution, UnknownCodesFoldIntoCatchAll) {
  std::map<char, std::uint64_t> counts = {{'A', 3}, {'Q', 1}};
  auto d = report::compute_theme_distribution(counts, ThemeTaxonomy::builtin());
  EXPECT_EQ(d.rows[4].count, 1u);
  EXPECT_EQ(d.rows[1].count, 0u);
  EXPECT_DOUBLE_EQ(d.rows[0].percent, 75.0);
}

SubThemeSet five_subthemes(char theme) {
  SubThemeSet s;
  s.theme = theme;
  for (int r = 1; r <= 5; ++r) s.entries.push_back({r, "Harm " + std::to_string(r), "d"});
  return s;
}

struct TopRow {
  std::uint64_t top;
  std::uint64_t total;
  double printed;
  std::string rendered;
};

class SubThemePercent : public ::testing::TestWithParam<TopRow> {};

TEST_P(SubThemePercent, TopRowMatchesPrintedValue) {
  const auto& p = GetParam();
  auto set = five_subthemes('A');
  std::vector<SubThemeAssignment> a;
  for (std::uint64_t i = 0; i < p.total; ++i) {
    // The top row first, then a thin spread over the other letters.
    char letter = i < p.top ? 'A' : static_cast<char>('B' + (i % 5));
    a.push_back({"c" + std::to_string(i), 'A', letter});
  }
  auto table = report::compute_prevalence_table(a, set, "A");
  EXPECT_EQ(table.total, p.total);
  ASSERT_EQ(table.rows[0].count, p.top);
  EXPECT_NEAR(table.rows[0].percent, p.printed, 0.6);
  auto md = report::render_theme_table(table, {}).markdown;
  EXPECT_NE(md.find("| Harm 1 |  | " + p.rendered + " |"), std::string::npos) << md;
  std::uint64_t sum = table.other_count;
  for (const auto& r : table.rows) sum += r.count;
  EXPECT_EQ(sum, p.total);
}

INSTANTIATE_TEST_SUITE_P(Tables, SubThemePercent,
                         ::testing::Values(TopRow{7202, 24721, 29, "29.1 (7,202)"},
                                           TopRow{2953, 12728, 23, "23.2 (2,953)"},
                                           TopRow{1208, 6144, 20, "19.7 (1,208)"},
                                           TopRow{1025, 4280, 24, "23.9 (1,025)"}),
                         [](const auto& info) { return "top" + std::to_string(info.param.top); });

TEST(PrevalenceTable, OrderingCatchAllAndQuotes) {
  auto set = five_subthemes('B');
  std::vector<SubThemeAssignment> a = {{"1", 'B', 'C'}, {"2", 'B', 'C'}, {"3", 'B', 'A'},
                                       {"4", 'B', 'F'}, {"5", 'A', 'A'}, {"6", 'B', 'Z'}};
  auto table = report::compute_prevalence_table(a, set, "B");
  EXPECT_EQ(table.total, 5u);
  EXPECT_EQ(table.rows[0].title, "Harm 3");
  EXPECT_EQ(table.rows[1].title, "Harm 1");
  EXPECT_EQ(table.rows[2].title, "Harm 2");
  EXPECT_EQ(table.other_count, 2u);
  EXPECT_EQ(table.catch_all, 'F');

  report::QuoteMap quotes = {{{'B', 3}, "the app, it | hides"}, {{'B', 9}, "stray"}};
  auto r = report::render_theme_table(table, quotes);
  EXPECT_NE(r.markdown.find("| Harm 3 | the app, it \\| hides | 40 (2) |"), std::string::npos)
      << r.markdown;
  EXPECT_NE(r.markdown.find("| Other |  | 40 (2) |"), std::string::npos);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("rank 9"), std::string::npos);
  EXPECT_NE(r.csv.find("3,C,Harm 3,\"the app, it | hides\",40,2\n"), std::string::npos) << r.csv;
}

TEST(Cost, LedgerFixtureRendersToTheCent) {
  llm::TokenLedger ledger{135'120'000, 10'370'000, 0.01, 0.03};
  auto table = report::render_cost_table(llm::cost_report(ledger));
  EXPECT_NE(table.find("| Total input tokens | 135,120,000 | $1,351.20 |"), std::string::npos);
  EXPECT_NE(table.find("| Total output tokens | 10,370,000 | $311.10 |"), std::string::npos);
  EXPECT_NE(table.find("| Total expenditure |  | $1,662.30 |"), std::string::npos);
  EXPECT_NE(table.find("$0.01 per 1K tokens"), std::string::npos);
}

TEST(Config, ParsesAndResolvesRelativePaths) {
  auto c = RunConfig::parse(
      "# comment\nrun_dir = out\nsubmissions=data/s.ndjson\nbackend = mock\n"
      "mock_script = /abs/script.ndjson\nconcurrency = 3\ntemperature = 0.5\n",
      "/base");
  EXPECT_EQ(c.run_dir, fs::path("/base/out"));
  EXPECT_EQ(*c.submissions, fs::path("/base/data/s.ndjson"));
  EXPECT_EQ(*c.mock_script, fs::path("/abs/script.ndjson"));
  EXPECT_EQ(c.concurrency, 3u);
  EXPECT_DOUBLE_EQ(c.study.temperature, 0.5);
}

TEST(Config, RejectsBadInput) {
  auto message = [](const std::string& text) {
    try {
      RunConfig::parse(text, "/base");
    } catch (const InputError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("run_dir=x\ncolour=blue\n").find("line 2: unknown key colour"),
            std::string::npos);
  EXPECT_NE(message("backend=mock\n").find("missing run_dir"), std::string::npos);
  EXPECT_NE(message("run_dir=x\nconcurrency=many\n").find("not a valid number"), std::string::npos);
  EXPECT_NE(message("run_dir=x\nbackend=remote\n").find("live or mock"), std::string::npos);
  EXPECT_NE(message("run_dir=x\nsubtheme_count=30\n").find("subtheme_count"), std::string::npos);
  EXPECT_NE(message("run_dir=x\njust text\n").find("expected key=value"), std::string::npos);
  EXPECT_EQ(message("run_dir=x\n"), "no error");
}

TEST(Config, BackendRequirements) {
  auto c = RunConfig::parse("run_dir=x\nbackend=mock\n", "/base");
  EXPECT_THROW(c.make_backend(), InputError);
  auto live = RunConfig::parse("run_dir=x\n", "/base");
  EXPECT_THROW(live.make_backend(), InputError);
}

TEST(Cli, ExitCodes) {
  TempDir tmp("cli");
  auto missing = testsupport::cli({"ingest", "--submissions", "/nonexistent/s.ndjson", "--comments",
                      "/nonexistent/c.ndjson", "--run-dir", (tmp.path() / "run").string()});
  EXPECT_EQ(missing.code, cli::kInputError);
  EXPECT_NE(missing.err.find("input not found: /nonexistent/s.ndjson"), std::string::npos)
      << missing.err;

  EXPECT_EQ(testsupport::cli({"frobnicate"}).code, cli::kInputError);
  EXPECT_EQ(testsupport::cli({"generate", "--config", (tmp.path() / "none.txt").string()}).code,
            cli::kInputError);

  auto fx = copy_fixture(tmp.path());
  auto cls = testsupport::cli({"classify", "--config", (fx / "config.txt").string(), "--run-dir",
                  (tmp.path() / "run2").string()});
  EXPECT_EQ(cls.code, cli::kStateError);
}

TEST(Cli, CostCommand) {
  auto r = testsupport::cli({"cost", "--input-tokens", "135120000", "--output-tokens", "10370000"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("$1,351.20"), std::string::npos);
  EXPECT_NE(r.out.find("$311.10"), std::string::npos);
  EXPECT_NE(r.out.find("$1,662.30"), std::string::npos);
  auto rates = testsupport::cli({"cost", "--input-tokens", "1000", "--output-tokens", "1000", "--input-rate",
                    "0.5", "--output-rate", "1.5"});
  EXPECT_NE(rates.out.find("| Total expenditure |  | $2.00 |"), std::string::npos) << rates.out;
}

}  // namespace
}  // namespace qualpipe
