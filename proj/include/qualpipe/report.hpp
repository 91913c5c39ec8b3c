#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qualpipe/gateway.hpp"
#include "qualpipe/pipeline.hpp"
#include "qualpipe/stages.hpp"
#include "qualpipe/taxonomy.hpp"

namespace qualpipe::report {

struct PrevalenceRow {
  int rank = 0;
  char code = 'A';
  std::string title;
  std::uint64_t count = 0;
  double percent = 0;  // full precision; rounding happens only when rendering
};

struct PrevalenceTable {
  char theme = 'A';
  std::string name;
  std::uint64_t total = 0;
  std::vector<PrevalenceRow> rows;  // count descending, ties by title
  char catch_all = 'F';
  std::uint64_t other_count = 0;  // total minus the row counts
  double other_percent = 0;
};

// Counts assignments of `subthemes.theme` per sub-theme letter. Codes outside
// the ranked list fall into the implicit catch-all row.
PrevalenceTable compute_prevalence_table(std::span<const SubThemeAssignment> assignments,
                                         const SubThemeSet& subthemes, std::string name = {});

struct DistributionRow {
  char code = 'A';
  std::string name;
  std::uint64_t count = 0;
  double percent = 0;
};

struct ThemeDistribution {
  std::vector<DistributionRow> rows;  // taxonomy order, zero counts included
  std::uint64_t grand_total = 0;
};

ThemeDistribution compute_theme_distribution(std::span<const ThemeAssignment> assignments,
                                             const ThemeTaxonomy& taxonomy);
ThemeDistribution compute_theme_distribution(const std::map<char, std::uint64_t>& counts,
                                             const ThemeTaxonomy& taxonomy);

// Representative quotes keyed by (theme letter, sub-theme rank).
using QuoteMap = std::map<std::pair<char, int>, std::string>;

// CSV with header theme,rank,quote.
QuoteMap read_quotes(const std::filesystem::path& path);

struct RenderedTable {
  std::string markdown;
  std::string csv;
  std::vector<std::string> warnings;
};

// "29.1 (7,202)"
std::string percent_count(double percent, std::uint64_t count);

RenderedTable render_theme_table(const PrevalenceTable& table, const QuoteMap& quotes);
RenderedTable render_distribution(const ThemeDistribution& distribution);
std::string render_cost_table(const llm::CostReport& cost);

struct ReportOptions {
  std::optional<std::filesystem::path> quotes_file;
  double input_rate = llm::kDefaultInputRate;
  double output_rate = llm::kDefaultOutputRate;
};

struct ReportResult {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
  ThemeDistribution distribution;
  std::vector<PrevalenceTable> tables;
};

// Writes report.md, distribution.csv, theme_<L>.csv and cost.md into the run
// directory. Needs theme assignments; sub-theme tables are added when the
// prevalence outputs exist. Throws StateError when the classification output
// is missing.
ReportResult write_report(const RunPaths& paths, const ThemeTaxonomy& taxonomy,
                          const ReportOptions& options);

}  // namespace qualpipe::report
