#include "qualpipe/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "qualpipe/artifacts.hpp"
#include "qualpipe/checkpoint.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe::report {

namespace {

double percent_of(std::uint64_t count, std::uint64_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

std::string md_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out;
}

// 0.01 -> "0.01", 0.015 -> "0.015"
std::string format_rate(double rate) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", rate);
  std::string s = buf;
  while (s.back() == '0' && s.size() > s.find('.') + 3) s.pop_back();
  return s;
}

}  // namespace

PrevalenceTable compute_prevalence_table(std::span<const SubThemeAssignment> assignments,
                                         const SubThemeSet& subthemes, std::string name) {
  PrevalenceTable table;
  table.theme = subthemes.theme;
  table.name = std::move(name);
  table.catch_all = subthemes.catch_all();
  std::map<char, std::uint64_t> counts;
  for (const auto& a : assignments) {
    if (a.theme != subthemes.theme) continue;
    ++table.total;
    ++counts[a.subtheme];
  }
  std::uint64_t placed = 0;
  for (const auto& e : subthemes.entries) {
    PrevalenceRow row;
    row.rank = e.rank;
    row.code = subthemes.letter_for_rank(e.rank);
    row.title = e.title;
    row.count = counts[row.code];
    row.percent = percent_of(row.count, table.total);
    placed += row.count;
    table.rows.push_back(std::move(row));
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const PrevalenceRow& a, const PrevalenceRow& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.title < b.title;
  });
  table.other_count = table.total - placed;
  table.other_percent = percent_of(table.other_count, table.total);
  return table;
}

ThemeDistribution compute_theme_distribution(const std::map<char, std::uint64_t>& counts,
                                             const ThemeTaxonomy& taxonomy) {
  ThemeDistribution d;
  std::map<char, std::uint64_t> merged;
  for (const auto& [code, n] : counts) {
    merged[taxonomy.contains(code) ? code : taxonomy.catch_all()] += n;
    d.grand_total += n;
  }
  for (const auto& cat : taxonomy.categories()) {
    auto n = merged[cat.code];
    d.rows.push_back({cat.code, cat.name, n, percent_of(n, d.grand_total)});
  }
  return d;
}

ThemeDistribution compute_theme_distribution(std::span<const ThemeAssignment> assignments,
                                             const ThemeTaxonomy& taxonomy) {
  std::map<char, std::uint64_t> counts;
  for (const auto& a : assignments) ++counts[a.theme];
  return compute_theme_distribution(counts, taxonomy);
}

QuoteMap read_quotes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("input not found: " + path.string());
  auto rows = text::parse_csv(read_file(path));
  QuoteMap quotes;
  if (rows.empty()) return quotes;
  std::size_t line = 1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ++line;
    const auto& r = rows[i];
    if (r.size() == 1 && text::trim(r[0]).empty()) continue;
    if (r.size() < 3 || text::trim(r[0]).size() != 1) {
      throw InputError(path.string() + " record " + std::to_string(line) +
                       ": expected theme,rank,quote");
    }
    int rank = 0;
    try {
      rank = std::stoi(text::trim(r[1]));
    } catch (const std::exception&) {
      throw InputError(path.string() + " record " + std::to_string(line) + ": bad rank");
    }
    char theme = static_cast<char>(std::toupper(static_cast<unsigned char>(text::trim(r[0])[0])));
    quotes[{theme, rank}] = r[2];
  }
  return quotes;
}

std::string percent_count(double percent, std::uint64_t count) {
  return text::percent_1dp(percent) + " (" + text::with_thousands(count) + ")";
}

RenderedTable render_theme_table(const PrevalenceTable& table, const QuoteMap& quotes) {
  RenderedTable out;
  out.markdown = "| Harm | Quote | % (Count) |\n|---|---|---|\n";
  out.csv = "rank,code,harm,quote,percent,count\n";

  std::set<int> ranks;
  for (const auto& row : table.rows) ranks.insert(row.rank);
  for (const auto& [key, quote] : quotes) {
    if (key.first == table.theme && !ranks.count(key.second)) {
      out.warnings.push_back("quote for " + std::string(1, key.first) + " rank " +
                             std::to_string(key.second) + " matches no sub-theme; ignored");
    }
  }
  if (table.rows.empty() && table.total == 0) return out;

  for (const auto& row : table.rows) {
    auto it = quotes.find({table.theme, row.rank});
    std::string quote = it == quotes.end() ? "" : it->second;
    out.markdown += "| " + md_cell(row.title) + " | " + md_cell(quote) + " | " +
                    percent_count(row.percent, row.count) + " |\n";
    out.csv += std::to_string(row.rank) + "," + std::string(1, row.code) + "," +
               text::csv_field(row.title) + "," + text::csv_field(quote) + "," +
               text::percent_1dp(row.percent) + "," + std::to_string(row.count) + "\n";
  }
  out.markdown += "| Other |  | " + percent_count(table.other_percent, table.other_count) + " |\n";
  out.csv += "," + std::string(1, table.catch_all) + ",Other,," +
             text::percent_1dp(table.other_percent) + "," + std::to_string(table.other_count) +
             "\n";
  return out;
}

RenderedTable render_distribution(const ThemeDistribution& d) {
  RenderedTable out;
  out.markdown = "| Theme | % (Count) |\n|---|---|\n";
  out.csv = "code,theme,percent,count\n";
  for (const auto& row : d.rows) {
    out.markdown += "| " + std::string(1, row.code) + ". " + md_cell(row.name) + " | " +
                    percent_count(row.percent, row.count) + " |\n";
    out.csv += std::string(1, row.code) + "," + text::csv_field(row.name) + "," +
               text::percent_1dp(row.percent) + "," + std::to_string(row.count) + "\n";
  }
  out.markdown += "| Total | " + text::with_thousands(d.grand_total) + " |\n";
  return out;
}

std::string render_cost_table(const llm::CostReport& cost) {
  const auto& l = cost.ledger;
  std::string out = "| Item | Tokens | Cost |\n|---|---:|---:|\n";
  out += "| Input rate |  | $" + format_rate(l.input_rate) + " per 1K tokens |\n";
  out += "| Output rate |  | $" + format_rate(l.output_rate) + " per 1K tokens |\n";
  out += "| Total input tokens | " + text::with_thousands(l.total_input_tokens) + " | $" +
         text::money(cost.input_cost) + " |\n";
  out += "| Total output tokens | " + text::with_thousands(l.total_output_tokens) + " | $" +
         text::money(cost.output_cost) + " |\n";
  out += "| Total expenditure |  | $" + text::money(cost.total_cost) + " |\n";
  return out;
}

ReportResult write_report(const RunPaths& paths, const ThemeTaxonomy& taxonomy,
                          const ReportOptions& options) {
  if (!std::filesystem::exists(paths.theme_assignments())) {
    throw StateError("report requires a completed classification stage; run `classify` first");
  }
  ReportResult result;
  QuoteMap quotes;
  if (options.quotes_file) quotes = read_quotes(*options.quotes_file);

  auto assignments = read_theme_assignments(paths.theme_assignments());
  result.distribution = compute_theme_distribution(assignments, taxonomy);
  auto dist = render_distribution(result.distribution);

  std::string md = "# Theme report\n\n## Theme distribution\n\n" + dist.markdown;
  write_file_atomic(paths.root / "distribution.csv", dist.csv);
  result.files.push_back(paths.root / "distribution.csv");

  const bool have_prevalence = std::filesystem::exists(paths.subthemes()) &&
                               std::filesystem::exists(paths.subtheme_assignments());
  std::set<char> tabled;
  if (have_prevalence) {
    auto subthemes = read_subthemes(paths.subthemes());
    auto sub_assignments = read_subtheme_assignments(paths.subtheme_assignments());
    for (const auto& [theme, set] : subthemes.themes) {
      const auto* cat = taxonomy.find(theme);
      auto table = compute_prevalence_table(sub_assignments, set, cat ? cat->name : "");
      auto rendered = render_theme_table(table, quotes);
      for (auto& w : rendered.warnings) result.warnings.push_back(std::move(w));
      md += "\n## " + std::string(1, theme) + ". " + table.name + "\n\n";
      md += "Concerns with a sub-theme label: " + text::with_thousands(table.total) + "\n\n";
      md += rendered.markdown;
      auto csv_path = paths.root / ("theme_" + std::string(1, theme) + ".csv");
      write_file_atomic(csv_path, rendered.csv);
      result.files.push_back(csv_path);
      tabled.insert(theme);
      result.tables.push_back(std::move(table));
    }
    for (char failed : subthemes.failed_themes) {
      md += "\n## " + std::string(1, failed) + "\n\nAggregation failed for this theme.\n";
    }
  } else {
    md += "\nSub-theme tables are not available until the prevalence stage completes.\n";
  }
  for (const auto& [key, quote] : quotes) {
    if (!tabled.count(key.first)) {
      result.warnings.push_back("quote for " + std::string(1, key.first) + " rank " +
                                std::to_string(key.second) + " matches no sub-theme; ignored");
    }
  }

  llm::TokenLedger ledger{0, 0, options.input_rate, options.output_rate};
  if (std::filesystem::exists(paths.run_log())) {
    ledger = llm::replay_ledger(llm::RunLog::read(paths.run_log()), options.input_rate,
                                options.output_rate);
  }
  auto cost = render_cost_table(llm::cost_report(ledger));
  write_file_atomic(paths.root / "cost.md", "# Token usage and cost\n\n" + cost);
  result.files.push_back(paths.root / "cost.md");
  md += "\n## Token usage and cost\n\n" + cost;

  write_file_atomic(paths.root / "report.md", md);
  result.files.insert(result.files.begin(), paths.root / "report.md");
  return result;
}

}  // namespace qualpipe::report
