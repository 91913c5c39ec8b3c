#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qualpipe::eval {

enum class Direction { candidate_vs_reference, reference_vs_candidate };

struct Judgment {
  std::string item_id;
  bool yes = false;
};

struct MatchJudgmentSet {
  Direction direction = Direction::candidate_vs_reference;
  std::vector<Judgment> judgments;
};

// CSV with header item_id,verdict; verdict is yes/no (case-insensitive).
MatchJudgmentSet read_judgments(const std::filesystem::path& path, Direction direction);

// Share of candidate concerns confirmed by the reference list.
double factuality(const MatchJudgmentSet& set);
// Share of reference concerns recovered by the candidate list.
double completeness(const MatchJudgmentSet& set);
std::size_t yes_count(const MatchJudgmentSet& set);

using LabelMap = std::map<std::string, std::string>;  // item_id -> label

// Exact-match proportion; throws InputError listing ids present on one side only.
double accuracy(const LabelMap& gold, const LabelMap& predicted);
std::size_t match_count(const LabelMap& gold, const LabelMap& predicted);

// Strict-majority label, otherwise `catch_all`.
std::string majority_label(std::span<const std::string> labels, std::string_view catch_all);

// item_id -> annotator_id -> label
struct LabelAnnotationSet {
  std::map<std::string, std::map<std::string, std::string>> items;

  std::vector<std::vector<std::string>> rows() const;
  LabelMap majority(std::string_view catch_all) const;
};

// CSV with header item_id,annotator_id,label.
LabelAnnotationSet read_annotations(const std::filesystem::path& path);
// CSV with header item_id,label.
LabelMap read_label_map(const std::filesystem::path& path);

// Fleiss' kappa over items that each carry the same number of ratings.
// A chance agreement of 1 (every label identical) yields 1.0.
double fleiss_kappa(const std::vector<std::vector<std::string>>& items);
double fleiss_kappa(const LabelAnnotationSet& set);

struct BinomialTest {
  double p_value = 1.0;
  bool significant = false;
};

// Exact two-sided test: sums the probabilities of all outcomes no more
// likely than the observed one.
BinomialTest binomial_significance(std::uint64_t successes, std::uint64_t trials, double chance_p,
                                   double alpha = 0.05);

struct MetricReport {
  std::string phase;
  std::string name;
  double value = 0;
  std::size_t sample_size = 0;
  std::optional<double> chance_p;
  std::optional<double> p_value;
  std::optional<bool> significant;
  std::string note;
};

nlohmann::json to_json(const MetricReport& m);
MetricReport with_significance(MetricReport m, std::uint64_t successes, double chance_p);

// Table-shaped markdown summary: one row per metric.
std::string render_metrics_markdown(const std::vector<MetricReport>& metrics);

}  // namespace qualpipe::eval
