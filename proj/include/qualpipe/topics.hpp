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

#include "qualpipe/pipeline.hpp"
#include "qualpipe/taxonomy.hpp"

namespace qualpipe::eval {

using TermVector = std::map<std::string, double>;

struct TopicParams {
  std::size_t min_topic_size = 5;
  int ngram_min = 1;
  int ngram_max = 2;
  std::uint64_t seed = 42;
  double similarity_threshold = 0.25;  // join a cluster at or above this cosine
};

// Lowercased alphanumeric tokens with English stopwords removed.
std::vector<std::string> content_tokens(std::string_view text);
// Term counts over n-grams of the content tokens, n in [ngram_min, ngram_max].
TermVector term_vector(std::string_view text, int ngram_min = 1, int ngram_max = 2);
double cosine(const TermVector& a, const TermVector& b);

struct Topic {
  std::string topic_id;  // "t1" is the most frequent
  std::size_t frequency = 0;
  TermVector terms;  // centroid, weights sum to 1
  std::vector<std::size_t> members;  // corpus indices, ascending
};

struct TopicModelOutput {
  std::vector<Topic> topics;  // ordered by frequency rank
};

// Greedy centroid clustering: documents are visited in a seeded shuffle
// order and join the most similar centroid at or above the threshold, or
// start a new cluster. Clusters below min_topic_size are dropped; the rest
// are ranked by size (ties by smallest member index). Throws InputError when
// no document has any content terms.
TopicModelOutput extract_topics(const std::vector<std::string>& corpus, const TopicParams& params);

nlohmann::json to_json(const TopicModelOutput& model);
// {topics:[{topic_id, frequency, terms:{term:weight}}]}; weights are
// renormalized to unit sum and topics re-sorted by frequency.
TopicModelOutput topics_from_json(const nlohmann::json& j);
TopicModelOutput read_topics(const std::filesystem::path& path);

struct TopicMatch {
  std::string topic_id;
  std::size_t rank = 0;  // 1-based
  double similarity = 0;
  bool zero_similarity = false;
};

// Highest cosine similarity; ties go to the more frequent topic. With no
// shared terms at all the rank-1 topic is returned and flagged.
TopicMatch most_similar_topic(std::string_view text, const TopicModelOutput& model,
                              int ngram_min = 1, int ngram_max = 2);

// |unique ids| / n
double distinctness(std::span<const std::string> assigned);

struct CoverageResult {
  double value = 0;
  std::size_t covered = 0;  // unique assigned topics inside the window
  std::size_t unique = 0;
  bool window_truncated = false;  // fewer than n*k topics were available
};

// Fraction of the unique assigned topics found among the n*k most frequent
// topics, where n = assigned.size(). Throws PreconditionError when there are
// no topics or k is zero.
CoverageResult coverage_k(std::span<const std::string> assigned, const TopicModelOutput& model,
                          std::size_t k);

struct SubThemeAlignment {
  int rank = 0;
  std::string title;
  TopicMatch match;
};

struct ThemeAlignment {
  char theme = 'A';
  std::size_t corpus_size = 0;
  std::size_t topic_count = 0;
  std::vector<SubThemeAlignment> subthemes;
  std::optional<double> distinctness;
  std::optional<CoverageResult> coverage1;
  std::optional<CoverageResult> coverage2;
  std::vector<std::string> warnings;
  std::string error;  // set when metrics could not be computed
};

struct AggregationEvaluation {
  std::vector<ThemeAlignment> themes;
  std::optional<double> mean_distinctness;
  std::optional<double> mean_coverage1;
  std::optional<double> mean_coverage2;
  std::optional<double> pooled_distinctness;
  std::optional<double> pooled_coverage1;
  std::optional<double> pooled_coverage2;
};

// Fits topics per theme on the title and description of that theme's
// concerns (or loads topics_dir/topics_<L>.json when given) and scores every
// sub-theme list. Throws StateError naming the first missing stage output.
AggregationEvaluation evaluate_aggregation(const RunPaths& paths, const ThemeTaxonomy& taxonomy,
                                           const TopicParams& params,
                                           const std::optional<std::filesystem::path>& topics_dir = {});

nlohmann::json to_json(const AggregationEvaluation& e);

}  // namespace qualpipe::eval
