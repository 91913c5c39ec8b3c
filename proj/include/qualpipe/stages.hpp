#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qualpipe/error.hpp"
#include "qualpipe/gateway.hpp"
#include "qualpipe/ingest.hpp"
#include "qualpipe/prompts.hpp"
#include "qualpipe/taxonomy.hpp"

namespace qualpipe {

struct StudyConfig {
  std::string topic = "AI and algorithmic platform features";
  std::string focus;  // Step 1 clause of the generation prompt; empty means `topic`
  ThemeTaxonomy taxonomy = ThemeTaxonomy::builtin();
  std::size_t group_size = ingest::kDefaultGroupSize;
  std::size_t classification_chunk_size = 400;
  std::size_t aggregation_chunk_size = 400;
  std::size_t prevalence_chunk_size = 400;
  std::size_t subtheme_count = 5;
  int parity_retries = 2;
  std::size_t context_budget_tokens = 120000;
  std::string model_name = "gpt-4-turbo";
  double temperature = llm::kDefaultTemperature;
  std::uint32_t max_output_tokens = 4096;

  void validate() const;
};

enum class QuoteCheck { unchecked, verbatim, fuzzy, absent };
std::string_view to_string(QuoteCheck q);
QuoteCheck parse_quote_check(std::string_view s);

struct Concern {
  std::string concern_id;
  std::string group_key;
  std::int64_t earliest_timestamp = 0;
  std::string title;
  std::string description;
  std::string quote;
  QuoteCheck quote_check = QuoteCheck::unchecked;

  friend bool operator==(const Concern&, const Concern&) = default;
};

// group_key + zero-padded ordinal; lexicographic order equals (group, ordinal) order.
std::string make_concern_id(std::string_view group_key, std::size_t ordinal);

struct ThemeAssignment {
  std::string concern_id;
  char theme = 'A';

  friend bool operator==(const ThemeAssignment&, const ThemeAssignment&) = default;
};

struct SubTheme {
  int rank = 0;
  std::string title;
  std::string description;

  friend bool operator==(const SubTheme&, const SubTheme&) = default;
};

struct SubThemeSet {
  char theme = 'A';
  std::vector<SubTheme> entries;  // sorted by rank

  // Rank r maps to letter 'A' + r - 1; the catch-all follows the last rank.
  char letter_for_rank(int rank) const { return static_cast<char>('A' + rank - 1); }
  char catch_all() const { return static_cast<char>('A' + entries.size()); }

  friend bool operator==(const SubThemeSet&, const SubThemeSet&) = default;
};

struct SubThemeAssignment {
  std::string concern_id;
  char theme = 'A';
  char subtheme = 'A';

  friend bool operator==(const SubThemeAssignment&, const SubThemeAssignment&) = default;
};

// ---------------------------------------------------------------------------
// Generation

class ContextOverflow : public Error {
 public:
  ContextOverflow(std::string group_key, std::size_t estimated, std::size_t budget);
  const std::string& group_key() const { return group_key_; }

 private:
  std::string group_key_;
};

// Serialized member threads as a JSON array, one object per member.
std::string serialize_group(const ingest::BatchGroup& group);

// Throws ContextOverflow when the estimated prompt size exceeds the budget.
std::string render_generation_prompt(const ingest::BatchGroup& group, const StudyConfig& config,
                                     const PromptTemplates& templates);

// Units for the generation stage: groups that exceed the context budget are
// split into singleton groups. Singletons that still overflow are kept and
// fail when executed.
std::vector<ingest::BatchGroup> plan_generation_units(const std::vector<ingest::BatchGroup>& groups,
                                                      const StudyConfig& config,
                                                      const PromptTemplates& templates);

struct GenerationParse {
  enum class Kind { concerns, no_concerns, malformed };
  Kind kind = Kind::malformed;
  std::vector<Concern> concerns;
  std::string error;
  std::size_t description_warnings = 0;  // descriptions outside 10-20 words
};

GenerationParse parse_generation_output(std::string_view text, const ingest::BatchGroup& group);

// Verbatim: the normalized quote occurs in some member text. Fuzzy: some
// window of the member token sequence shares >= 80% of the quote tokens.
QuoteCheck verify_quote(std::string_view quote, const ingest::BatchGroup& group);

// Lowercased alphanumeric tokens; punctuation and whitespace are separators.
std::vector<std::string> normalized_tokens(std::string_view s);

inline constexpr double kFuzzyQuoteThreshold = 0.8;

struct UnitFailure {
  llm::FailureCategory category = llm::FailureCategory::other;
  int attempts = 0;
  std::string detail;
};

struct GenerationUnitResult {
  std::string group_key;
  std::vector<Concern> concerns;
  std::optional<UnitFailure> failure;
  bool no_concerns = false;
  std::size_t description_warnings = 0;
};

GenerationUnitResult run_generation_unit(llm::Gateway& gateway, const ingest::BatchGroup& group,
                                         const StudyConfig& config,
                                         const PromptTemplates& templates);

// ---------------------------------------------------------------------------
// Serial-number dictionaries ({1: A, 2: B}) shared by classification and prevalence

// Parsed entries in output order, or nullopt when the text is not a dictionary.
std::optional<std::vector<std::pair<int, std::string>>> parse_serial_labels(std::string_view text);

// True when keys are exactly 1..expected, each once.
bool has_parity(const std::vector<std::pair<int, std::string>>& entries, std::size_t expected);

// Maps a raw label onto a code in [first, last]; unknown labels map to
// `catch_all` and set `unknown`.
char normalize_label(std::string_view raw, char last, char catch_all, bool& unknown);

struct ChunkOutcome {
  std::vector<char> labels;  // one per chunk item when successful
  std::optional<UnitFailure> failure;
  std::size_t unknown_labels = 0;
  int calls = 0;  // gateway calls including parity retries
};

// Sends `prompt`, enforces parity, retries parity violations up to
// `parity_retries` times.
ChunkOutcome label_chunk(llm::Gateway& gateway, const llm::CompletionRequest& request,
                         std::size_t items, char last_code, char catch_all, int parity_retries);

// ---------------------------------------------------------------------------
// Classification

std::string render_classification_prompt(std::span<const Concern> chunk,
                                         const ThemeTaxonomy& taxonomy,
                                         const PromptTemplates& templates);

struct ChunkFailure {
  std::size_t chunk_index = 0;
  std::vector<std::string> concern_ids;
  UnitFailure failure;
};

struct ClassificationChunkResult {
  std::size_t chunk_index = 0;
  std::vector<ThemeAssignment> assignments;
  std::optional<ChunkFailure> failure;
  std::size_t unknown_labels = 0;
};

ClassificationChunkResult classify_chunk(llm::Gateway& gateway, std::size_t chunk_index,
                                         std::span<const Concern> chunk, const StudyConfig& config,
                                         const PromptTemplates& templates);

struct ClassificationResult {
  std::vector<ThemeAssignment> assignments;
  std::vector<ChunkFailure> failures;
  std::size_t unknown_labels = 0;
};

// In-memory stage over concerns in the given order.
ClassificationResult run_classification(llm::Gateway& gateway, std::span<const Concern> concerns,
                                        const StudyConfig& config,
                                        const PromptTemplates& templates);

// ---------------------------------------------------------------------------
// Aggregation

// Tolerant parse of {concern_rank, concern_title, concern_description}
// records; accepts a JSON array, JSON objects or unquoted-key objects.
std::optional<std::vector<SubTheme>> parse_subtheme_list(std::string_view text);

// Empty when `entries` is a valid ranked list of exactly `n` (or, for
// intermediate candidates, 1..n) entries; otherwise the reason.
std::string validate_subthemes(const std::vector<SubTheme>& entries, std::size_t n,
                               bool exact = true);

struct AggregationSchedule {
  std::vector<std::size_t> calls_per_level;  // level 0 = map over concerns

  std::size_t map_calls() const { return calls_per_level.empty() ? 0 : calls_per_level.front(); }
  std::size_t merge_calls() const;
  std::size_t total_calls() const { return map_calls() + merge_calls(); }
};

// Map over chunks of `budget` items, then merge candidates (n per map
// call) until one call remains.
AggregationSchedule aggregation_schedule(std::size_t items, std::size_t budget, std::size_t n);

// Lines handed to an aggregation call: title and description on
// consecutive lines.
std::string render_aggregation_prompt(const ThemeCategory& category,
                                      const std::vector<std::pair<std::string, std::string>>& items,
                                      std::size_t n, const PromptTemplates& templates);

std::string aggregation_unit_id(char theme, std::size_t level, std::size_t index);

struct AggregationCallResult {
  std::vector<SubTheme> entries;
  std::optional<UnitFailure> failure;
  int calls = 0;
};

// One aggregation call with validation and retries.
AggregationCallResult aggregate_call(llm::Gateway& gateway, const ThemeCategory& category,
                                     const std::vector<std::pair<std::string, std::string>>& items,
                                     std::size_t level, std::size_t index, bool final_level,
                                     const StudyConfig& config, const PromptTemplates& templates);

struct AggregationResult {
  std::optional<SubThemeSet> subthemes;
  std::optional<UnitFailure> failure;
  std::size_t calls = 0;
};

// In-memory map-reduce for one theme. Throws PreconditionError when
// theme_concerns is empty.
AggregationResult run_aggregation(llm::Gateway& gateway, char theme,
                                  std::span<const Concern> theme_concerns,
                                  const StudyConfig& config, const PromptTemplates& templates);

// ---------------------------------------------------------------------------
// Prevalence

std::string render_prevalence_prompt(std::span<const Concern> chunk, const SubThemeSet& subthemes,
                                     const PromptTemplates& templates);

struct PrevalenceChunkResult {
  std::size_t chunk_index = 0;
  std::vector<SubThemeAssignment> assignments;
  std::optional<ChunkFailure> failure;
  std::size_t unknown_labels = 0;
};

PrevalenceChunkResult prevalence_chunk(llm::Gateway& gateway, std::size_t chunk_index,
                                       std::span<const Concern> chunk, const SubThemeSet& subthemes,
                                       const StudyConfig& config, const PromptTemplates& templates);

struct PrevalenceResult {
  std::vector<SubThemeAssignment> assignments;
  std::vector<ChunkFailure> failures;
  std::size_t unknown_labels = 0;
};

// Throws PreconditionError when `subthemes` is empty or invalid.
PrevalenceResult run_prevalence(llm::Gateway& gateway, std::span<const Concern> theme_concerns,
                                const SubThemeSet& subthemes, const StudyConfig& config,
                                const PromptTemplates& templates);

// Number of chunks of `size` needed for `items`.
inline std::size_t chunk_count(std::size_t items, std::size_t size) {
  return size == 0 ? 0 : (items + size - 1) / size;
}

}  // namespace qualpipe
