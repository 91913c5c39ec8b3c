#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "qualpipe/gateway.hpp"
#include "qualpipe/prompts.hpp"
#include "qualpipe/stages.hpp"

namespace qualpipe {

enum class Stage { generation, classification, aggregation, prevalence };

inline constexpr Stage kAllStages[] = {Stage::generation, Stage::classification,
                                       Stage::aggregation, Stage::prevalence};

std::string_view stage_name(Stage s);     // "generation"
std::string_view stage_command(Stage s);  // "generate"
std::optional<Stage> parse_stage(std::string_view s);  // accepts either form

// Layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path groups() const { return root / "groups.ndjson"; }
  std::filesystem::path concerns() const { return root / "concerns.ndjson"; }
  std::filesystem::path theme_assignments() const { return root / "theme_assignments.ndjson"; }
  std::filesystem::path subthemes() const { return root / "subthemes.json"; }
  std::filesystem::path subtheme_assignments() const {
    return root / "subtheme_assignments.ndjson";
  }
  std::filesystem::path run_log() const { return root / "run_log.ndjson"; }
  std::filesystem::path checkpoint_dir() const { return root / "checkpoints"; }
  std::filesystem::path checkpoint(Stage s) const;
  std::filesystem::path meta(Stage s) const;
  std::filesystem::path quarantine(Stage s) const;
  std::filesystem::path output(Stage s) const;
};

struct StageSummary {
  Stage stage = Stage::generation;
  std::size_t units_total = 0;
  std::size_t units_executed = 0;  // this invocation
  std::size_t units_done = 0;
  std::size_t units_failed = 0;
  std::size_t items_failed = 0;  // concerns inside failed chunks
  std::map<std::string, std::size_t> failed_by_category;
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  std::uint64_t backend_calls = 0;
  std::size_t quarantined = 0;
  std::size_t warnings = 0;  // unknown labels, description length, absent quotes
  bool complete = false;
  bool restarted = false;  // inputs changed since the last checkpoint

  double failure_rate() const {
    return units_total == 0 ? 0.0 : static_cast<double>(units_failed) / static_cast<double>(units_total);
  }
};

// Hash of everything a stage consumes: its input artifacts plus the
// configuration that shapes its prompts and units.
std::string stage_fingerprint(const RunPaths& paths, Stage stage, const StudyConfig& config,
                              const PromptTemplates& templates);

// True when the stage finished every unit for its current inputs.
bool stage_complete(const RunPaths& paths, Stage stage, const StudyConfig& config,
                    const PromptTemplates& templates);

// Runs pipeline stages against a run directory with checkpointing. Within a
// stage, units run on up to `workers` threads; outputs are ordered by key so
// they do not depend on the worker count.
class PipelineRunner {
 public:
  PipelineRunner(RunPaths paths, StudyConfig config, PromptTemplates templates,
                 llm::Gateway& gateway, std::size_t workers,
                 const std::atomic<bool>* stop = nullptr);

  // Throws StateError when the preceding stage is not complete. Completed
  // units are skipped; failed units are re-executed only with retry_failed.
  StageSummary run(Stage stage, bool retry_failed = false);

 private:
  StageSummary run_generation(bool retry_failed);
  StageSummary run_classification(bool retry_failed);
  StageSummary run_aggregation(bool retry_failed);
  StageSummary run_prevalence(bool retry_failed);

  void require_complete(Stage predecessor, Stage stage) const;
  bool stopped() const { return stop_ && stop_->load(); }

  RunPaths paths_;
  StudyConfig config_;
  PromptTemplates templates_;
  llm::Gateway& gateway_;
  std::size_t workers_;
  const std::atomic<bool>* stop_;
};

}  // namespace qualpipe
