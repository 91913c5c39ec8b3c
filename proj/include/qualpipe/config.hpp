#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "qualpipe/gateway.hpp"
#include "qualpipe/prompts.hpp"
#include "qualpipe/stages.hpp"
#include "qualpipe/topics.hpp"

namespace qualpipe {

// Flat key=value run configuration. '#' starts a comment line; relative
// paths resolve against the directory holding the file.
struct RunConfig {
  std::optional<std::filesystem::path> submissions;
  std::optional<std::filesystem::path> comments;
  std::filesystem::path run_dir;

  std::string backend = "live";  // live | mock
  std::string endpoint;
  std::string auth_header = "Authorization";
  std::uint32_t request_timeout_s = 120;
  std::optional<std::filesystem::path> mock_script;
  std::optional<std::string> mock_unmatched;

  std::size_t min_chars = ingest::kDefaultMinChars;
  std::size_t concurrency = 8;
  std::uint64_t seed = 42;
  double input_rate = llm::kDefaultInputRate;
  double output_rate = llm::kDefaultOutputRate;
  int max_attempts = 6;
  std::uint32_t backoff_base_ms = 2000;

  std::optional<std::filesystem::path> taxonomy_file;
  std::optional<std::filesystem::path> prompts_dir;
  std::optional<std::filesystem::path> quotes_file;

  std::size_t topic_min_size = 5;
  double topic_threshold = 0.25;

  StudyConfig study;

  // Throws InputError on unknown keys, malformed values or a missing run_dir.
  static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  PromptTemplates templates() const;
  llm::RetryPolicy retry_policy() const;
  eval::TopicParams topic_params() const;
  // Mock backends need mock_script; live ones need endpoint and the API key
  // in the environment. Throws InputError otherwise.
  std::shared_ptr<llm::Backend> make_backend() const;
};

}  // namespace qualpipe
