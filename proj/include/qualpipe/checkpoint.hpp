#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>

#include <json.hpp>

namespace qualpipe {

// Append-only NDJSON log of completed units. Each record carries a "unit"
// key and a "status" of "done" or "failed"; a later record for the same
// unit supersedes earlier ones.
class CheckpointStore {
 public:
  using Validator = std::function<bool(const nlohmann::json&)>;

  struct Loaded {
    std::map<std::string, nlohmann::json> latest;
    std::size_t quarantined = 0;
  };

  CheckpointStore(std::filesystem::path file, std::filesystem::path quarantine);

  // Corrupt lines, and lines the validator rejects, move to the quarantine
  // file and the checkpoint is rewritten without them.
  Loaded load(const Validator& valid = {});

  // Thread-safe; each record is written and flushed as a single line.
  void append(const nlohmann::json& record);

  // Moves the checkpoint aside (suffix ".stale") so the stage starts over.
  void archive();

  const std::filesystem::path& path() const { return file_; }

 private:
  std::filesystem::path file_;
  std::filesystem::path quarantine_;
  std::mutex mu_;
  std::ofstream out_;
};

// Writes via a temporary file and rename so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace qualpipe
