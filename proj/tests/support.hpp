#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qualpipe/cli.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(QUALPIPE_SOURCE_DIR); }
inline fs::path fixture_dir() { return source_dir() / "fixtures" / "forum"; }

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("qualpipe_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const fs::path& p, const std::string& contents) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << contents;
}

// Copies the committed fixture so runs never touch the source tree.
inline fs::path copy_fixture(const fs::path& into) {
  auto dst = into / "forum";
  fs::create_directories(dst);
  for (const auto& e : fs::directory_iterator(fixture_dir())) {
    fs::copy_file(e.path(), dst / e.path().filename(), fs::copy_options::overwrite_existing);
  }
  return dst;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult cli(std::vector<std::string> args, const std::atomic<bool>* stop = nullptr) {
  std::ostringstream out, err;
  CliResult r;
  r.code = qualpipe::cli::run_cli(args, out, err, stop);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Final artifacts whose bytes must not depend on scheduling.
inline const std::vector<std::string>& final_outputs() {
  static const std::vector<std::string> names = {
      "groups.ndjson",       "concerns.ndjson", "theme_assignments.ndjson",
      "subthemes.json",      "subtheme_assignments.ndjson", "report.md",
      "distribution.csv",    "theme_A.csv",     "theme_B.csv",
      "theme_C.csv",         "theme_D.csv",     "cost.md"};
  return names;
}

inline std::map<std::string, std::string> snapshot(const fs::path& run_dir) {
  std::map<std::string, std::string> out;
  for (const auto& name : final_outputs()) {
    if (fs::exists(run_dir / name)) out[name] = slurp(run_dir / name);
  }
  return out;
}

}  // namespace testsupport
