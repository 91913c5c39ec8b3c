#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace qualpipe::fixture {

// What the synthetic forum fixture is built to contain.
struct Planted {
  std::size_t submissions_total = 0;  // well-formed submission records
  std::size_t threads_retained = 0;
  std::size_t threads_short = 0;
  std::size_t groups = 0;
  std::size_t no_concern_groups = 0;
  std::size_t orphan_comments = 0;
  std::size_t malformed_submission_lines = 0;
  std::size_t malformed_comment_lines = 0;
  std::size_t concerns = 0;
  std::map<char, std::size_t> themes;                       // theme -> concerns
  std::map<char, std::map<char, std::size_t>> subthemes;    // theme -> sub-theme letter -> concerns
  std::map<char, std::vector<std::string>> subtheme_titles;  // rank order
};

struct Fixture {
  std::map<std::string, std::string> files;  // file name -> contents
  Planted planted;
};

// Deterministic: the same bytes on every call.
Fixture build_forum_fixture();

void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

}  // namespace qualpipe::fixture
