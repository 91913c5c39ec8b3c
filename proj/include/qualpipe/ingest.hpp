#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace qualpipe::ingest {

struct ForumSubmission {
  std::string id;
  std::string title;
  std::string body;  // empty when the dump marks it [deleted]/[removed]
  std::int64_t created_at = 0;
  std::string source_label;
};

struct ForumComment {
  std::string id;
  std::string submission_id;  // link_id without the "t3_" prefix
  std::string body;
  std::int64_t created_at = 0;
};

enum class ArchiveKind { submissions, comments };

struct SkippedLine {
  std::size_t line_number = 0;  // 1-based
  std::string reason;
};

template <typename Record>
struct ParseResult {
  std::vector<Record> records;
  std::vector<SkippedLine> skipped;

  std::size_t skip_count() const { return skipped.size(); }
};

// Streaming parse of a newline-delimited JSON dump. Malformed lines and
// records of the wrong kind are skipped and reported, never fatal. Blank
// lines are ignored without counting.
ParseResult<ForumSubmission> parse_submissions(std::istream& in);
ParseResult<ForumComment> parse_comments(std::istream& in);

// File variants; throw InputError when the file cannot be opened.
ParseResult<ForumSubmission> parse_submissions_file(const std::filesystem::path& path);
ParseResult<ForumComment> parse_comments_file(const std::filesystem::path& path);

// Dump bodies that carry no content.
bool is_deleted_marker(std::string_view body);

struct ThreadDocument {
  std::string submission_id;
  std::string title;
  std::string body;
  std::vector<std::string> comments;  // chronological
  std::string text;                   // title, body, comments joined by '\n'
  std::int64_t created_at = 0;
  std::size_t comment_count = 0;

  friend bool operator==(const ThreadDocument&, const ThreadDocument&) = default;
};

struct ThreadBuildResult {
  std::vector<ThreadDocument> documents;  // submission input order
  std::size_t orphan_comments = 0;
  std::size_t duplicate_submissions = 0;
};

// One document per submission. Comments are ordered by (created_at, id);
// comments whose parent is absent are counted and dropped, as are empty
// (deleted) comment bodies.
ThreadBuildResult build_threads(const std::vector<ForumSubmission>& submissions,
                                const std::vector<ForumComment>& comments);

// Assembles the text of a thread from its parts.
ThreadDocument make_document(std::string submission_id, std::string title, std::string body,
                             std::vector<std::string> comments, std::int64_t created_at);

struct FilterResult {
  std::vector<ThreadDocument> retained;
  std::size_t dropped = 0;
};

inline constexpr std::size_t kDefaultMinChars = 100;

// Keeps documents whose text has at least min_chars code points.
FilterResult filter_short(std::vector<ThreadDocument> docs, std::size_t min_chars);

struct BatchGroup {
  std::string group_key;
  std::vector<ThreadDocument> members;
  std::int64_t earliest_timestamp = 0;

  friend bool operator==(const BatchGroup&, const BatchGroup&) = default;
};

inline constexpr std::size_t kDefaultGroupSize = 5;

// Stable key for a set of members: hex SHA-256 prefix of the sorted ids.
std::string group_key_for(std::vector<std::string> submission_ids);

// Builds a single group from members; computes key and earliest timestamp.
BatchGroup make_group(std::vector<ThreadDocument> members);

// Partitions docs in input order into ceil(N/G) groups.
std::vector<BatchGroup> group_batches(const std::vector<ThreadDocument>& docs,
                                      std::size_t group_size);

// Checkpoint of batch groups, one group per line.
void write_groups(std::ostream& out, const std::vector<BatchGroup>& groups);
std::vector<BatchGroup> read_groups(std::istream& in);
void write_groups_file(const std::filesystem::path& path, const std::vector<BatchGroup>& groups);
std::vector<BatchGroup> read_groups_file(const std::filesystem::path& path);

}  // namespace qualpipe::ingest
