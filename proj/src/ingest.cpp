#include "qualpipe/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe::ingest {

using nlohmann::json;

namespace {

std::optional<std::string> string_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

// Dumps carry created_utc as an integer, a float, or a numeric string.
std::optional<std::int64_t> timestamp_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return std::nullopt;
  if (it->is_number_integer()) return it->get<std::int64_t>();
  if (it->is_number_float()) return static_cast<std::int64_t>(it->get<double>());
  if (it->is_string()) {
    const auto& s = it->get_ref<const std::string&>();
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos == s.size()) return static_cast<std::int64_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

std::string content_or_empty(std::string body) {
  return is_deleted_marker(body) ? std::string() : body;
}

template <typename Record, typename Convert>
ParseResult<Record> parse_lines(std::istream& in, Convert convert) {
  ParseResult<Record> result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      result.skipped.push_back({line_number, "malformed JSON"});
      continue;
    }
    std::string reason;
    if (auto rec = convert(j, reason)) {
      result.records.push_back(std::move(*rec));
    } else {
      result.skipped.push_back({line_number, reason});
    }
  }
  if (in.bad()) throw InputError("read error while parsing archive");
  return result;
}

std::optional<ForumSubmission> to_submission(const json& j, std::string& reason) {
  auto id = string_field(j, "id");
  auto title = string_field(j, "title");
  if (!title) {
    reason = j.contains("link_id") ? "comment record in submissions stream" : "missing title";
    return std::nullopt;
  }
  if (!id || id->empty()) {
    reason = "missing id";
    return std::nullopt;
  }
  auto created = timestamp_field(j, "created_utc");
  if (!created || *created <= 0) {
    reason = "missing or invalid created_utc";
    return std::nullopt;
  }
  ForumSubmission s;
  s.id = std::move(*id);
  s.title = std::move(*title);
  s.body = content_or_empty(string_field(j, "selftext").value_or(""));
  s.created_at = *created;
  s.source_label = string_field(j, "subreddit").value_or("");
  return s;
}

std::optional<ForumComment> to_comment(const json& j, std::string& reason) {
  auto link = string_field(j, "link_id");
  if (!link) {
    reason = j.contains("title") ? "submission record in comments stream" : "missing link_id";
    return std::nullopt;
  }
  auto id = string_field(j, "id");
  if (!id || id->empty()) {
    reason = "missing id";
    return std::nullopt;
  }
  auto body = string_field(j, "body");
  if (!body) {
    reason = "missing body";
    return std::nullopt;
  }
  auto created = timestamp_field(j, "created_utc");
  if (!created || *created <= 0) {
    reason = "missing or invalid created_utc";
    return std::nullopt;
  }
  std::string parent = text::starts_with(*link, "t3_") ? link->substr(3) : *link;
  if (parent.empty()) {
    reason = "empty link_id";
    return std::nullopt;
  }
  ForumComment c;
  c.id = std::move(*id);
  c.submission_id = std::move(parent);
  c.body = content_or_empty(std::move(*body));
  c.created_at = *created;
  return c;
}

template <typename Fn>
auto parse_file(const std::filesystem::path& path, Fn fn) {
  std::ifstream in(path);
  if (!in) throw InputError("input not found: " + path.string());
  return fn(in);
}

}  // namespace

bool is_deleted_marker(std::string_view body) {
  std::string t = text::trim(body);
  return t == "[deleted]" || t == "[removed]";
}

ParseResult<ForumSubmission> parse_submissions(std::istream& in) {
  return parse_lines<ForumSubmission>(in, to_submission);
}

ParseResult<ForumComment> parse_comments(std::istream& in) {
  return parse_lines<ForumComment>(in, to_comment);
}

ParseResult<ForumSubmission> parse_submissions_file(const std::filesystem::path& path) {
  return parse_file(path, [](std::istream& in) { return parse_submissions(in); });
}

ParseResult<ForumComment> parse_comments_file(const std::filesystem::path& path) {
  return parse_file(path, [](std::istream& in) { return parse_comments(in); });
}

ThreadDocument make_document(std::string submission_id, std::string title, std::string body,
                             std::vector<std::string> comments, std::int64_t created_at) {
  ThreadDocument doc;
  doc.submission_id = std::move(submission_id);
  doc.title = std::move(title);
  doc.body = std::move(body);
  doc.comments = std::move(comments);
  doc.created_at = created_at;
  doc.comment_count = doc.comments.size();
  doc.text = doc.title + "\n" + doc.body;
  for (const auto& c : doc.comments) {
    doc.text += '\n';
    doc.text += c;
  }
  return doc;
}

ThreadBuildResult build_threads(const std::vector<ForumSubmission>& submissions,
                                const std::vector<ForumComment>& comments) {
  ThreadBuildResult result;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<const ForumSubmission*> unique;
  for (const auto& s : submissions) {
    if (index.emplace(s.id, unique.size()).second) {
      unique.push_back(&s);
    } else {
      ++result.duplicate_submissions;
    }
  }

  std::vector<std::vector<const ForumComment*>> by_thread(unique.size());
  for (const auto& c : comments) {
    auto it = index.find(c.submission_id);
    if (it == index.end()) {
      ++result.orphan_comments;
      continue;
    }
    if (!c.body.empty()) by_thread[it->second].push_back(&c);
  }

  result.documents.reserve(unique.size());
  for (std::size_t i = 0; i < unique.size(); ++i) {
    auto& thread = by_thread[i];
    std::sort(thread.begin(), thread.end(), [](const ForumComment* a, const ForumComment* b) {
      if (a->created_at != b->created_at) return a->created_at < b->created_at;
      return a->id < b->id;
    });
    std::vector<std::string> bodies;
    bodies.reserve(thread.size());
    for (const auto* c : thread) bodies.push_back(c->body);
    const auto& s = *unique[i];
    result.documents.push_back(make_document(s.id, s.title, s.body, std::move(bodies), s.created_at));
  }
  return result;
}

FilterResult filter_short(std::vector<ThreadDocument> docs, std::size_t min_chars) {
  if (min_chars == 0) throw PreconditionError("min_chars must be >= 1");
  FilterResult result;
  for (auto& d : docs) {
    if (text::utf8_length(d.text) >= min_chars) {
      result.retained.push_back(std::move(d));
    } else {
      ++result.dropped;
    }
  }
  return result;
}

std::string group_key_for(std::vector<std::string> submission_ids) {
  std::sort(submission_ids.begin(), submission_ids.end());
  return text::sha256_hex(text::join(submission_ids, "\n")).substr(0, 16);
}

BatchGroup make_group(std::vector<ThreadDocument> members) {
  if (members.empty()) throw PreconditionError("a batch group needs at least one member");
  BatchGroup g;
  std::vector<std::string> ids;
  g.earliest_timestamp = members.front().created_at;
  for (const auto& m : members) {
    ids.push_back(m.submission_id);
    g.earliest_timestamp = std::min(g.earliest_timestamp, m.created_at);
  }
  g.group_key = group_key_for(std::move(ids));
  g.members = std::move(members);
  return g;
}

std::vector<BatchGroup> group_batches(const std::vector<ThreadDocument>& docs,
                                      std::size_t group_size) {
  if (group_size == 0) throw PreconditionError("group size must be >= 1");
  std::vector<BatchGroup> groups;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < docs.size(); i += group_size) {
    auto last = std::min(docs.size(), i + group_size);
    BatchGroup g = make_group({docs.begin() + static_cast<std::ptrdiff_t>(i),
                               docs.begin() + static_cast<std::ptrdiff_t>(last)});
    // Only reachable when a corpus repeats the same id set.
    std::string base = g.group_key;
    for (int n = 2; !seen.insert(g.group_key).second; ++n) {
      g.group_key = base + "-" + std::to_string(n);
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

void write_groups(std::ostream& out, const std::vector<BatchGroup>& groups) {
  for (const auto& g : groups) {
    json members = json::array();
    for (const auto& m : g.members) {
      members.push_back({{"submission_id", m.submission_id},
                         {"text", m.text},
                         {"created_at", m.created_at},
                         {"comment_count", m.comment_count},
                         {"title", m.title},
                         {"body", m.body},
                         {"comments", m.comments}});
    }
    json line = {{"group_key", g.group_key},
                 {"earliest_timestamp", g.earliest_timestamp},
                 {"members", std::move(members)}};
    out << line.dump() << '\n';
  }
}

std::vector<BatchGroup> read_groups(std::istream& in) {
  std::vector<BatchGroup> groups;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (text::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      BatchGroup g;
      g.group_key = j.at("group_key").get<std::string>();
      g.earliest_timestamp = j.at("earliest_timestamp").get<std::int64_t>();
      for (const auto& m : j.at("members")) {
        ThreadDocument d;
        d.submission_id = m.at("submission_id").get<std::string>();
        d.text = m.at("text").get<std::string>();
        d.created_at = m.at("created_at").get<std::int64_t>();
        d.comment_count = m.at("comment_count").get<std::size_t>();
        if (m.contains("title")) {
          d.title = m.at("title").get<std::string>();
          d.body = m.value("body", "");
          d.comments = m.value("comments", std::vector<std::string>{});
        } else {
          // Externally produced checkpoints only carry the joined text.
          auto nl = d.text.find('\n');
          d.title = d.text.substr(0, nl);
          d.body = nl == std::string::npos ? "" : d.text.substr(nl + 1);
        }
        g.members.push_back(std::move(d));
      }
      if (g.members.empty()) throw InputError("group without members");
      groups.push_back(std::move(g));
    } catch (const json::exception& e) {
      throw InputError("groups checkpoint line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return groups;
}

void write_groups_file(const std::filesystem::path& path, const std::vector<BatchGroup>& groups) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  write_groups(out, groups);
}

std::vector<BatchGroup> read_groups_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("missing batch groups: " + path.string() + " (run ingest first)");
  return read_groups(in);
}

}  // namespace qualpipe::ingest
