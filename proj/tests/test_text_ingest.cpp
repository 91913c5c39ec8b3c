#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "qualpipe/error.hpp"
#include "qualpipe/ingest.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {
namespace {

using namespace ingest;

TEST(Text, PercentRendering) {
  EXPECT_EQ(text::percent_1dp(29.13), "29.1");
  EXPECT_EQ(text::percent_1dp(20.0), "20");
  EXPECT_EQ(text::percent_1dp(10.46), "10.5");
  EXPECT_EQ(text::percent_1dp(0.0), "0");
  EXPECT_EQ(text::percent_1dp(99.96), "100");
}

TEST(Text, MoneyAndThousands) {
  EXPECT_EQ(text::with_thousands(0), "0");
  EXPECT_EQ(text::with_thousands(999), "999");
  EXPECT_EQ(text::with_thousands(1000), "1,000");
  EXPECT_EQ(text::with_thousands(58728), "58,728");
  EXPECT_EQ(text::with_thousands(135120000), "135,120,000");
  EXPECT_EQ(text::money(1662.3), "1,662.30");
  EXPECT_EQ(text::money(0), "0.00");
  EXPECT_EQ(text::money(311.1), "311.10");
}

TEST(Text, Sha256KnownVectors) {
  EXPECT_EQ(text::sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(text::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Text, CodeFences) {
  EXPECT_EQ(text::strip_code_fences("```json\n[1]\n```"), "[1]");
  EXPECT_EQ(text::strip_code_fences("  ```\n{}\n```  "), "{}");
  EXPECT_EQ(text::strip_code_fences("[1]"), "[1]");
}

TEST(Text, CsvRoundTrip) {
  std::vector<std::string> fields = {"plain", "with, comma", "with \"quote\"", "multi\nline", ""};
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ",";
    line += text::csv_field(fields[i]);
  }
  auto rows = text::parse_csv(line + "\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], fields);
}

TEST(Text, Utf8Length) {
  EXPECT_EQ(text::utf8_length("abc"), 3u);
  EXPECT_EQ(text::utf8_length("caf\xC3\xA9"), 4u);
  EXPECT_EQ(text::utf8_length("\xF0\x9F\x9A\x97"), 1u);
}

TEST(Text, Iso8601) {
  EXPECT_EQ(text::iso8601_utc(1546300800), "2019-01-01T00:00:00Z");
}

ParseResult<ForumSubmission> subs(const std::string& s) {
  std::istringstream in(s);
  return parse_submissions(in);
}

ParseResult<ForumComment> comments(const std::string& s) {
  std::istringstream in(s);
  return parse_comments(in);
}

TEST(Ingest, SubmissionFieldsAndTimestampEncodings) {
  auto r = subs(
      R"({"id":"a","title":"T1","selftext":"body","created_utc":1546300800,"subreddit":"x"})"
      "\n"
      R"({"id":"b","title":"T2","selftext":"[deleted]","created_utc":1546300800.0})"
      "\n"
      R"({"id":"c","title":"T3","selftext":"[removed]","created_utc":"1546300900"})"
      "\n\n");
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.skip_count(), 0u);
  EXPECT_EQ(r.records[0].body, "body");
  EXPECT_EQ(r.records[0].source_label, "x");
  EXPECT_EQ(r.records[1].body, "");
  EXPECT_EQ(r.records[1].created_at, 1546300800);
  EXPECT_EQ(r.records[2].created_at, 1546300900);
}

TEST(Ingest, MalformedLinesAreSkippedWithReasons) {
  auto r = subs("{\"id\": \"x\", \"title\n"
                R"({"id":"c1","link_id":"t3_a","body":"hi","created_utc":5})"
                "\n"
                R"({"id":"ok","title":"fine","selftext":"","created_utc":5})"
                "\n"
                R"({"id":"neg","title":"bad time","created_utc":-3})"
                "\n");
  ASSERT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.skip_count(), 3u);
  EXPECT_EQ(r.skipped[0].line_number, 1u);
  EXPECT_EQ(r.skipped[0].reason, "malformed JSON");
  EXPECT_EQ(r.skipped[1].reason, "comment record in submissions stream");
  EXPECT_EQ(r.skipped[2].line_number, 4u);
}

TEST(Ingest, CommentsStripLinkPrefix) {
  auto r = comments(R"({"id":"c1","link_id":"t3_abc","body":"hello","created_utc":10})"
                    "\n"
                    R"({"id":"c2","link_id":"abc","body":"[deleted]","created_utc":11})"
                    "\n");
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].submission_id, "abc");
  EXPECT_EQ(r.records[1].submission_id, "abc");
  EXPECT_EQ(r.records[1].body, "");
}

TEST(Ingest, ThreadsOrderCommentsAndCountOrphans) {
  std::vector<ForumSubmission> s = {{"a", "Title A", "Body A", 100, ""},
                                    {"b", "Title B", "", 200, ""}};
  std::vector<ForumComment> c = {{"c3", "a", "third", 130},
                                 {"c1", "a", "first", 110},
                                 {"c2", "a", "second", 110},
                                 {"c4", "zzz", "orphan", 120},
                                 {"c5", "b", "", 210}};
  auto built = build_threads(s, c);
  ASSERT_EQ(built.documents.size(), 2u);
  EXPECT_EQ(built.orphan_comments, 1u);
  const auto& a = built.documents[0];
  EXPECT_EQ(a.comments, (std::vector<std::string>{"first", "second", "third"}));
  EXPECT_EQ(a.text, "Title A\nBody A\nfirst\nsecond\nthird");
  EXPECT_TRUE(built.documents[1].comments.empty());
}

TEST(Ingest, DuplicateSubmissionsCounted) {
  std::vector<ForumSubmission> s = {{"a", "T", "x", 1, ""}, {"a", "T", "x", 1, ""}};
  auto built = build_threads(s, {});
  EXPECT_EQ(built.documents.size(), 1u);
  EXPECT_EQ(built.duplicate_submissions, 1u);
}

TEST(Ingest, FilterCountsCodePoints) {
  auto short_doc = make_document("s", std::string(50, 'x'), std::string(48, 'y'), {}, 1);
  // 50 + 1 newline + 48 = 99 characters
  EXPECT_EQ(filter_short({short_doc}, 100).retained.size(), 0u);
  auto exact = make_document("s", std::string(50, 'x'), std::string(49, 'y'), {}, 1);
  EXPECT_EQ(filter_short({exact}, 100).retained.size(), 1u);
  // 99 two-byte characters stay below the threshold despite 198 bytes.
  std::string wide;
  for (int i = 0; i < 99; ++i) wide += "\xC3\xA9";
  auto accented = make_document("s", wide, "", {}, 1);
  EXPECT_EQ(filter_short({accented}, 101).retained.size(), 0u);
}

std::vector<ThreadDocument> random_docs(std::mt19937_64& rng, std::size_t n) {
  std::vector<ThreadDocument> docs;
  std::uniform_int_distribution<std::int64_t> ts(1, 1'000'000);
  for (std::size_t i = 0; i < n; ++i) {
    docs.push_back(make_document("id" + std::to_string(i), "t", "b", {}, ts(rng)));
  }
  return docs;
}

TEST(Ingest, GroupingIsAPartitionProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = rng() % 60;
    std::size_t g = 1 + rng() % 9;
    auto docs = random_docs(rng, n);
    auto groups = group_batches(docs, g);
    EXPECT_EQ(groups.size(), (n + g - 1) / g);
    std::vector<std::string> seen;
    std::set<std::string> keys;
    for (const auto& grp : groups) {
      EXPECT_GE(grp.members.size(), 1u);
      EXPECT_LE(grp.members.size(), g);
      std::int64_t earliest = grp.members.front().created_at;
      for (const auto& m : grp.members) {
        seen.push_back(m.submission_id);
        earliest = std::min(earliest, m.created_at);
      }
      EXPECT_EQ(grp.earliest_timestamp, earliest);
      keys.insert(grp.group_key);
    }
    EXPECT_EQ(keys.size(), groups.size());
    std::vector<std::string> expected;
    for (const auto& d : docs) expected.push_back(d.submission_id);
    EXPECT_EQ(seen, expected);
  }
}

TEST(Ingest, GroupKeyIgnoresMemberOrder) {
  EXPECT_EQ(group_key_for({"b", "a", "c"}), group_key_for({"c", "b", "a"}));
  EXPECT_NE(group_key_for({"a", "b"}), group_key_for({"a", "c"}));
}

TEST(Ingest, GroupsRoundTripThroughCheckpoint) {
  std::mt19937_64 rng(3);
  auto groups = group_batches(random_docs(rng, 17), 5);
  std::stringstream buf;
  write_groups(buf, groups);
  EXPECT_EQ(read_groups(buf), groups);
}

TEST(Ingest, MissingFileIsAnInputError) {
  EXPECT_THROW(parse_submissions_file("/nonexistent/submissions.ndjson"), InputError);
}

}  // namespace
}  // namespace qualpipe
