#include "fixture.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "qualpipe/gateway.hpp"
#include "qualpipe/ingest.hpp"
#include "qualpipe/stages.hpp"
#include "qualpipe/topics.hpp"

namespace qualpipe::fixture {

using nlohmann::json;

namespace {

constexpr std::int64_t kEpoch = 1546300800;  // 2019-01-01T00:00:00Z
constexpr std::size_t kGroupSize = 5;
constexpr std::size_t kClassificationChunk = 16;
constexpr std::size_t kAggregationChunk = 12;
constexpr std::size_t kPrevalenceChunk = 8;
constexpr std::size_t kSubthemes = 5;

struct Spec {
  const char* title;
  std::array<const char*, 3> extra;
  std::size_t count;
};

struct ThemeSpec {
  char code;
  std::vector<Spec> ranked;  // rank 1 first
  std::vector<Spec> others;  // concerns the prevalence stage files under "Other"
};

const std::vector<ThemeSpec>& theme_specs() {
  static const std::vector<ThemeSpec> specs = {
      {'A',
       {{"Hidden trip destinations", {"masked", "address", "blind"}, 5},
        {"Unclear surge boundaries", {"heatmap", "zone", "shifting"}, 4},
        {"Confusing quest terms", {"bonus", "streak", "threshold"}, 4},
        {"Missing fare breakdown", {"itemized", "receipt", "statement"}, 3},
        {"Secret rating effects", {"stars", "deactivation", "score"}, 2}},
       {{"Tire pressure warnings", {"valve", "inflate", "gauge"}, 1},
        {"Sunroof leak repair", {"rain", "seal", "dripping"}, 1}}},
      {'B',
       {{"Volatile weekly earnings", {"paycheck", "swing", "income"}, 4},
        {"Misleading destination filter", {"home", "direction", "commute"}, 3},
        {"Uneven surge multipliers", {"neighbor", "colleague", "parked"}, 3},
        {"Deceptive trip offers", {"estimate", "bait", "screen"}, 2},
        {"Random airport queue", {"lot", "position", "terminal"}, 2}},
       {{"Rider playlist requests", {"music", "aux", "volume"}, 1}}},
      {'C',
       {{"Distracting phone tapping", {"highway", "glance", "popup"}, 2},
        {"Unsafe route guidance", {"navigation", "alley", "night"}, 2},
        {"Unattainable quest deadlines", {"exhausted", "sleep", "fatigue"}, 2},
        {"Acceptance rate pressure", {"decline", "penalty", "timer"}, 2},
        {"Unpaid pickup waiting", {"curb", "restaurant", "idle"}, 2}},
       {}},
      {'D',
       {{"Unequal pay identical trips", {"screenshot", "comparison", "mileage"}, 2},
        {"Earnings below minimum wage", {"hourly", "expenses", "gas"}, 2},
        {"Demographic bias", {"gender", "age", "women"}, 2},
        {"Loyal drivers paid less", {"veteran", "tenure", "newbies"}, 2},
        {"Rider location discrimination", {"suburb", "downtown", "neighborhood"}, 2}},
       {}},
  };
  return specs;
}

const std::vector<Spec>& unrelated_specs() {
  static const std::vector<Spec> specs = {
      {"Insurance premium renewal", {"policy", "commercial", "deductible"}, 1},
      {"Car wash costs", {"vacuum", "detailing", "interior"}, 1},
      {"Parking ticket citation", {"meter", "fine", "towing"}, 1},
      {"Brake pad maintenance", {"mechanic", "rotor", "squeal"}, 1},
      {"Tax deduction paperwork", {"accountant", "quarterly", "filing"}, 1},
  };
  return specs;
}

std::vector<std::string> vocabulary(const Spec& s) {
  auto v = eval::content_tokens(s.title);
  for (const char* w : s.extra) v.emplace_back(w);
  return v;
}

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

struct PlantedConcern {
  char theme;
  char subtheme;  // 'A'.. by rank, the catch-all letter, or 0 for unrelated concerns
  std::string title;
  std::string description;
  std::string quote;
};

PlantedConcern make_concern(char theme, char subtheme, const Spec& spec, std::size_t k) {
  auto v = vocabulary(spec);
  auto w = [&](std::size_t i) { return v[(k + i) % v.size()]; };
  PlantedConcern c{theme, subtheme, {}, {}, {}};
  c.title = capitalized(w(0)) + " " + w(1) + " " + w(2);
  c.description = "The " + w(2) + " " + w(3) + " and the " + w(4) + " " + w(5) + " of the " +
                  w(0) + " " + w(1) + " were all about the " + w(2) + " again";
  c.quote = "honestly the " + w(0) + " " + w(1) + " and " + w(2) +
            " situation is getting worse every single week";
  return c;
}

std::string subtheme_description(const Spec& spec) {
  auto v = vocabulary(spec);
  std::string d = "Drivers describe " + v[v.size() - 3] + ", " + v[v.size() - 2] + " and " +
                  v[v.size() - 1] + " problems around";
  for (std::size_t i = 0; i + 3 < v.size(); ++i) d += " " + v[i];
  return d;
}

void check_disjoint_vocabulary() {
  for (const auto& t : theme_specs()) {
    std::set<std::string> seen;
    auto add = [&](const Spec& s) {
      for (const auto& w : vocabulary(s)) {
        if (!seen.insert(w).second) {
          throw std::logic_error(std::string("fixture vocabulary overlaps within theme ") + t.code +
                                 ": " + w);
        }
      }
    };
    for (const auto& s : t.ranked) add(s);
    for (const auto& s : t.others) add(s);
  }
}

std::string labels_dict(const std::vector<std::string>& labels) {
  std::string out = "{";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(i + 1) + ": " + labels[i];
  }
  return out + "}";
}

json ranked_json(const ThemeSpec& t) {
  json arr = json::array();
  for (std::size_t r = 0; r < t.ranked.size(); ++r) {
    arr.push_back({{"concern_rank", r + 1},
                   {"concern_title", t.ranked[r].title},
                   {"concern_description", subtheme_description(t.ranked[r])}});
  }
  return arr;
}

std::string ranked_loose(const ThemeSpec& t, std::size_t count) {
  std::string out;
  for (std::size_t r = 0; r < count; ++r) {
    out += "{concern_rank: " + std::to_string(r + 1) + ", concern_title: " + t.ranked[r].title +
           ", concern_description: " + subtheme_description(t.ranked[r]) + "}\n";
  }
  return out;
}

}  // namespace

Fixture build_forum_fixture() {
  check_disjoint_vocabulary();
  Fixture fx;
  auto& planted = fx.planted;

  // Planted concerns, theme by theme.
  std::vector<PlantedConcern> concerns;
  for (const auto& t : theme_specs()) {
    const char catch_all = static_cast<char>('A' + t.ranked.size());
    for (std::size_t r = 0; r < t.ranked.size(); ++r) {
      const char letter = static_cast<char>('A' + r);
      for (std::size_t k = 0; k < t.ranked[r].count; ++k) {
        concerns.push_back(make_concern(t.code, letter, t.ranked[r], k));
      }
      planted.subthemes[t.code][letter] = t.ranked[r].count;
      planted.subtheme_titles[t.code].push_back(t.ranked[r].title);
    }
    for (const auto& o : t.others) {
      concerns.push_back(make_concern(t.code, catch_all, o, 0));
      ++planted.subthemes[t.code][catch_all];
    }
  }
  for (const auto& u : unrelated_specs()) concerns.push_back(make_concern('E', 0, u, 0));
  for (const auto& c : concerns) ++planted.themes[c.theme];
  planted.concerns = concerns.size();

  std::mt19937_64 rng(20240601);
  for (std::size_t i = concerns.size(); i > 1; --i) std::swap(concerns[i - 1], concerns[rng() % i]);

  // Threads: 50 kept, 4 too short, interleaved in the dump.
  constexpr std::size_t kRetained = 50;
  const std::set<std::size_t> no_concern_groups = {2, 6};
  const std::size_t groups = kRetained / kGroupSize;
  std::vector<std::size_t> bearing;
  for (std::size_t g = 0; g < groups; ++g) {
    if (!no_concern_groups.count(g)) bearing.push_back(g);
  }
  // group -> concerns in response order
  std::vector<std::vector<std::size_t>> by_group(groups);
  for (std::size_t i = 0; i < concerns.size(); ++i) by_group[bearing[i % bearing.size()]].push_back(i);

  struct Thread {
    std::string id;
    std::string title;
    std::vector<std::string> body_quotes;
    std::vector<std::string> comment_quotes;
  };
  std::vector<Thread> threads(kRetained);
  for (std::size_t i = 0; i < kRetained; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%03zu", i + 1);
    threads[i].id = id;
    threads[i].title = "Shift notes " + std::to_string(i + 1);
  }
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < by_group[g].size(); ++j) {
      auto& th = threads[g * kGroupSize + j % kGroupSize];
      const auto& quote = concerns[by_group[g][j]].quote;
      (j % 2 == 0 ? th.body_quotes : th.comment_quotes).push_back(quote);
    }
  }

  std::ostringstream subs, comments;
  std::size_t stream_index = 0;
  std::size_t comment_seq = 0;
  auto ts = [&](std::size_t i) { return kEpoch + static_cast<std::int64_t>(i) * 5400; };
  auto emit_comment = [&](const std::string& link, const std::string& body, std::int64_t at) {
    char id[16];
    std::snprintf(id, sizeof id, "c%04zu", ++comment_seq);
    comments << json{{"id", id}, {"link_id", "t3_" + link}, {"body", body}, {"created_utc", at}}.dump()
             << "\n";
  };
  const std::map<std::size_t, json> short_threads = {
      {7, {{"id", "s101"}, {"title", "Quick question"}, {"selftext", "[deleted]"}}},
      {19, {{"id", "s102"}, {"title", "Hi all"}, {"selftext", "thanks"}}},
      {33, {{"id", "s103"}, {"title", "Removed post"}, {"selftext", "[removed]"}}},
      {46, {{"id", "s104"}, {"title", "Test"}, {"selftext", "ok"}}},
  };
  std::size_t next_thread = 0;
  while (next_thread < kRetained || stream_index < 60) {
    if (auto it = short_threads.find(stream_index); it != short_threads.end()) {
      json j = it->second;
      j["created_utc"] = ts(stream_index);
      j["subreddit"] = "uberdrivers";
      subs << j.dump() << "\n";
      ++planted.submissions_total;
      ++planted.threads_short;
      if (stream_index == 46) emit_comment("s104", "same", ts(stream_index) + 60);
      ++stream_index;
      continue;
    }
    if (stream_index == 12) {
      subs << "{\"id\": \"broken\", \"title\": \"truncated line\n";
      ++planted.malformed_submission_lines;
    }
    if (stream_index == 27) {
      subs << json{{"id", "c9999"}, {"link_id", "t3_s001"}, {"body", "misfiled comment"},
                   {"created_utc", ts(27)}}.dump()
           << "\n";
      ++planted.malformed_submission_lines;
    }
    if (next_thread >= kRetained) break;
    const auto& th = threads[next_thread];
    std::string body =
        "Long shift today in the city and I keep wondering how the app decides what I see. "
        "Anyone else running into this lately?";
    for (const auto& q : th.body_quotes) body += " " + capitalized(q) + ".";
    json j = {{"id", th.id}, {"title", th.title}, {"selftext", body}, {"subreddit", "uberdrivers"}};
    // Mixed timestamp encodings as seen in real dumps.
    if (next_thread == 3) j["created_utc"] = static_cast<double>(ts(stream_index));
    else if (next_thread == 4) j["created_utc"] = std::to_string(ts(stream_index));
    else j["created_utc"] = ts(stream_index);
    subs << j.dump() << "\n";
    ++planted.submissions_total;

    // Comments are written newest first; ingest orders them by time.
    std::vector<std::pair<std::int64_t, std::string>> cs;
    std::int64_t at = ts(stream_index) + 60;
    cs.emplace_back(at, "Same here, it has been like this for weeks.");
    for (const auto& q : th.comment_quotes) {
      at += 60;
      cs.emplace_back(at, "For me " + q + ".");
    }
    at += 60;
    cs.emplace_back(at, next_thread % 9 == 0 ? "[deleted]" : "Stay safe out there.");
    for (auto it = cs.rbegin(); it != cs.rend(); ++it) emit_comment(th.id, it->second, it->first);
    if (next_thread == 10) {
      comments << "this line is not json\n";
      ++planted.malformed_comment_lines;
    }
    ++next_thread;
    ++stream_index;
  }
  for (const char* orphan : {"s900", "s901", "s902"}) {
    emit_comment(orphan, "Reply to a thread that is not in this dump.", kEpoch + 10);
    ++planted.orphan_comments;
  }
  planted.threads_retained = kRetained;
  planted.groups = groups;
  planted.no_concern_groups = no_concern_groups.size();

  // Derive group keys exactly as ingest will.
  std::istringstream subs_in(subs.str()), comments_in(comments.str());
  auto parsed_subs = ingest::parse_submissions(subs_in);
  auto parsed_comments = ingest::parse_comments(comments_in);
  auto built = ingest::build_threads(parsed_subs.records, parsed_comments.records);
  auto filtered = ingest::filter_short(built.documents, ingest::kDefaultMinChars);
  auto real_groups = ingest::group_batches(filtered.retained, kGroupSize);
  if (real_groups.size() != groups || filtered.retained.size() != kRetained) {
    throw std::logic_error("fixture threads do not ingest as planned");
  }

  std::ostringstream script;
  auto entry = [&](const std::string& tag, const std::string& text,
                   llm::AttemptResponse::Status status = llm::AttemptResponse::Status::ok) {
    llm::ScriptEntry e;
    e.request_tag = tag;
    e.response_text = text;
    e.status = status;
    script << llm::to_script_line(e) << "\n";
  };

  // Generation, plus the concern ids the pipeline will assign.
  std::vector<std::pair<std::string, std::size_t>> ids;  // concern_id -> concern index
  for (std::size_t g = 0; g < groups; ++g) {
    const auto& key = real_groups[g].group_key;
    const auto tag = "gen:" + key;
    if (g == 2) {
      entry(tag, "No concerns.");
      continue;
    }
    if (g == 6) {
      entry(tag, "\"No concerns\"");
      continue;
    }
    json arr = json::array();
    for (std::size_t j = 0; j < by_group[g].size(); ++j) {
      const auto& c = concerns[by_group[g][j]];
      std::string quote = c.quote;
      if (g == 4 && j == 0) {
        // Paraphrased by one word: should verify as a fuzzy match.
        quote.replace(quote.find("worse"), 5, "worst");
      }
      arr.push_back({{"title", c.title}, {"description", c.description}, {"quote", quote}});
      ids.emplace_back(make_concern_id(key, j + 1), by_group[g][j]);
    }
    if (g == 0) entry(tag, "", llm::AttemptResponse::Status::throttled);
    if (g == 1) {
      entry(tag, "```json\n" + arr.dump(2) + "\n```");
    } else {
      entry(tag, arr.dump(2));
    }
  }
  std::sort(ids.begin(), ids.end());

  // Classification over concerns in id order.
  bool other_spelled = false;
  for (std::size_t chunk = 0; chunk * kClassificationChunk < ids.size(); ++chunk) {
    std::vector<std::string> labels;
    for (std::size_t i = chunk * kClassificationChunk;
         i < std::min(ids.size(), (chunk + 1) * kClassificationChunk); ++i) {
      char t = concerns[ids[i].second].theme;
      if (t == 'E' && !other_spelled) {
        labels.emplace_back("Other");
        other_spelled = true;
      } else {
        labels.emplace_back(1, t);
      }
    }
    const auto tag = "cls:" + std::to_string(chunk);
    if (chunk == 1) {
      auto short_by_one = labels;
      short_by_one.pop_back();
      entry(tag, labels_dict(short_by_one));
    }
    entry(tag, labels_dict(labels));
  }

  // Aggregation and prevalence per theme.
  for (const auto& t : theme_specs()) {
    std::vector<std::size_t> themed;
    for (const auto& [id, idx] : ids) {
      if (concerns[idx].theme == t.code) themed.push_back(idx);
    }
    auto schedule = aggregation_schedule(themed.size(), kAggregationChunk, kSubthemes);
    const auto full = ranked_json(t).dump(2);
    for (std::size_t level = 0; level < schedule.calls_per_level.size(); ++level) {
      for (std::size_t i = 0; i < schedule.calls_per_level[level]; ++i) {
        const auto tag = "agg:" + aggregation_unit_id(t.code, level, i);
        const bool final_level = level + 1 == schedule.calls_per_level.size();
        if (!final_level && t.code == 'A' && i == 0) {
          auto dup = ranked_json(t);
          dup[1]["concern_rank"] = 1;
          entry(tag, dup.dump(2));
        }
        if (!final_level && t.code == 'B' && i == 1) {
          entry(tag, ranked_loose(t, 3));
          continue;
        }
        entry(tag, full);
      }
    }
    for (std::size_t chunk = 0; chunk * kPrevalenceChunk < themed.size(); ++chunk) {
      std::vector<std::string> labels;
      for (std::size_t i = chunk * kPrevalenceChunk;
           i < std::min(themed.size(), (chunk + 1) * kPrevalenceChunk); ++i) {
        labels.emplace_back(1, concerns[themed[i]].subtheme);
      }
      entry("prev:" + std::string(1, t.code) + ":" + std::to_string(chunk), labels_dict(labels));
    }
  }

  std::ostringstream config;
  config << "# Synthetic forum fixture run against the scripted mock backend.\n"
         << "submissions = submissions.ndjson\n"
         << "comments = comments.ndjson\n"
         << "run_dir = run\n"
         << "backend = mock\n"
         << "mock_script = mock_script.ndjson\n"
         << "model = gpt-4-turbo\n"
         << "group_size = " << kGroupSize << "\n"
         << "min_chars = " << ingest::kDefaultMinChars << "\n"
         << "classification_chunk_size = " << kClassificationChunk << "\n"
         << "aggregation_chunk_size = " << kAggregationChunk << "\n"
         << "prevalence_chunk_size = " << kPrevalenceChunk << "\n"
         << "subtheme_count = " << kSubthemes << "\n"
         << "concurrency = 4\n"
         << "backoff_base_ms = 0\n"
         << "topic_min_size = 2\n"
         << "seed = 7\n";

  json planted_json = {{"threads_retained", planted.threads_retained},
                       {"threads_short", planted.threads_short},
                       {"groups", planted.groups},
                       {"no_concern_groups", planted.no_concern_groups},
                       {"orphan_comments", planted.orphan_comments},
                       {"concerns", planted.concerns}};
  for (const auto& [theme, n] : planted.themes) planted_json["themes"][std::string(1, theme)] = n;
  for (const auto& [theme, subs_count] : planted.subthemes) {
    for (const auto& [letter, n] : subs_count) {
      planted_json["subthemes"][std::string(1, theme)][std::string(1, letter)] = n;
    }
  }

  fx.files["submissions.ndjson"] = subs.str();
  fx.files["comments.ndjson"] = comments.str();
  fx.files["mock_script.ndjson"] = script.str();
  fx.files["config.txt"] = config.str();
  fx.files["planted.json"] = planted_json.dump(2) + "\n";
  return fx;
}

void write_fixture(const Fixture& fixture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, contents] : fixture.files) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << contents;
  }
}

}  // namespace qualpipe::fixture
