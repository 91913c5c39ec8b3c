#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "oracles.hpp"
#include "qualpipe/prompts.hpp"
#include "qualpipe/stages.hpp"

namespace qualpipe {
namespace {

using llm::AttemptResponse;
using nlohmann::json;

ingest::BatchGroup group_of(std::vector<std::string> bodies) {
  std::vector<ingest::ThreadDocument> docs;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    docs.push_back(ingest::make_document("p" + std::to_string(i), "Title " + std::to_string(i),
                                         bodies[i], {"a comment"},
                                         1546300800 + static_cast<std::int64_t>(i)));
  }
  return ingest::make_group(docs);
}

std::shared_ptr<llm::Backend> replies(std::map<std::string, std::vector<std::string>> by_tag) {
  auto state = std::make_shared<std::map<std::string, std::size_t>>();
  auto mu = std::make_shared<std::mutex>();
  return std::make_shared<llm::CallbackBackend>(
      [by_tag, state, mu](const llm::CompletionRequest& r) {
        std::lock_guard lock(*mu);
        AttemptResponse a;
        auto it = by_tag.find(r.request_tag);
        if (it == by_tag.end()) {
          a.status = AttemptResponse::Status::malformed_output;
          return a;
        }
        auto& i = (*state)[r.request_tag];
        a.text = it->second[std::min(i, it->second.size() - 1)];
        ++i;
        return a;
      });
}

TEST(Prompts, SlotsAreSubstitutedOnce) {
  EXPECT_EQ(render_template("a {{x}} b {{y}}", {{"x", "{{y}}"}, {"y", "2"}}), "a {{y}} b 2");
  EXPECT_THROW(render_template("{{missing}}", {}), InputError);
  EXPECT_THROW(render_template("{{open", {{"open", "x"}}), InputError);
}

TEST(Generation, PromptEmbedsEveryMemberWithSharedKey) {
  auto g = group_of({"one", "two", "three", "four", "five"});
  StudyConfig cfg;
  cfg.topic = "algorithmic platform features";
  auto prompt = render_generation_prompt(g, cfg, PromptTemplates::builtin());
  std::size_t keys = 0;
  for (auto pos = prompt.find(g.group_key); pos != std::string::npos;
       pos = prompt.find(g.group_key, pos + 1)) {
    ++keys;
  }
  EXPECT_EQ(keys, 5u);
  EXPECT_NE(prompt.find("Step 1: Identify mentions in submission bodies, titles, and/or comments "
                        "about concerns that pertain to algorithmic platform features"),
            std::string::npos);
  for (int step = 1; step <= 7; ++step) {
    EXPECT_NE(prompt.find("Step " + std::to_string(step) + ":"), std::string::npos);
  }
  EXPECT_EQ(prompt.find("{{"), std::string::npos);

  auto single = render_generation_prompt(group_of({"only"}), cfg, PromptTemplates::builtin());
  auto data = json::parse(single.substr(single.rfind("\n[") + 1));
  ASSERT_EQ(data.size(), 1u);
  EXPECT_EQ(data[0]["Timestamp"], "2019-01-01T00:00:00Z");
}

TEST(Generation, OversizedGroupsAreSplitIntoSingletons) {
  StudyConfig cfg;
  auto small = group_of({"x"});
  auto big = group_of({std::string(4000, 'a'), std::string(4000, 'b'), "short"});
  cfg.context_budget_tokens = render_generation_prompt(small, cfg, PromptTemplates::builtin()).size() / 4 + 1100;
  EXPECT_THROW(render_generation_prompt(big, cfg, PromptTemplates::builtin()), ContextOverflow);
  auto units = plan_generation_units({small, big}, cfg, PromptTemplates::builtin());
  ASSERT_EQ(units.size(), 4u);
  EXPECT_EQ(units[0], small);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(units[i].members.size(), 1u);
}

TEST(Generation, ParsesArrayAndEnrichesConcerns) {
  auto g = group_of({"the surge zone keeps shifting around me", "b"});
  auto r = parse_generation_output(
      R"([{"title":"Opaque fares","description":"Drivers cannot see how a fare was computed from the distance and time","quote":"surge zone keeps shifting"}])",
      g);
  ASSERT_EQ(r.kind, GenerationParse::Kind::concerns);
  ASSERT_EQ(r.concerns.size(), 1u);
  EXPECT_EQ(r.concerns[0].group_key, g.group_key);
  EXPECT_EQ(r.concerns[0].earliest_timestamp, 1546300800);
  EXPECT_EQ(r.concerns[0].concern_id, make_concern_id(g.group_key, 1));
  EXPECT_EQ(r.description_warnings, 0u);
}

TEST(Generation, NoConcernsVariants) {
  auto g = group_of({"x"});
  for (auto s : {"No concerns", "no concerns", "  NO CONCERNS  \n", "\"No concerns\"", "No concerns.",
                 "```\nNo concerns\n```"}) {
    auto r = parse_generation_output(s, g);
    EXPECT_EQ(r.kind, GenerationParse::Kind::no_concerns) << s;
    EXPECT_TRUE(r.concerns.empty());
  }
}

TEST(Generation, FencedJsonParses) {
  auto g = group_of({"x"});
  auto r = parse_generation_output("```json\n[{\"title\":\"t\",\"description\":\"d\",\"quote\":\"q\"}]\n```", g);
  ASSERT_EQ(r.kind, GenerationParse::Kind::concerns);
  EXPECT_EQ(r.concerns.size(), 1u);
  EXPECT_EQ(r.description_warnings, 1u);
}

TEST(Generation, MalformedOutputs) {
  auto g = group_of({"x"});
  for (auto s : {R"([{"title":"x"}])", R"({"title":"x","description":"d","quote":"q"})",
                 "Here are the concerns I found", R"([{"title":"","description":"d","quote":"q"}])",
                 R"([1, 2])"}) {
    EXPECT_EQ(parse_generation_output(s, g).kind, GenerationParse::Kind::malformed) << s;
  }
}

TEST(Generation, ConcernIdsSortInGroupOrdinalOrder) {
  EXPECT_LT(make_concern_id("abc", 9), make_concern_id("abc", 10));
  EXPECT_LT(make_concern_id("abc", 99), make_concern_id("abc", 100));
  EXPECT_LT(make_concern_id("abc", 100), make_concern_id("abd", 1));
}

TEST(Generation, FailedUnitCarriesCategory) {
  llm::Gateway gw(std::make_shared<llm::CallbackBackend>([](const llm::CompletionRequest&) {
                    AttemptResponse a;
                    a.status = AttemptResponse::Status::content_filtered;
                    return a;
                  }),
                  {}, [](auto) {});
  auto r = run_generation_unit(gw, group_of({"x"}), StudyConfig{}, PromptTemplates::builtin());
  ASSERT_TRUE(r.failure);
  EXPECT_EQ(r.failure->category, llm::FailureCategory::content_filtered);
  EXPECT_EQ(r.failure->attempts, 1);
}

oracle::Quote as_oracle(QuoteCheck q) {
  switch (q) {
    case QuoteCheck::verbatim: return oracle::Quote::verbatim;
    case QuoteCheck::fuzzy: return oracle::Quote::fuzzy;
    default: return oracle::Quote::absent;
  }
}

TEST(Quote, KnownCases) {
  auto g = group_of({"Honestly, the surge zone keeps SHIFTING every night!", "unrelated"});
  EXPECT_EQ(verify_quote("the surge zone keeps shifting", g), QuoteCheck::verbatim);
  EXPECT_EQ(verify_quote("surge   zone, keeps shifting!!", g), QuoteCheck::verbatim);
  EXPECT_EQ(verify_quote("the surge zone keeps moving every night", g), QuoteCheck::fuzzy);
  EXPECT_EQ(verify_quote("nothing like this appears", g), QuoteCheck::absent);
  EXPECT_EQ(verify_quote("   ", g), QuoteCheck::absent);
}

TEST(Quote, MatchesWindowScanOracle) {
  std::mt19937_64 rng(99);
  const std::vector<std::string> vocab = {"fare", "surge", "zone", "rider", "app", "pay",
                                          "trip", "map", "tip", "queue"};
  auto sentence = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + vocab[rng() % vocab.size()];
    return s;
  };
  std::map<oracle::Quote, int> seen;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::string> bodies = {sentence(3 + rng() % 20), sentence(3 + rng() % 20)};
    auto g = group_of(bodies);
    std::string quote;
    if (trial % 3 == 0) {
      // A slice of a member, sometimes with one word replaced.
      auto words = oracle::words(g.members[0].text);
      std::size_t len = 2 + rng() % 6;
      std::size_t start = rng() % (words.size() > len ? words.size() - len : 1);
      for (std::size_t i = start; i < std::min(words.size(), start + len); ++i) {
        quote += words[i] + " ";
      }
      if (rng() % 2) quote += vocab[rng() % vocab.size()];
    } else {
      quote = sentence(1 + rng() % 8);
    }
    std::vector<std::string> texts;
    for (const auto& m : g.members) texts.push_back(m.text);
    auto expected = oracle::quote_check(quote, texts);
    ++seen[expected];
    EXPECT_EQ(as_oracle(verify_quote(quote, g)), expected) << quote;
  }
  EXPECT_GT(seen[oracle::Quote::verbatim], 0);
  EXPECT_GT(seen[oracle::Quote::fuzzy], 0);
  EXPECT_GT(seen[oracle::Quote::absent], 0);
}

TEST(Labels, SerialDictionaries) {
  auto p = parse_serial_labels("{1: A, 2: \"B\", '3': Other}");
  ASSERT_TRUE(p);
  EXPECT_EQ(p->size(), 3u);
  EXPECT_EQ((*p)[2], (std::pair<int, std::string>{3, "Other"}));
  EXPECT_TRUE(has_parity(*p, 3));
  EXPECT_FALSE(has_parity(*p, 4));
  auto json_form = parse_serial_labels("```json\n{\"1\": \"C\",\n \"2\": \"D\"}\n```");
  ASSERT_TRUE(json_form);
  EXPECT_TRUE(has_parity(*json_form, 2));
  EXPECT_FALSE(parse_serial_labels("I could not classify these"));
  auto dup = parse_serial_labels("{1: A, 1: B}");
  ASSERT_TRUE(dup);
  EXPECT_FALSE(has_parity(*dup, 2));
  auto gap = parse_serial_labels("{1: A, 3: B}");
  EXPECT_FALSE(has_parity(*gap, 2));
}

TEST(Labels, Normalization) {
  bool unknown = false;
  EXPECT_EQ(normalize_label("b", 'E', 'E', unknown), 'B');
  EXPECT_FALSE(unknown);
  EXPECT_EQ(normalize_label("C. Safety", 'E', 'E', unknown), 'C');
  EXPECT_FALSE(unknown);
  EXPECT_EQ(normalize_label("Other", 'E', 'E', unknown), 'E');
  EXPECT_FALSE(unknown);
  EXPECT_EQ(normalize_label("Z", 'E', 'E', unknown), 'E');
  EXPECT_TRUE(unknown);
  EXPECT_EQ(normalize_label("Unclear", 'E', 'E', unknown), 'E');
  EXPECT_TRUE(unknown);
}

std::vector<Concern> concerns(std::size_t n) {
  std::vector<Concern> out;
  for (std::size_t i = 0; i < n; ++i) {
    Concern c;
    c.concern_id = make_concern_id("g", i + 1);
    c.title = "t" + std::to_string(i);
    c.description = "d";
    c.quote = "q";
    out.push_back(c);
  }
  return out;
}

std::string labels_for(std::size_t n, char letter = 'A') {
  std::string s = "{";
  for (std::size_t i = 1; i <= n; ++i) s += (i > 1 ? ", " : "") + std::to_string(i) + ": " + letter;
  return s + "}";
}

TEST(Classification, ParityRetryThenSuccess) {
  llm::Gateway gw(replies({{"cls:0", {labels_for(3), labels_for(4, 'B')}}}), {}, [](auto) {});
  auto cs = concerns(4);
  StudyConfig cfg;
  auto r = classify_chunk(gw, 0, cs, cfg, PromptTemplates::builtin());
  ASSERT_FALSE(r.failure);
  ASSERT_EQ(r.assignments.size(), 4u);
  EXPECT_EQ(r.assignments[3].theme, 'B');
  EXPECT_EQ(gw.backend_calls(), 2u);
}

TEST(Classification, PersistentParityViolationFailsWholeChunk) {
  llm::Gateway gw(replies({{"cls:0", {labels_for(3)}}}), {}, [](auto) {});
  auto cs = concerns(4);
  StudyConfig cfg;
  cfg.parity_retries = 2;
  auto r = classify_chunk(gw, 0, cs, cfg, PromptTemplates::builtin());
  ASSERT_TRUE(r.failure);
  EXPECT_TRUE(r.assignments.empty());
  EXPECT_EQ(r.failure->concern_ids.size(), 4u);
  EXPECT_EQ(r.failure->failure.category, llm::FailureCategory::malformed_output);
  EXPECT_EQ(gw.backend_calls(), 3u);
}

TEST(Classification, PromptListsCategoriesAndItems) {
  auto cs = concerns(2);
  auto p = render_classification_prompt(cs, ThemeTaxonomy::builtin(), PromptTemplates::builtin());
  EXPECT_NE(p.find("1. t0: d"), std::string::npos);
  EXPECT_NE(p.find("2. t1: d"), std::string::npos);
  auto taxonomy = ThemeTaxonomy::builtin();
  for (const auto& c : taxonomy.categories()) {
    EXPECT_NE(p.find(std::string(1, c.code) + ". " + c.name), std::string::npos);
  }
}

// Random parity faults, throttles and filter rejections: every concern ends
// up either assigned or inside a failed chunk, never both, never lost.
TEST(Classification, ConservationUnderRandomFaults) {
  std::mt19937_64 rng(2024);
  for (int run = 0; run < 100; ++run) {
    std::size_t n = 1 + rng() % 120;
    auto cs = concerns(n);
    StudyConfig cfg;
    cfg.classification_chunk_size = 1 + rng() % 25;
    cfg.parity_retries = static_cast<int>(rng() % 3);
    auto fault_seed = rng();
    auto rng_mu = std::make_shared<std::mutex>();
    auto local = std::make_shared<std::mt19937_64>(fault_seed);
    llm::RetryPolicy policy;
    policy.max_attempts = 2;
    llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&, local, rng_mu](
                                                               const llm::CompletionRequest& req) {
                      std::lock_guard lock(*rng_mu);
                      std::size_t chunk = std::stoul(req.request_tag.substr(4));
                      std::size_t items = std::min(cfg.classification_chunk_size,
                                                   n - chunk * cfg.classification_chunk_size);
                      AttemptResponse a;
                      switch ((*local)() % 6) {
                        case 0: a.text = labels_for(items + 1); break;
                        case 1: a.text = items > 1 ? labels_for(items - 1) : "{}"; break;
                        case 2: a.status = AttemptResponse::Status::throttled; break;
                        case 3: a.status = AttemptResponse::Status::content_filtered; break;
                        default: a.text = labels_for(items, 'C');
                      }
                      return a;
                    }),
                    policy, [](auto) {});
    auto r = run_classification(gw, cs, cfg, PromptTemplates::builtin());
    std::set<std::string> assigned, failed;
    for (const auto& a : r.assignments) EXPECT_TRUE(assigned.insert(a.concern_id).second);
    for (const auto& f : r.failures) {
      for (const auto& id : f.concern_ids) EXPECT_TRUE(failed.insert(id).second);
    }
    EXPECT_EQ(assigned.size() + failed.size(), n);
    for (const auto& id : failed) EXPECT_EQ(assigned.count(id), 0u);
  }
}

TEST(Aggregation, ScheduleShapes) {
  auto s = aggregation_schedule(20, 12, 5);
  EXPECT_EQ(s.calls_per_level, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(aggregation_schedule(10, 12, 5).calls_per_level, (std::vector<std::size_t>{1}));
  auto big = aggregation_schedule(24721, 400, 5);
  EXPECT_EQ(big.calls_per_level, (std::vector<std::size_t>{62, 1}));
  EXPECT_EQ(big.total_calls(), 63u);
  EXPECT_EQ(aggregation_schedule(1000, 10, 5).calls_per_level,
            (std::vector<std::size_t>{100, 50, 25, 13, 7, 4, 2, 1}));
  EXPECT_TRUE(aggregation_schedule(0, 12, 5).calls_per_level.empty());
  EXPECT_THROW(aggregation_schedule(10, 9, 5), PreconditionError);
}

TEST(Aggregation, ScheduleTerminatesProperty) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 2000; ++i) {
    std::size_t n = 1 + rng() % 8;
    std::size_t budget = 2 * n + rng() % 50;
    std::size_t items = 1 + rng() % 100000;
    auto s = aggregation_schedule(items, budget, n);
    ASSERT_FALSE(s.calls_per_level.empty());
    EXPECT_EQ(s.calls_per_level.back(), 1u);
    EXPECT_EQ(s.calls_per_level.front(), chunk_count(items, budget));
    for (std::size_t l = 1; l < s.calls_per_level.size(); ++l) {
      EXPECT_LT(s.calls_per_level[l], s.calls_per_level[l - 1]);
      EXPECT_EQ(s.calls_per_level[l], chunk_count(s.calls_per_level[l - 1] * n, budget));
    }
  }
}

TEST(Aggregation, ParsesJsonAndLooseFormats) {
  auto j = parse_subtheme_list(
      R"([{"concern_rank":2,"concern_title":"B","concern_description":"bb"},{"concern_rank":1,"concern_title":"A","concern_description":"aa"}])");
  ASSERT_TRUE(j);
  EXPECT_EQ(j->size(), 2u);
  auto loose = parse_subtheme_list(
      "{concern_rank: 1, concern_title: Opaque fares, concern_description: Fares hidden, "
      "even after trips}\n{concern_rank: 2, concern_title: Surge, concern_description: zones}");
  ASSERT_TRUE(loose);
  ASSERT_EQ(loose->size(), 2u);
  EXPECT_EQ((*loose)[0].title, "Opaque fares");
  EXPECT_EQ((*loose)[0].description, "Fares hidden, even after trips");
  auto wrapped = parse_subtheme_list(R"({"concerns":[{"rank":"1","title":"X","description":"x"}]})");
  ASSERT_TRUE(wrapped);
  EXPECT_EQ((*wrapped)[0].rank, 1);
  EXPECT_FALSE(parse_subtheme_list("no list here"));
}

TEST(Aggregation, Validation) {
  std::vector<SubTheme> ok = {{1, "a", ""}, {2, "b", ""}, {3, "c", ""}, {4, "d", ""}, {5, "e", ""}};
  EXPECT_EQ(validate_subthemes(ok, 5), "");
  auto dup_rank = ok;
  dup_rank[1].rank = 1;
  EXPECT_NE(validate_subthemes(dup_rank, 5), "");
  auto dup_title = ok;
  dup_title[4].title = "A ";
  EXPECT_NE(validate_subthemes(dup_title, 5), "");
  std::vector<SubTheme> three(ok.begin(), ok.begin() + 3);
  EXPECT_NE(validate_subthemes(three, 5), "");
  EXPECT_EQ(validate_subthemes(three, 5, false), "");
}

std::string ranked(std::size_t n, const std::string& prefix) {
  json arr = json::array();
  for (std::size_t r = 1; r <= n; ++r) {
    arr.push_back({{"concern_rank", r},
                   {"concern_title", prefix + std::to_string(r)},
                   {"concern_description", "desc"}});
  }
  return arr.dump();
}

TEST(Aggregation, MapReduceFollowsSchedule) {
  StudyConfig cfg;
  cfg.aggregation_chunk_size = 12;
  llm::Gateway gw(replies({{"agg:A:L0:0", {ranked(5, "m0-")}},
                           {"agg:A:L0:1", {ranked(4, "m1-")}},
                           {"agg:A:L1:0", {ranked(5, "final-")}}}),
                  {}, [](auto) {});
  auto cs = concerns(20);
  auto r = run_aggregation(gw, 'A', cs, cfg, PromptTemplates::builtin());
  ASSERT_FALSE(r.failure);
  ASSERT_TRUE(r.subthemes);
  EXPECT_EQ(r.subthemes->entries.front().title, "final-1");
  EXPECT_EQ(r.calls, 3u);
}

TEST(Aggregation, InvalidFinalListFails) {
  StudyConfig cfg;
  cfg.parity_retries = 1;
  llm::Gateway gw(replies({{"agg:B:L0:0", {ranked(4, "x")}}}), {}, [](auto) {});
  auto cs = concerns(8);
  auto r = run_aggregation(gw, 'B', cs, cfg, PromptTemplates::builtin());
  ASSERT_TRUE(r.failure);
  EXPECT_EQ(r.failure->category, llm::FailureCategory::malformed_output);
  EXPECT_EQ(r.calls, 2u);
}

TEST(Prevalence, LettersFollowRankWithCatchAll) {
  SubThemeSet set{'A', {{1, "one", "d"}, {2, "two", "d"}, {3, "three", "d"}, {4, "four", "d"},
                        {5, "five", "d"}}};
  EXPECT_EQ(set.catch_all(), 'F');
  llm::Gateway gw(replies({{"prev:A:0", {"{1: A, 2: F, 3: E, 4: Other, 5: G}"}}}), {},
                  [](auto) {});
  auto cs = concerns(5);
  StudyConfig cfg;
  auto r = run_prevalence(gw, cs, set, cfg, PromptTemplates::builtin());
  ASSERT_TRUE(r.failures.empty());
  std::string letters;
  for (const auto& a : r.assignments) letters += a.subtheme;
  EXPECT_EQ(letters, "AFEFF");
  EXPECT_EQ(r.unknown_labels, 1u);
  auto p = render_prevalence_prompt(cs, set, PromptTemplates::builtin());
  EXPECT_NE(p.find("A: one - d"), std::string::npos);
}

}  // namespace
}  // namespace qualpipe
