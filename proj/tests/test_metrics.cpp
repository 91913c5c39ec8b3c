#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/metrics.hpp"

namespace qualpipe::eval {
namespace {

std::vector<std::vector<std::string>> random_ratings(std::mt19937_64& rng, std::size_t n,
                                                     std::size_t r, std::size_t c) {
  std::vector<std::vector<std::string>> items(n);
  for (auto& row : items) {
    for (std::size_t j = 0; j < r; ++j) row.push_back(std::string(1, static_cast<char>('A' + rng() % c)));
  }
  return items;
}

TEST(Kappa, MatchesPairwiseOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 2 + rng() % 19;
    std::size_t r = 2 + rng() % 4;
    std::size_t c = 2 + rng() % 5;
    auto items = random_ratings(rng, n, r, c);
    EXPECT_NEAR(fleiss_kappa(items), oracle::fleiss_kappa_pairs(items), 1e-9);
  }
}

TEST(Kappa, HandComputedFixture) {
  // 10 items, 3 raters. Column counts per item (A,B,C):
  // 3,0,0 / 0,3,0 / 2,1,0 / 1,1,1 / 0,0,3 / 2,0,1 / 0,2,1 / 3,0,0 / 1,2,0 / 0,1,2
  std::vector<std::vector<std::string>> items = {
      {"A", "A", "A"}, {"B", "B", "B"}, {"A", "A", "B"}, {"A", "B", "C"}, {"C", "C", "C"},
      {"A", "A", "C"}, {"B", "B", "C"}, {"A", "A", "A"}, {"A", "B", "B"}, {"B", "C", "C"}};
  // P_i: 1,1,1/3,0,1,1/3,1/3,1,1/3,1/3 -> mean 17/30
  // totals A=12, B=10, C=8 of 30 -> Pe = (144+100+64)/900 = 308/900
  double p_bar = 17.0 / 30.0;
  double pe = 308.0 / 900.0;
  EXPECT_NEAR(fleiss_kappa(items), (p_bar - pe) / (1 - pe), 1e-12);
}

using Ratings = std::vector<std::vector<std::string>>;

TEST(Kappa, PerfectAndDegenerateAgreement) {
  EXPECT_EQ(fleiss_kappa(Ratings{{"A", "A"}, {"B", "B"}, {"C", "C"}}), 1.0);
  EXPECT_EQ(fleiss_kappa(Ratings{{"A", "A", "A"}, {"A", "A", "A"}}), 1.0);
}

TEST(Kappa, UniformRandomLabelsNearZero) {
  std::mt19937_64 rng(12345);
  auto items = random_ratings(rng, 10000, 3, 4);
  EXPECT_LT(std::abs(fleiss_kappa(items)), 0.05);
}

TEST(Kappa, InvariantUnderRelabeling) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto items = random_ratings(rng, 2 + rng() % 15, 2 + rng() % 4, 2 + rng() % 4);
    std::vector<char> perm = {'A', 'B', 'C', 'D', 'E'};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabeled = items;
    for (auto& row : relabeled) {
      for (auto& l : row) l = std::string("cat-") + perm[static_cast<std::size_t>(l[0] - 'A')];
    }
    EXPECT_NEAR(fleiss_kappa(items), fleiss_kappa(relabeled), 1e-12);
  }
}

TEST(Kappa, BoundsAndErrors) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    auto k = fleiss_kappa(random_ratings(rng, 2 + rng() % 10, 2 + rng() % 3, 2 + rng() % 3));
    EXPECT_GE(k, -1.0);
    EXPECT_LE(k, 1.0);
  }
  EXPECT_THROW(fleiss_kappa(Ratings{{"A", "B"}}), PreconditionError);
  EXPECT_THROW(fleiss_kappa(Ratings{{"A"}, {"B"}}), PreconditionError);
  EXPECT_THROW(fleiss_kappa(Ratings{{"A", "B"}, {"A", "B", "C"}}), InputError);
}

TEST(Binomial, ExhaustiveAgainstEnumerationOracle) {
  for (double p : {0.2, 0.5}) {
    for (std::uint64_t n = 1; n <= 200; ++n) {
      for (std::uint64_t s = 0; s <= n; ++s) {
        ASSERT_NEAR(binomial_significance(s, n, p).p_value, oracle::binomial_two_sided(s, n, p), 1e-9)
            << s << "/" << n << " p=" << p;
      }
    }
  }
}

TEST(Binomial, ReferenceCases) {
  auto high = binomial_significance(74, 100, 0.2);
  EXPECT_LT(high.p_value, 1e-6);
  EXPECT_TRUE(high.significant);
  auto at_chance = binomial_significance(20, 100, 0.2);
  EXPECT_GT(at_chance.p_value, 0.95);
  EXPECT_FALSE(at_chance.significant);
  EXPECT_DOUBLE_EQ(binomial_significance(0, 1, 0.5).p_value, 1.0);
  EXPECT_THROW(binomial_significance(0, 0, 0.5), PreconditionError);
  EXPECT_THROW(binomial_significance(3, 2, 0.5), PreconditionError);
  EXPECT_THROW(binomial_significance(1, 2, 1.0), PreconditionError);
}

TEST(Accuracy, IdentityAndSymmetry) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    LabelMap a, b;
    std::size_t n = 1 + rng() % 40;
    for (std::size_t i = 0; i < n; ++i) {
      a["i" + std::to_string(i)] = std::string(1, static_cast<char>('A' + rng() % 4));
      b["i" + std::to_string(i)] = std::string(1, static_cast<char>('A' + rng() % 4));
    }
    EXPECT_EQ(accuracy(a, a), 1.0);
    EXPECT_EQ(accuracy(a, b), accuracy(b, a));
    EXPECT_GE(accuracy(a, b), 0.0);
    EXPECT_LE(accuracy(a, b), 1.0);
  }
  LabelMap gold;
  LabelMap pred;
  for (int i = 0; i < 100; ++i) {
    gold["c" + std::to_string(i)] = "A";
    pred["c" + std::to_string(i)] = i < 74 ? "A" : "B";
  }
  EXPECT_DOUBLE_EQ(accuracy(gold, pred), 0.74);
}

TEST(Accuracy, MismatchedIdsRejected) {
  LabelMap a{{"x", "A"}, {"y", "B"}};
  LabelMap b{{"x", "A"}, {"z", "B"}};
  try {
    accuracy(a, b);
    FAIL();
  } catch (const InputError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("y"), std::string::npos);
    EXPECT_NE(msg.find("z"), std::string::npos);
  }
}

TEST(Majority, StrictMajorityOrCatchAll) {
  std::vector<std::string> aab = {"A", "A", "B"};
  std::vector<std::string> abc = {"A", "B", "C"};
  std::vector<std::string> bbb = {"B", "B", "B"};
  std::vector<std::string> ab = {"A", "B"};
  EXPECT_EQ(majority_label(aab, "Other"), "A");
  EXPECT_EQ(majority_label(abc, "Other"), "Other");
  EXPECT_EQ(majority_label(bbb, "Other"), "B");
  EXPECT_EQ(majority_label(ab, "E"), "E");
}

TEST(Judgments, FactualityAndCompleteness) {
  MatchJudgmentSet f{Direction::candidate_vs_reference, {{"1", true}, {"2", true}, {"3", false}}};
  EXPECT_NEAR(factuality(f), 2.0 / 3.0, 1e-12);
  EXPECT_THROW(completeness(f), PreconditionError);
  MatchJudgmentSet c{Direction::reference_vs_candidate, {{"1", true}, {"2", false}}};
  EXPECT_DOUBLE_EQ(completeness(c), 0.5);
  EXPECT_THROW(factuality(MatchJudgmentSet{}), InputError);
}

std::filesystem::path write_temp(const std::string& name, const std::string& contents) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << contents;
  return p;
}

TEST(Files, JudgmentAndAnnotationCsv) {
  auto j = write_temp("qp_judgments.csv", "item_id,verdict\na,yes\nb,No\nc,YES\n");
  auto set = read_judgments(j, Direction::candidate_vs_reference);
  EXPECT_EQ(yes_count(set), 2u);
  auto dup = write_temp("qp_judgments_dup.csv", "item_id,verdict\na,yes\na,no\n");
  EXPECT_THROW(read_judgments(dup, Direction::candidate_vs_reference), InputError);
  auto bad = write_temp("qp_judgments_bad.csv", "item_id,verdict\na,maybe\n");
  EXPECT_THROW(read_judgments(bad, Direction::candidate_vs_reference), InputError);

  auto ann = write_temp("qp_ann.csv",
                        "item_id,annotator_id,label\n1,x,A\n1,y,A\n1,z,B\n2,x,A\n2,y,B\n2,z,C\n");
  auto labels = read_annotations(ann);
  auto maj = labels.majority("E");
  EXPECT_EQ(maj["1"], "A");
  EXPECT_EQ(maj["2"], "E");
  EXPECT_NO_THROW(fleiss_kappa(labels));
  for (const auto& p : {j, dup, bad, ann}) std::filesystem::remove(p);
}

TEST(Report, MarkdownMarksSignificance) {
  auto m = with_significance({"Classification", "accuracy", 0.74, 100, {}, {}, {}, ""}, 74, 0.2);
  ASSERT_TRUE(m.significant);
  EXPECT_TRUE(*m.significant);
  auto md = render_metrics_markdown({m});
  EXPECT_NE(md.find("| Classification | accuracy | 0.74* | 100 |"), std::string::npos);
}

}  // namespace
}  // namespace qualpipe::eval
