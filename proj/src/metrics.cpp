#include "qualpipe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "qualpipe/checkpoint.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe::eval {

namespace {

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path,
                                                    std::size_t columns) {
  if (!std::filesystem::exists(path)) throw InputError("input not found: " + path.string());
  auto rows = text::parse_csv(read_file(path));
  if (rows.empty()) throw InputError(path.string() + ": missing header");
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto& r = rows[i];
    if (r.size() == 1 && text::trim(r[0]).empty()) continue;
    if (r.size() < columns) {
      throw InputError(path.string() + " record " + std::to_string(i + 1) + ": expected " +
                       std::to_string(columns) + " fields");
    }
    for (auto& f : r) f = text::trim(f);
    out.push_back(std::move(r));
  }
  return out;
}

double ratio(const MatchJudgmentSet& set, Direction expected, const char* metric) {
  if (set.direction != expected) {
    throw PreconditionError(std::string(metric) + " needs judgments in the " +
                            (expected == Direction::candidate_vs_reference
                                 ? "candidate-vs-reference"
                                 : "reference-vs-candidate") +
                            " direction");
  }
  if (set.judgments.empty()) throw InputError(std::string(metric) + " is undefined on no judgments");
  return static_cast<double>(yes_count(set)) / static_cast<double>(set.judgments.size());
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

MatchJudgmentSet read_judgments(const std::filesystem::path& path, Direction direction) {
  MatchJudgmentSet set;
  set.direction = direction;
  std::set<std::string> seen;
  for (const auto& r : read_csv_rows(path, 2)) {
    if (!seen.insert(r[0]).second) throw InputError(path.string() + ": duplicate item_id " + r[0]);
    auto v = text::to_lower(r[1]);
    if (v != "yes" && v != "no") {
      throw InputError(path.string() + ": verdict for " + r[0] + " must be yes or no");
    }
    set.judgments.push_back({r[0], v == "yes"});
  }
  return set;
}

std::size_t yes_count(const MatchJudgmentSet& set) {
  return static_cast<std::size_t>(
      std::count_if(set.judgments.begin(), set.judgments.end(), [](const Judgment& j) { return j.yes; }));
}

double factuality(const MatchJudgmentSet& set) {
  return ratio(set, Direction::candidate_vs_reference, "factuality");
}

double completeness(const MatchJudgmentSet& set) {
  return ratio(set, Direction::reference_vs_candidate, "completeness");
}

std::size_t match_count(const LabelMap& gold, const LabelMap& predicted) {
  std::vector<std::string> only_gold, only_pred;
  for (const auto& [id, _] : gold) {
    if (!predicted.count(id)) only_gold.push_back(id);
  }
  for (const auto& [id, _] : predicted) {
    if (!gold.count(id)) only_pred.push_back(id);
  }
  if (!only_gold.empty() || !only_pred.empty()) {
    std::string msg = "label sets cover different items";
    if (!only_gold.empty()) msg += "; missing from predictions: " + text::join(only_gold, ", ");
    if (!only_pred.empty()) msg += "; missing from gold: " + text::join(only_pred, ", ");
    throw InputError(msg);
  }
  std::size_t matches = 0;
  for (const auto& [id, label] : gold) {
    if (predicted.at(id) == label) ++matches;
  }
  return matches;
}

double accuracy(const LabelMap& gold, const LabelMap& predicted) {
  auto matches = match_count(gold, predicted);
  if (gold.empty()) throw InputError("accuracy is undefined on no items");
  return static_cast<double>(matches) / static_cast<double>(gold.size());
}

std::string majority_label(std::span<const std::string> labels, std::string_view catch_all) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  for (const auto& [label, n] : counts) {
    if (2 * n > labels.size()) return label;
  }
  return std::string(catch_all);
}

std::vector<std::vector<std::string>> LabelAnnotationSet::rows() const {
  std::vector<std::vector<std::string>> out;
  for (const auto& [item, by_annotator] : items) {
    std::vector<std::string> labels;
    for (const auto& [annotator, label] : by_annotator) labels.push_back(label);
    out.push_back(std::move(labels));
  }
  return out;
}

LabelMap LabelAnnotationSet::majority(std::string_view catch_all) const {
  LabelMap out;
  for (const auto& [item, by_annotator] : items) {
    std::vector<std::string> labels;
    for (const auto& [annotator, label] : by_annotator) labels.push_back(label);
    out[item] = majority_label(labels, catch_all);
  }
  return out;
}

LabelAnnotationSet read_annotations(const std::filesystem::path& path) {
  LabelAnnotationSet set;
  for (const auto& r : read_csv_rows(path, 3)) {
    auto [it, inserted] = set.items[r[0]].emplace(r[1], r[2]);
    if (!inserted) {
      throw InputError(path.string() + ": annotator " + r[1] + " labels item " + r[0] + " twice");
    }
  }
  return set;
}

LabelMap read_label_map(const std::filesystem::path& path) {
  LabelMap out;
  for (const auto& r : read_csv_rows(path, 2)) {
    if (!out.emplace(r[0], r[1]).second) {
      throw InputError(path.string() + ": duplicate item_id " + r[0]);
    }
  }
  return out;
}

double fleiss_kappa(const std::vector<std::vector<std::string>>& items) {
  if (items.size() < 2) throw PreconditionError("fleiss_kappa needs at least two items");
  const std::size_t r = items.front().size();
  if (r < 2) throw PreconditionError("fleiss_kappa needs at least two ratings per item");
  std::map<std::string, std::size_t> totals;
  double sum_pi = 0;
  for (const auto& item : items) {
    if (item.size() != r) throw InputError("every item must carry the same number of ratings");
    std::map<std::string, std::size_t> counts;
    for (const auto& l : item) ++counts[l];
    double agree = 0;
    for (const auto& [label, n] : counts) {
      agree += static_cast<double>(n) * static_cast<double>(n);
      totals[label] += n;
    }
    sum_pi += (agree - static_cast<double>(r)) / static_cast<double>(r * (r - 1));
  }
  const double n_items = static_cast<double>(items.size());
  const double p_bar = sum_pi / n_items;
  double pe = 0;
  for (const auto& [label, n] : totals) {
    double p = static_cast<double>(n) / (n_items * static_cast<double>(r));
    pe += p * p;
  }
  if (pe >= 1.0) return 1.0;
  return (p_bar - pe) / (1.0 - pe);
}

double fleiss_kappa(const LabelAnnotationSet& set) { return fleiss_kappa(set.rows()); }

BinomialTest binomial_significance(std::uint64_t successes, std::uint64_t trials, double chance_p,
                                   double alpha) {
  if (trials == 0) throw PreconditionError("binomial test needs at least one trial");
  if (successes > trials) throw PreconditionError("successes exceed trials");
  if (!(chance_p > 0.0 && chance_p < 1.0)) throw PreconditionError("chance probability must lie in (0, 1)");

  const double n = static_cast<double>(trials);
  const double log_p = std::log(chance_p);
  const double log_q = std::log1p(-chance_p);
  auto log_pmf = [&](std::uint64_t k) {
    double kk = static_cast<double>(k);
    return std::lgamma(n + 1) - std::lgamma(kk + 1) - std::lgamma(n - kk + 1) + kk * log_p +
           (n - kk) * log_q;
  };
  const double observed = log_pmf(successes);
  // Relative slack so outcomes equal to the observed one are not lost to rounding.
  const double cutoff = observed + std::log1p(1e-7);
  double p = 0;
  for (std::uint64_t k = 0; k <= trials; ++k) {
    double lp = log_pmf(k);
    if (lp <= cutoff) p += std::exp(lp);
  }
  BinomialTest out;
  out.p_value = std::min(1.0, p);
  out.significant = out.p_value < alpha;
  return out;
}

nlohmann::json to_json(const MetricReport& m) {
  nlohmann::json j = {{"phase", m.phase},
                      {"metric", m.name},
                      {"value", m.value},
                      {"sample_size", m.sample_size}};
  if (m.chance_p) j["chance_p"] = *m.chance_p;
  if (m.p_value) j["p_value"] = *m.p_value;
  if (m.significant) j["significant"] = *m.significant;
  if (!m.note.empty()) j["note"] = m.note;
  return j;
}

MetricReport with_significance(MetricReport m, std::uint64_t successes, double chance_p) {
  auto test = binomial_significance(successes, m.sample_size, chance_p);
  m.chance_p = chance_p;
  m.p_value = test.p_value;
  m.significant = test.significant;
  return m;
}

std::string render_metrics_markdown(const std::vector<MetricReport>& metrics) {
  std::string out = "| Phase | Metric | Result | Sample size | p-value |\n|---|---|---|---|---|\n";
  for (const auto& m : metrics) {
    std::string value = fixed(m.value, 2);
    if (m.significant && *m.significant) value += "*";
    std::string p = m.p_value ? (*m.p_value < 1e-4 ? "<0.0001" : fixed(*m.p_value, 4)) : "";
    out += "| " + m.phase + " | " + m.name + " | " + value + " | " +
           text::with_thousands(m.sample_size) + " | " + p + " |\n";
  }
  out += "\n\\* significantly different from chance (two-sided exact binomial test, p < 0.05)\n";
  return out;
}

}  // namespace qualpipe::eval
