#include "qualpipe/topics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "qualpipe/artifacts.hpp"
#include "qualpipe/checkpoint.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe::eval {

using nlohmann::json;

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",       "about",  "above", "after", "again",  "against", "all",   "am",     "an",
      "and",     "any",    "are",   "as",    "at",     "be",      "been",  "before", "being",
      "below",   "between", "both", "but",   "by",     "can",     "could", "did",    "do",
      "does",    "doing",  "don",   "down",  "during", "each",    "few",   "for",    "from",
      "further", "had",    "has",   "have",  "having", "he",      "her",   "here",   "hers",
      "herself", "him",    "himself", "his", "how",    "i",       "if",    "in",     "into",
      "is",      "it",     "its",   "itself", "just",  "me",      "more",  "most",   "my",
      "myself",  "no",     "nor",   "not",   "now",    "of",      "off",   "on",     "once",
      "only",    "or",     "other", "our",   "ours",   "ourselves", "out", "over",   "own",
      "same",    "she",    "should", "so",   "some",   "such",    "than",  "that",   "the",
      "their",   "theirs", "them",  "themselves", "then", "there", "these", "they",  "this",
      "those",   "through", "to",   "too",   "under",  "until",   "up",    "very",   "was",
      "we",      "were",   "what",  "when",  "where",  "which",   "while", "who",    "whom",
      "why",     "will",   "with",  "would", "you",    "your",    "yours", "yourself",
      "yourselves", "s",   "t",     "ll",    "re",     "ve",      "d",     "m"};
  return words;
}

double norm(const TermVector& v) {
  double s = 0;
  for (const auto& [t, w] : v) s += w * w;
  return std::sqrt(s);
}

double dot(const TermVector& a, const TermVector& b) {
  const TermVector& small = a.size() <= b.size() ? a : b;
  const TermVector& large = a.size() <= b.size() ? b : a;
  double s = 0;
  for (const auto& [t, w] : small) {
    if (auto it = large.find(t); it != large.end()) s += w * it->second;
  }
  return s;
}

struct Cluster {
  TermVector sum;
  double sum_norm = 0;
  std::vector<std::size_t> members;
};

}  // namespace

std::vector<std::string> content_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !stopwords().count(cur)) tokens.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

TermVector term_vector(std::string_view text, int ngram_min, int ngram_max) {
  if (ngram_min < 1 || ngram_max < ngram_min) throw PreconditionError("invalid n-gram range");
  auto tokens = content_tokens(text);
  TermVector v;
  for (int n = ngram_min; n <= ngram_max; ++n) {
    auto len = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (std::size_t j = 1; j < len; ++j) gram += " " + tokens[i + j];
      v[gram] += 1.0;
    }
  }
  return v;
}

double cosine(const TermVector& a, const TermVector& b) {
  double na = norm(a), nb = norm(b);
  if (na == 0 || nb == 0) return 0;
  return dot(a, b) / (na * nb);
}

TopicModelOutput extract_topics(const std::vector<std::string>& corpus, const TopicParams& params) {
  if (corpus.empty()) throw InputError("topic extraction needs a non-empty corpus");
  std::vector<TermVector> vectors;
  vectors.reserve(corpus.size());
  bool any = false;
  for (const auto& doc : corpus) {
    vectors.push_back(term_vector(doc, params.ngram_min, params.ngram_max));
    any = any || !vectors.back().empty();
  }
  if (!any) throw InputError("topic extraction found no content terms in the corpus");

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(params.seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }

  std::vector<Cluster> clusters;
  for (auto idx : order) {
    const auto& v = vectors[idx];
    if (v.empty()) continue;
    const double nv = norm(v);
    std::size_t best = clusters.size();
    double best_sim = -1;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      double sim = dot(v, clusters[c].sum) / (nv * clusters[c].sum_norm);
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    if (best == clusters.size() || best_sim < params.similarity_threshold) {
      clusters.push_back({});
      best = clusters.size() - 1;
    }
    auto& cl = clusters[best];
    for (const auto& [t, w] : v) cl.sum[t] += w;
    cl.sum_norm = norm(cl.sum);
    cl.members.push_back(idx);
  }

  std::vector<Cluster> kept;
  for (auto& c : clusters) {
    if (c.members.size() >= std::max<std::size_t>(params.min_topic_size, 1)) {
      std::sort(c.members.begin(), c.members.end());
      kept.push_back(std::move(c));
    }
  }
  std::sort(kept.begin(), kept.end(), [](const Cluster& a, const Cluster& b) {
    if (a.members.size() != b.members.size()) return a.members.size() > b.members.size();
    return a.members.front() < b.members.front();
  });

  TopicModelOutput out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    Topic t;
    t.topic_id = "t" + std::to_string(i + 1);
    t.frequency = kept[i].members.size();
    double total = 0;
    for (const auto& [term, w] : kept[i].sum) total += w;
    for (const auto& [term, w] : kept[i].sum) t.terms[term] = w / total;
    t.members = std::move(kept[i].members);
    out.topics.push_back(std::move(t));
  }
  return out;
}

json to_json(const TopicModelOutput& model) {
  json topics = json::array();
  for (const auto& t : model.topics) {
    topics.push_back({{"topic_id", t.topic_id},
                      {"frequency", t.frequency},
                      {"terms", t.terms},
                      {"members", t.members}});
  }
  return {{"topics", std::move(topics)}};
}

TopicModelOutput topics_from_json(const json& j) {
  TopicModelOutput out;
  for (const auto& t : j.at("topics")) {
    Topic topic;
    topic.topic_id = t.at("topic_id").get<std::string>();
    topic.frequency = t.at("frequency").get<std::size_t>();
    double total = 0;
    for (const auto& [term, w] : t.at("terms").items()) {
      double weight = w.get<double>();
      if (weight < 0) throw InputError("topic " + topic.topic_id + " has a negative term weight");
      topic.terms[term] = weight;
      total += weight;
    }
    if (total > 0) {
      for (auto& [term, w] : topic.terms) w /= total;
    }
    if (t.contains("members")) topic.members = t["members"].get<std::vector<std::size_t>>();
    out.topics.push_back(std::move(topic));
  }
  std::stable_sort(out.topics.begin(), out.topics.end(),
                   [](const Topic& a, const Topic& b) { return a.frequency > b.frequency; });
  return out;
}

TopicModelOutput read_topics(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("input not found: " + path.string());
  try {
    return topics_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

TopicMatch most_similar_topic(std::string_view text, const TopicModelOutput& model, int ngram_min,
                              int ngram_max) {
  if (model.topics.empty()) throw PreconditionError("most_similar_topic needs at least one topic");
  auto v = term_vector(text, ngram_min, ngram_max);
  TopicMatch best{model.topics[0].topic_id, 1, 0.0, false};
  double best_sim = -1;
  for (std::size_t i = 0; i < model.topics.size(); ++i) {
    double sim = cosine(v, model.topics[i].terms);
    if (sim > best_sim + 1e-12) {
      best_sim = sim;
      best = {model.topics[i].topic_id, i + 1, sim, false};
    }
  }
  if (best_sim <= 0) best = {model.topics[0].topic_id, 1, 0.0, true};
  return best;
}

double distinctness(std::span<const std::string> assigned) {
  if (assigned.empty()) throw PreconditionError("distinctness needs at least one sub-theme");
  std::set<std::string> unique(assigned.begin(), assigned.end());
  return static_cast<double>(unique.size()) / static_cast<double>(assigned.size());
}

CoverageResult coverage_k(std::span<const std::string> assigned, const TopicModelOutput& model,
                          std::size_t k) {
  if (k == 0) throw PreconditionError("coverage needs k >= 1");
  if (model.topics.empty()) throw PreconditionError("coverage is undefined without topics");
  if (assigned.empty()) throw PreconditionError("coverage needs at least one sub-theme");
  const std::size_t window = assigned.size() * k;
  CoverageResult out;
  out.window_truncated = model.topics.size() < window;
  std::set<std::string> top;
  for (std::size_t i = 0; i < std::min(window, model.topics.size()); ++i) {
    top.insert(model.topics[i].topic_id);
  }
  std::set<std::string> unique(assigned.begin(), assigned.end());
  std::size_t hit = 0;
  for (const auto& id : unique) hit += top.count(id);
  out.covered = hit;
  out.unique = unique.size();
  out.value = static_cast<double>(hit) / static_cast<double>(unique.size());
  return out;
}

AggregationEvaluation evaluate_aggregation(const RunPaths& paths, const ThemeTaxonomy& taxonomy,
                                           const TopicParams& params,
                                           const std::optional<std::filesystem::path>& topics_dir) {
  const std::pair<Stage, std::filesystem::path> required[] = {
      {Stage::generation, paths.concerns()},
      {Stage::classification, paths.theme_assignments()},
      {Stage::aggregation, paths.subthemes()}};
  for (const auto& [stage, file] : required) {
    if (!std::filesystem::exists(file)) {
      throw StateError("aggregation evaluation needs the " + std::string(stage_name(stage)) +
                       " stage output (" + file.filename().string() + "); run `" +
                       std::string(stage_command(stage)) + "` first");
    }
  }
  auto concerns = read_concerns(paths.concerns());
  std::map<std::string, const Concern*> by_id;
  for (const auto& c : concerns) by_id[c.concern_id] = &c;
  std::map<char, std::vector<std::string>> corpora;
  for (const auto& a : read_theme_assignments(paths.theme_assignments())) {
    if (a.theme == taxonomy.catch_all()) continue;
    if (auto it = by_id.find(a.concern_id); it != by_id.end()) {
      corpora[a.theme].push_back(it->second->title + " " + it->second->description);
    }
  }
  auto subthemes = read_subthemes(paths.subthemes());

  AggregationEvaluation eval;
  std::size_t pooled_unique = 0, pooled_n = 0, pooled_hit1 = 0, pooled_hit2 = 0;
  double sum_d = 0, sum_c1 = 0, sum_c2 = 0;
  std::size_t scored = 0;
  for (const auto& [theme, set] : subthemes.themes) {
    ThemeAlignment ta;
    ta.theme = theme;
    const auto& corpus = corpora[theme];
    ta.corpus_size = corpus.size();
    try {
      TopicModelOutput model;
      if (topics_dir) {
        model = read_topics(*topics_dir / ("topics_" + std::string(1, theme) + ".json"));
      } else {
        model = extract_topics(corpus, params);
      }
      ta.topic_count = model.topics.size();
      if (model.topics.empty()) {
        ta.error = "no topics reach the minimum topic size";
        eval.themes.push_back(std::move(ta));
        continue;
      }
      std::vector<std::string> assigned;
      for (const auto& e : set.entries) {
        auto match = most_similar_topic(e.title + " " + e.description, model, params.ngram_min,
                                        params.ngram_max);
        if (match.zero_similarity) {
          ta.warnings.push_back("sub-theme " + std::to_string(e.rank) +
                                " shares no terms with any topic");
        }
        assigned.push_back(match.topic_id);
        ta.subthemes.push_back({e.rank, e.title, std::move(match)});
      }
      ta.distinctness = distinctness(assigned);
      ta.coverage1 = coverage_k(assigned, model, 1);
      ta.coverage2 = coverage_k(assigned, model, 2);
      for (const auto* c : {&*ta.coverage1, &*ta.coverage2}) {
        if (c->window_truncated) {
          ta.warnings.push_back("fewer topics than the coverage window; using all " +
                                std::to_string(model.topics.size()));
        }
      }
      pooled_unique += ta.coverage1->unique;
      pooled_n += assigned.size();
      pooled_hit1 += ta.coverage1->covered;
      pooled_hit2 += ta.coverage2->covered;
      sum_d += *ta.distinctness;
      sum_c1 += ta.coverage1->value;
      sum_c2 += ta.coverage2->value;
      ++scored;
    } catch (const InputError& e) {
      ta.error = e.what();
    }
    eval.themes.push_back(std::move(ta));
  }
  if (scored > 0) {
    eval.mean_distinctness = sum_d / static_cast<double>(scored);
    eval.mean_coverage1 = sum_c1 / static_cast<double>(scored);
    eval.mean_coverage2 = sum_c2 / static_cast<double>(scored);
    eval.pooled_distinctness = static_cast<double>(pooled_unique) / static_cast<double>(pooled_n);
    eval.pooled_coverage1 = static_cast<double>(pooled_hit1) / static_cast<double>(pooled_unique);
    eval.pooled_coverage2 = static_cast<double>(pooled_hit2) / static_cast<double>(pooled_unique);
  }
  return eval;
}

json to_json(const AggregationEvaluation& e) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json themes = json::array();
  for (const auto& t : e.themes) {
    json subs = json::array();
    for (const auto& s : t.subthemes) {
      subs.push_back({{"rank", s.rank},
                      {"title", s.title},
                      {"topic_id", s.match.topic_id},
                      {"topic_rank", s.match.rank},
                      {"similarity", s.match.similarity}});
    }
    json jt = {{"theme", std::string(1, t.theme)},
               {"corpus_size", t.corpus_size},
               {"topic_count", t.topic_count},
               {"subthemes", std::move(subs)},
               {"distinctness", opt(t.distinctness)},
               {"coverage_1", t.coverage1 ? json(t.coverage1->value) : json(nullptr)},
               {"coverage_2", t.coverage2 ? json(t.coverage2->value) : json(nullptr)},
               {"warnings", t.warnings}};
    if (!t.error.empty()) jt["error"] = t.error;
    themes.push_back(std::move(jt));
  }
  return {{"themes", std::move(themes)},
          {"mean", {{"distinctness", opt(e.mean_distinctness)},
                    {"coverage_1", opt(e.mean_coverage1)},
                    {"coverage_2", opt(e.mean_coverage2)}}},
          {"pooled", {{"distinctness", opt(e.pooled_distinctness)},
                      {"coverage_1", opt(e.pooled_coverage1)},
                      {"coverage_2", opt(e.pooled_coverage2)}}}};
}

}  // namespace qualpipe::eval
