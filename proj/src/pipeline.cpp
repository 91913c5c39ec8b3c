#include "qualpipe/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qualpipe/artifacts.hpp"
#include "qualpipe/checkpoint.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

using nlohmann::json;

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::generation: return "generation";
    case Stage::classification: return "classification";
    case Stage::aggregation: return "aggregation";
    case Stage::prevalence: return "prevalence";
  }
  return "generation";
}

std::string_view stage_command(Stage s) {
  switch (s) {
    case Stage::generation: return "generate";
    case Stage::classification: return "classify";
    case Stage::aggregation: return "aggregate";
    case Stage::prevalence: return "prevalence";
  }
  return "generate";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (auto st : kAllStages) {
    if (s == stage_name(st) || s == stage_command(st)) return st;
  }
  return std::nullopt;
}

std::filesystem::path RunPaths::checkpoint(Stage s) const {
  return checkpoint_dir() / (std::string(stage_name(s)) + ".ndjson");
}
std::filesystem::path RunPaths::meta(Stage s) const {
  return checkpoint_dir() / (std::string(stage_name(s)) + ".meta.json");
}
std::filesystem::path RunPaths::quarantine(Stage s) const {
  return checkpoint_dir() / (std::string(stage_name(s)) + ".quarantine.ndjson");
}
std::filesystem::path RunPaths::output(Stage s) const {
  switch (s) {
    case Stage::generation: return concerns();
    case Stage::classification: return theme_assignments();
    case Stage::aggregation: return subthemes();
    case Stage::prevalence: return subtheme_assignments();
  }
  return concerns();
}

namespace {

std::string file_or_empty(const std::filesystem::path& p) {
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return {};
  return read_file(p);
}

struct Meta {
  std::string fingerprint;
  bool complete = false;
};

std::optional<Meta> read_meta(const std::filesystem::path& p) {
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return std::nullopt;
  json j = json::parse(file_or_empty(p), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return Meta{};
  return Meta{j.value("fingerprint", ""), j.value("complete", false)};
}

void write_meta(const std::filesystem::path& p, Stage s, const std::string& fingerprint,
                const StageSummary* summary) {
  json j = {{"stage", std::string(stage_name(s))},
            {"fingerprint", fingerprint},
            {"complete", summary && summary->complete}};
  if (summary) {
    j["units_total"] = summary->units_total;
    j["units_done"] = summary->units_done;
    j["units_failed"] = summary->units_failed;
    j["items_failed"] = summary->items_failed;
    j["failed_by_category"] = summary->failed_by_category;
  }
  write_file_atomic(p, j.dump(2) + "\n");
}

json failure_json(const UnitFailure& f) {
  return {{"category", std::string(llm::to_string(f.category))},
          {"attempts", f.attempts},
          {"detail", f.detail}};
}

std::string failure_category(const json& record) {
  return record.at("failure").at("category").get<std::string>();
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Stops handing out
// work once `stop` is set; rethrows the first worker exception.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, const std::atomic<bool>* stop, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      if (stop && stop->load()) return;
      {
        std::lock_guard lock(error_mu);
        if (error) return;
      }
      auto i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
}

// Shared bookkeeping for one stage invocation.
class StageRun {
 public:
  StageRun(const RunPaths& paths, Stage stage, std::string fingerprint,
           const CheckpointStore::Validator& valid, llm::Gateway& gateway)
      : paths_(paths),
        stage_(stage),
        fingerprint_(std::move(fingerprint)),
        store_(paths.checkpoint(stage), paths.quarantine(stage)),
        gateway_(gateway) {
    summary_.stage = stage;
    auto meta = read_meta(paths.meta(stage));
    bool has_checkpoint = std::filesystem::exists(paths.checkpoint(stage));
    if ((meta && meta->fingerprint != fingerprint_) || (!meta && has_checkpoint)) {
      store_.archive();
      summary_.restarted = true;
    }
    write_meta(paths.meta(stage), stage, fingerprint_, nullptr);
    auto loaded = store_.load(valid);
    records_ = std::move(loaded.latest);
    summary_.quarantined = loaded.quarantined;
    input0_ = gateway.usage().input_tokens();
    output0_ = gateway.usage().output_tokens();
    calls0_ = gateway.backend_calls();
  }

  bool needs_run(const std::string& unit, bool retry_failed) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(unit);
    if (it == records_.end()) return true;
    return retry_failed && it->second["status"] == "failed";
  }

  void record(json rec) {
    store_.append(rec);
    std::lock_guard lock(mu_);
    ++summary_.units_executed;
    auto unit = rec["unit"].get<std::string>();
    records_[unit] = std::move(rec);
  }

  const json* find(const std::string& unit) const {
    auto it = records_.find(unit);
    return it == records_.end() ? nullptr : &it->second;
  }

  // Tallies a unit's final record into the summary.
  void tally(const json& rec) {
    if (rec["status"] == "done") {
      ++summary_.units_done;
    } else {
      ++summary_.units_failed;
      ++summary_.failed_by_category[failure_category(rec)];
      if (rec.contains("concern_ids")) summary_.items_failed += rec["concern_ids"].size();
    }
  }

  StageSummary& summary() { return summary_; }

  StageSummary finish(bool complete) {
    summary_.complete = complete;
    summary_.input_tokens = gateway_.usage().input_tokens() - input0_;
    summary_.output_tokens = gateway_.usage().output_tokens() - output0_;
    summary_.backend_calls = gateway_.backend_calls() - calls0_;
    write_meta(paths_.meta(stage_), stage_, fingerprint_, &summary_);
    return summary_;
  }

 private:
  const RunPaths& paths_;
  Stage stage_;
  std::string fingerprint_;
  CheckpointStore store_;
  llm::Gateway& gateway_;
  mutable std::mutex mu_;
  std::map<std::string, json> records_;
  StageSummary summary_;
  std::uint64_t input0_ = 0;
  std::uint64_t output0_ = 0;
  std::uint64_t calls0_ = 0;
};

template <typename Decode>
CheckpointStore::Validator validator(Decode decode) {
  return [decode](const json& j) {
    try {
      if (j["status"] == "failed") {
        failure_category(j);
        return true;
      }
      decode(j);
      return true;
    } catch (const std::exception&) {
      return false;
    }
  };
}

std::map<char, std::vector<Concern>> concerns_by_theme(const RunPaths& paths,
                                                       const ThemeTaxonomy& taxonomy) {
  auto concerns = read_concerns(paths.concerns());
  std::map<std::string, const Concern*> by_id;
  for (const auto& c : concerns) by_id[c.concern_id] = &c;
  std::map<char, std::vector<Concern>> themed;
  for (const auto& a : read_theme_assignments(paths.theme_assignments())) {
    if (a.theme == taxonomy.catch_all()) continue;
    auto it = by_id.find(a.concern_id);
    if (it == by_id.end()) {
      throw InputError("theme assignment references unknown concern " + a.concern_id);
    }
    themed[a.theme].push_back(*it->second);
  }
  for (auto& [theme, list] : themed) {
    std::sort(list.begin(), list.end(),
              [](const Concern& a, const Concern& b) { return a.concern_id < b.concern_id; });
  }
  return themed;
}

}  // namespace

std::string stage_fingerprint(const RunPaths& paths, Stage stage, const StudyConfig& config,
                              const PromptTemplates& templates) {
  std::string material;
  auto add = [&](const std::string& s) {
    material += s;
    material += '\x1f';
  };
  add(std::string(stage_name(stage)));
  switch (stage) {
    case Stage::generation:
      add(file_or_empty(paths.groups()));
      add(templates.generation);
      add(config.topic);
      add(config.focus);
      add(std::to_string(config.group_size));
      add(std::to_string(config.context_budget_tokens));
      break;
    case Stage::classification:
      add(file_or_empty(paths.concerns()));
      add(templates.classification);
      add(config.taxonomy.to_json());
      add(std::to_string(config.classification_chunk_size));
      break;
    case Stage::aggregation:
      add(file_or_empty(paths.concerns()));
      add(file_or_empty(paths.theme_assignments()));
      add(templates.aggregation);
      add(config.taxonomy.to_json());
      add(std::to_string(config.subtheme_count));
      add(std::to_string(config.aggregation_chunk_size));
      break;
    case Stage::prevalence:
      add(file_or_empty(paths.concerns()));
      add(file_or_empty(paths.theme_assignments()));
      add(file_or_empty(paths.subthemes()));
      add(templates.prevalence);
      add(std::to_string(config.prevalence_chunk_size));
      break;
  }
  return text::sha256_hex(material);
}

bool stage_complete(const RunPaths& paths, Stage stage, const StudyConfig& config,
                    const PromptTemplates& templates) {
  auto meta = read_meta(paths.meta(stage));
  return meta && meta->complete && std::filesystem::exists(paths.output(stage)) &&
         meta->fingerprint == stage_fingerprint(paths, stage, config, templates);
}

PipelineRunner::PipelineRunner(RunPaths paths, StudyConfig config, PromptTemplates templates,
                               llm::Gateway& gateway, std::size_t workers,
                               const std::atomic<bool>* stop)
    : paths_(std::move(paths)),
      config_(std::move(config)),
      templates_(std::move(templates)),
      gateway_(gateway),
      workers_(std::max<std::size_t>(workers, 1)),
      stop_(stop) {
  config_.validate();
}

StageSummary PipelineRunner::run(Stage stage, bool retry_failed) {
  switch (stage) {
    case Stage::generation: return run_generation(retry_failed);
    case Stage::classification: return run_classification(retry_failed);
    case Stage::aggregation: return run_aggregation(retry_failed);
    case Stage::prevalence: return run_prevalence(retry_failed);
  }
  throw StateError("unknown stage");
}

void PipelineRunner::require_complete(Stage predecessor, Stage stage) const {
  if (!stage_complete(paths_, predecessor, config_, templates_)) {
    throw StateError(std::string(stage_command(stage)) + " requires a completed " +
                     std::string(stage_name(predecessor)) + " stage; run `" +
                     std::string(stage_command(predecessor)) + "` first");
  }
}

StageSummary PipelineRunner::run_generation(bool retry_failed) {
  if (!std::filesystem::exists(paths_.groups())) {
    throw StateError("generate requires batch groups; run `ingest` first");
  }
  auto groups = ingest::read_groups_file(paths_.groups());
  auto units = plan_generation_units(groups, config_, templates_);

  StageRun run(paths_, Stage::generation,
               stage_fingerprint(paths_, Stage::generation, config_, templates_),
               validator([](const json& j) {
                 for (const auto& c : j.at("concerns")) concern_from_json(c);
               }),
               gateway_);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (run.needs_run(units[i].group_key, retry_failed)) todo.push_back(i);
  }
  parallel_for(todo.size(), workers_, stop_, [&](std::size_t k) {
    const auto& group = units[todo[k]];
    auto r = run_generation_unit(gateway_, group, config_, templates_);
    json rec = {{"unit", group.group_key}};
    if (r.failure) {
      rec["status"] = "failed";
      rec["failure"] = failure_json(*r.failure);
    } else {
      rec["status"] = "done";
      json concerns = json::array();
      for (const auto& c : r.concerns) concerns.push_back(to_json(c));
      rec["concerns"] = std::move(concerns);
      rec["no_concerns"] = r.no_concerns;
      rec["description_warnings"] = r.description_warnings;
    }
    run.record(std::move(rec));
  });

  auto& summary = run.summary();
  summary.units_total = units.size();
  std::vector<Concern> concerns;
  bool complete = true;
  for (const auto& u : units) {
    const json* rec = run.find(u.group_key);
    if (!rec) {
      complete = false;
      continue;
    }
    run.tally(*rec);
    if ((*rec)["status"] != "done") continue;
    summary.warnings += rec->value("description_warnings", std::size_t{0});
    for (const auto& c : (*rec)["concerns"]) {
      concerns.push_back(concern_from_json(c));
      if (concerns.back().quote_check == QuoteCheck::absent) ++summary.warnings;
    }
  }
  if (complete) {
    std::sort(concerns.begin(), concerns.end(),
              [](const Concern& a, const Concern& b) { return a.concern_id < b.concern_id; });
    write_concerns(paths_.concerns(), concerns);
  }
  return run.finish(complete);
}

StageSummary PipelineRunner::run_classification(bool retry_failed) {
  require_complete(Stage::generation, Stage::classification);
  auto concerns = read_concerns(paths_.concerns());
  std::sort(concerns.begin(), concerns.end(),
            [](const Concern& a, const Concern& b) { return a.concern_id < b.concern_id; });

  StageRun run(paths_, Stage::classification,
               stage_fingerprint(paths_, Stage::classification, config_, templates_),
               validator([](const json& j) {
                 for (const auto& a : j.at("assignments")) {
                   a.at("concern_id").get<std::string>();
                   a.at("theme").get<std::string>().at(0);
                 }
               }),
               gateway_);

  const auto size = config_.classification_chunk_size;
  const auto chunks = chunk_count(concerns.size(), size);
  std::span<const Concern> all(concerns);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < chunks; ++i) {
    if (run.needs_run(std::to_string(i), retry_failed)) todo.push_back(i);
  }
  parallel_for(todo.size(), workers_, stop_, [&](std::size_t k) {
    auto i = todo[k];
    auto chunk = all.subspan(i * size, std::min(size, all.size() - i * size));
    auto r = classify_chunk(gateway_, i, chunk, config_, templates_);
    json rec = {{"unit", std::to_string(i)}, {"unknown_labels", r.unknown_labels}};
    if (r.failure) {
      rec["status"] = "failed";
      rec["failure"] = failure_json(r.failure->failure);
      rec["concern_ids"] = r.failure->concern_ids;
    } else {
      rec["status"] = "done";
      json list = json::array();
      for (const auto& a : r.assignments) {
        list.push_back({{"concern_id", a.concern_id}, {"theme", std::string(1, a.theme)}});
      }
      rec["assignments"] = std::move(list);
    }
    run.record(std::move(rec));
  });

  auto& summary = run.summary();
  summary.units_total = chunks;
  std::vector<ThemeAssignment> assignments;
  bool complete = true;
  for (std::size_t i = 0; i < chunks; ++i) {
    const json* rec = run.find(std::to_string(i));
    if (!rec) {
      complete = false;
      continue;
    }
    run.tally(*rec);
    summary.warnings += rec->value("unknown_labels", std::size_t{0});
    if ((*rec)["status"] != "done") continue;
    for (const auto& a : (*rec)["assignments"]) {
      assignments.push_back({a["concern_id"].get<std::string>(), a["theme"].get<std::string>()[0]});
    }
  }
  if (complete) {
    std::sort(assignments.begin(), assignments.end(),
              [](const ThemeAssignment& a, const ThemeAssignment& b) {
                return a.concern_id < b.concern_id;
              });
    write_theme_assignments(paths_.theme_assignments(), assignments);
  }
  return run.finish(complete);
}

StageSummary PipelineRunner::run_aggregation(bool retry_failed) {
  require_complete(Stage::classification, Stage::aggregation);
  auto themed = concerns_by_theme(paths_, config_.taxonomy);

  StageRun run(paths_, Stage::aggregation,
               stage_fingerprint(paths_, Stage::aggregation, config_, templates_),
               validator([](const json& j) {
                 for (const auto& e : j.at("entries")) subtheme_from_json(e);
               }),
               gateway_);

  using Items = std::vector<std::pair<std::string, std::string>>;
  struct ThemeState {
    char theme;
    Items items;
    AggregationSchedule schedule;
    bool finished = false;
    bool failed = false;
  };
  std::vector<ThemeState> states;
  const auto budget = config_.aggregation_chunk_size;
  const auto n = config_.subtheme_count;
  auto& summary = run.summary();
  for (auto& [theme, list] : themed) {
    ThemeState st{theme, {}, {}};
    for (const auto& c : list) st.items.emplace_back(c.title, c.description);
    st.schedule = aggregation_schedule(st.items.size(), budget, n);
    summary.units_total += st.schedule.total_calls();
    states.push_back(std::move(st));
  }

  SubThemeFile output;
  output.subtheme_count = n;
  bool complete = true;
  for (std::size_t level = 0; !states.empty(); ++level) {
    struct Unit {
      std::size_t state;
      std::size_t index;
      std::string id;
    };
    std::vector<Unit> units;
    for (std::size_t s = 0; s < states.size(); ++s) {
      auto& st = states[s];
      if (st.finished || level >= st.schedule.calls_per_level.size()) continue;
      for (std::size_t i = 0; i < st.schedule.calls_per_level[level]; ++i) {
        units.push_back({s, i, aggregation_unit_id(st.theme, level, i)});
      }
    }
    if (units.empty()) break;

    std::vector<std::size_t> todo;
    for (std::size_t u = 0; u < units.size(); ++u) {
      if (run.needs_run(units[u].id, retry_failed)) todo.push_back(u);
    }
    parallel_for(todo.size(), workers_, stop_, [&](std::size_t k) {
      const auto& unit = units[todo[k]];
      const auto& st = states[unit.state];
      const bool final_level = level + 1 == st.schedule.calls_per_level.size();
      auto first = st.items.begin() + static_cast<std::ptrdiff_t>(unit.index * budget);
      auto last = st.items.begin() +
                  static_cast<std::ptrdiff_t>(std::min(st.items.size(), (unit.index + 1) * budget));
      auto r = aggregate_call(gateway_, *config_.taxonomy.find(st.theme), Items(first, last), level,
                              unit.index, final_level, config_, templates_);
      json rec = {{"unit", unit.id}};
      if (r.failure) {
        rec["status"] = "failed";
        rec["failure"] = failure_json(*r.failure);
      } else {
        rec["status"] = "done";
        json entries = json::array();
        for (const auto& e : r.entries) entries.push_back(to_json(e));
        rec["entries"] = std::move(entries);
      }
      run.record(std::move(rec));
    });

    // Advance each theme that took part in this level.
    std::vector<bool> blocked(states.size(), false);
    std::vector<Items> next(states.size());
    std::vector<std::vector<SubTheme>> finals(states.size());
    for (const auto& unit : units) {
      const json* rec = run.find(unit.id);
      auto& st = states[unit.state];
      if (!rec) {
        blocked[unit.state] = true;
        complete = false;
        continue;
      }
      run.tally(*rec);
      if ((*rec)["status"] != "done") {
        st.failed = true;
        continue;
      }
      for (const auto& e : (*rec)["entries"]) {
        auto sub = subtheme_from_json(e);
        next[unit.state].emplace_back(sub.title, sub.description);
        finals[unit.state].push_back(std::move(sub));
      }
    }
    for (std::size_t s = 0; s < states.size(); ++s) {
      auto& st = states[s];
      if (st.finished || level >= st.schedule.calls_per_level.size()) continue;
      if (blocked[s]) {
        st.finished = true;
        continue;
      }
      if (st.failed) {
        st.finished = true;
        output.failed_themes.push_back(st.theme);
        continue;
      }
      if (level + 1 == st.schedule.calls_per_level.size()) {
        st.finished = true;
        output.themes[st.theme] = SubThemeSet{st.theme, std::move(finals[s])};
      } else {
        st.items = std::move(next[s]);
      }
    }
  }

  if (complete) write_subthemes(paths_.subthemes(), output, config_.taxonomy);
  return run.finish(complete);
}

StageSummary PipelineRunner::run_prevalence(bool retry_failed) {
  require_complete(Stage::aggregation, Stage::prevalence);
  auto themed = concerns_by_theme(paths_, config_.taxonomy);
  auto subthemes = read_subthemes(paths_.subthemes());

  StageRun run(paths_, Stage::prevalence,
               stage_fingerprint(paths_, Stage::prevalence, config_, templates_),
               validator([](const json& j) {
                 for (const auto& a : j.at("assignments")) {
                   a.at("concern_id").get<std::string>();
                   a.at("subtheme").get<std::string>().at(0);
                 }
               }),
               gateway_);

  struct Unit {
    char theme;
    std::size_t index;
    std::string id;
  };
  std::vector<Unit> units;
  const auto size = config_.prevalence_chunk_size;
  for (const auto& [theme, set] : subthemes.themes) {
    auto it = themed.find(theme);
    if (it == themed.end()) continue;
    for (std::size_t i = 0; i < chunk_count(it->second.size(), size); ++i) {
      units.push_back({theme, i, std::string(1, theme) + ":" + std::to_string(i)});
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (run.needs_run(units[u].id, retry_failed)) todo.push_back(u);
  }
  parallel_for(todo.size(), workers_, stop_, [&](std::size_t k) {
    const auto& unit = units[todo[k]];
    std::span<const Concern> all(themed.at(unit.theme));
    auto chunk = all.subspan(unit.index * size, std::min(size, all.size() - unit.index * size));
    auto r = prevalence_chunk(gateway_, unit.index, chunk, subthemes.themes.at(unit.theme), config_,
                              templates_);
    json rec = {{"unit", unit.id}, {"unknown_labels", r.unknown_labels}};
    if (r.failure) {
      rec["status"] = "failed";
      rec["failure"] = failure_json(r.failure->failure);
      rec["concern_ids"] = r.failure->concern_ids;
    } else {
      rec["status"] = "done";
      json list = json::array();
      for (const auto& a : r.assignments) {
        list.push_back({{"concern_id", a.concern_id}, {"subtheme", std::string(1, a.subtheme)}});
      }
      rec["assignments"] = std::move(list);
    }
    run.record(std::move(rec));
  });

  auto& summary = run.summary();
  summary.units_total = units.size();
  std::vector<SubThemeAssignment> assignments;
  bool complete = true;
  for (const auto& unit : units) {
    const json* rec = run.find(unit.id);
    if (!rec) {
      complete = false;
      continue;
    }
    run.tally(*rec);
    summary.warnings += rec->value("unknown_labels", std::size_t{0});
    if ((*rec)["status"] != "done") continue;
    for (const auto& a : (*rec)["assignments"]) {
      assignments.push_back(
          {a["concern_id"].get<std::string>(), unit.theme, a["subtheme"].get<std::string>()[0]});
    }
  }
  if (complete) {
    std::sort(assignments.begin(), assignments.end(),
              [](const SubThemeAssignment& a, const SubThemeAssignment& b) {
                return a.concern_id < b.concern_id;
              });
    write_subtheme_assignments(paths_.subtheme_assignments(), assignments);
  }
  return run.finish(complete);
}

}  // namespace qualpipe
