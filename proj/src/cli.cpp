#include "qualpipe/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "qualpipe/checkpoint.hpp"
#include "qualpipe/config.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/ingest.hpp"
#include "qualpipe/metrics.hpp"
#include "qualpipe/pipeline.hpp"
#include "qualpipe/report.hpp"
#include "qualpipe/text.hpp"
#include "qualpipe/topics.hpp"

namespace qualpipe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string run_dir;
  std::size_t concurrency = 0;  // 0 keeps the config value
};

RunConfig load_config(const Common& common) {
  if (common.config.empty()) throw InputError("--config is required");
  auto config = RunConfig::load(common.config);
  if (!common.run_dir.empty()) config.run_dir = fs::absolute(common.run_dir);
  if (common.concurrency > 0) config.concurrency = common.concurrency;
  return config;
}

void print_summary(std::ostream& out, const StageSummary& s) {
  out << stage_name(s.stage) << ": " << s.units_done << "/" << s.units_total << " units done, "
      << s.units_failed << " failed";
  if (s.units_total > 0) out << " (" << text::percent_1dp(100.0 * s.failure_rate()) << "%)";
  out << "; " << s.units_executed << " executed this run";
  if (!s.complete) out << "; INCOMPLETE";
  out << "\n";
  if (s.restarted) out << "  inputs changed since the last checkpoint; stage restarted\n";
  for (const auto& [category, n] : s.failed_by_category) {
    out << "  failed " << category << ": " << n << "\n";
  }
  if (s.items_failed > 0) out << "  concerns in failed chunks: " << s.items_failed << "\n";
  out << "  tokens: input " << text::with_thousands(s.input_tokens) << ", output "
      << text::with_thousands(s.output_tokens) << "; backend calls " << s.backend_calls << "\n";
  if (s.warnings > 0) out << "  warnings: " << s.warnings << "\n";
  if (s.quarantined > 0) out << "  quarantined checkpoint lines: " << s.quarantined << "\n";
}

bool exhausted(const StageSummary& s) {
  for (const char* c : {"throttled", "network"}) {
    if (auto it = s.failed_by_category.find(c); it != s.failed_by_category.end() && it->second > 0) {
      return true;
    }
  }
  return false;
}

int exit_for(const std::vector<StageSummary>& summaries, const std::atomic<bool>* stop) {
  bool interrupted = stop && stop->load();
  for (const auto& s : summaries) {
    if (!s.complete && interrupted) return kInterrupted;
  }
  for (const auto& s : summaries) {
    if (exhausted(s)) return kBackendExhausted;
  }
  return kOk;
}

// Owns the gateway and run log for one command.
class Session {
 public:
  Session(const RunConfig& config, const std::atomic<bool>* stop)
      : config_(config),
        paths_{config.run_dir},
        log_((fs::create_directories(config.run_dir), paths_.run_log())),
        gateway_(config.make_backend(), config.retry_policy(),
                 [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
        runner_(paths_, config.study, config.templates(), gateway_, config.concurrency, stop) {
    gateway_.set_run_log(&log_);
  }

  PipelineRunner& runner() { return runner_; }
  const RunPaths& paths() const { return paths_; }

 private:
  const RunConfig& config_;
  RunPaths paths_;
  llm::RunLog log_;
  llm::Gateway gateway_;
  PipelineRunner runner_;
};

int do_ingest(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (!config.submissions) throw InputError("no submissions file; pass --submissions or set it in the config");
  if (!config.comments) throw InputError("no comments file; pass --comments or set it in the config");
  auto subs = ingest::parse_submissions_file(*config.submissions);
  auto comments = ingest::parse_comments_file(*config.comments);
  auto report_skips = [&](const char* what, const auto& skipped) {
    for (std::size_t i = 0; i < skipped.size() && i < 5; ++i) {
      err << "warning: " << what << " line " << skipped[i].line_number << " skipped: "
          << skipped[i].reason << "\n";
    }
    if (skipped.size() > 5) err << "warning: " << skipped.size() - 5 << " more " << what << " lines skipped\n";
  };
  report_skips("submissions", subs.skipped);
  report_skips("comments", comments.skipped);

  auto threads = ingest::build_threads(subs.records, comments.records);
  auto filtered = ingest::filter_short(threads.documents, config.min_chars);
  auto groups = ingest::group_batches(filtered.retained, config.study.group_size);
  fs::create_directories(config.run_dir);
  RunPaths paths{config.run_dir};
  ingest::write_groups_file(paths.groups(), groups);

  out << "submissions: " << subs.records.size() << " parsed, " << subs.skip_count()
      << " lines skipped\n";
  out << "comments: " << comments.records.size() << " parsed, " << comments.skip_count()
      << " lines skipped\n";
  out << "threads: " << filtered.retained.size() << " retained, " << filtered.dropped
      << " dropped as shorter than " << config.min_chars << " characters\n";
  out << "orphan comments: " << threads.orphan_comments << "\n";
  if (threads.duplicate_submissions > 0) {
    out << "duplicate submissions: " << threads.duplicate_submissions << "\n";
  }
  out << "groups: " << groups.size() << " written to " << paths.groups().string() << "\n";
  return kOk;
}

std::optional<double> meta_failure_rate(const RunPaths& paths, Stage stage) {
  if (!fs::exists(paths.meta(stage))) return std::nullopt;
  json j = json::parse(read_file(paths.meta(stage)), nullptr, false);
  if (j.is_discarded() || !j.contains("units_total")) return std::nullopt;
  auto total = j.value("units_total", std::size_t{0});
  auto failed = j.value("units_failed", std::size_t{0});
  return total == 0 ? 0.0 : static_cast<double>(failed) / static_cast<double>(total);
}

std::string rate_text(std::optional<double> r) {
  return r ? text::percent_1dp(100.0 * *r) + "%" : "n/a";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::atomic<bool>* stop) {
  CLI::App app{"Batch LLM thematic analysis of forum archives"};
  app.name("qualpipe");
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", common.config, "key=value run configuration");
    sub->add_option("--run-dir", common.run_dir, "override run_dir from the config");
    sub->add_option("--concurrency,-P", common.concurrency, "worker threads");
  };

  std::string submissions, comments;
  auto* ingest_cmd = app.add_subcommand("ingest", "parse dumps and write batch groups");
  add_common(ingest_cmd);
  ingest_cmd->add_option("--submissions", submissions, "submissions NDJSON dump");
  ingest_cmd->add_option("--comments", comments, "comments NDJSON dump");

  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (auto stage : kAllStages) {
    auto* sub = app.add_subcommand(std::string(stage_command(stage)),
                                   "run the " + std::string(stage_name(stage)) + " stage");
    add_common(sub);
    stage_cmds.emplace_back(sub, stage);
  }

  std::string retry_stage = "generation";
  auto* retry_cmd = app.add_subcommand("retry-failed", "re-run failed units of a stage");
  add_common(retry_cmd);
  retry_cmd->add_option("--stage", retry_stage, "stage name or 'all'");

  auto* run_all_cmd = app.add_subcommand("run-all", "ingest and run all four stages");
  add_common(run_all_cmd);

  std::string quotes;
  auto* report_cmd = app.add_subcommand("report", "write report.md, CSV tables and cost.md");
  add_common(report_cmd);
  report_cmd->add_option("--quotes", quotes, "CSV theme,rank,quote");

  std::optional<std::uint64_t> input_tokens, output_tokens;
  std::optional<double> input_rate, output_rate;
  auto* cost_cmd = app.add_subcommand("cost", "token usage and cost table");
  add_common(cost_cmd);
  cost_cmd->add_option("--input-tokens", input_tokens);
  cost_cmd->add_option("--output-tokens", output_tokens);
  cost_cmd->add_option("--input-rate", input_rate, "currency per 1K input tokens");
  cost_cmd->add_option("--output-rate", output_rate, "currency per 1K output tokens");

  std::vector<std::string> metrics;
  std::string factuality_file, completeness_file, cls_labels, cls_pred, prev_labels, prev_pred,
      topics_dir, eval_out;
  std::optional<double> cls_chance, prev_chance;
  auto* eval_cmd = app.add_subcommand("eval", "evaluation metrics");
  add_common(eval_cmd);
  eval_cmd->add_option("--metrics", metrics,
                       "subset of factuality,completeness,classification,prevalence,aggregation")
      ->delimiter(',');
  eval_cmd->add_option("--factuality", factuality_file, "judgments CSV item_id,verdict");
  eval_cmd->add_option("--completeness", completeness_file, "judgments CSV item_id,verdict");
  eval_cmd->add_option("--classification-labels", cls_labels, "CSV item_id,annotator_id,label");
  eval_cmd->add_option("--classification-predicted", cls_pred, "CSV item_id,label");
  eval_cmd->add_option("--prevalence-labels", prev_labels, "CSV item_id,annotator_id,label");
  eval_cmd->add_option("--prevalence-predicted", prev_pred, "CSV item_id,label");
  eval_cmd->add_option("--classification-chance", cls_chance);
  eval_cmd->add_option("--prevalence-chance", prev_chance);
  eval_cmd->add_option("--topics-dir", topics_dir, "topics_<L>.json files to use instead of the built-in topic model");
  eval_cmd->add_option("--out", eval_out, "output directory (default: run_dir)");

  std::vector<std::string> argv_store;
  argv_store.push_back("qualpipe");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*ingest_cmd) {
      // Ingest needs no backend settings, so a bare --run-dir is enough.
      RunConfig config;
      if (!common.config.empty() || common.run_dir.empty()) {
        config = load_config(common);
      } else {
        config.run_dir = fs::absolute(common.run_dir);
      }
      if (!submissions.empty()) config.submissions = fs::absolute(submissions);
      if (!comments.empty()) config.comments = fs::absolute(comments);
      return do_ingest(config, out, err);
    }
    for (auto& [sub, stage] : stage_cmds) {
      if (!*sub) continue;
      auto config = load_config(common);
      Session session(config, stop);
      auto summary = session.runner().run(stage);
      print_summary(out, summary);
      return exit_for({summary}, stop);
    }
    if (*retry_cmd) {
      auto config = load_config(common);
      Session session(config, stop);
      std::vector<Stage> stages;
      if (retry_stage == "all") {
        stages.assign(std::begin(kAllStages), std::end(kAllStages));
      } else if (auto s = parse_stage(retry_stage)) {
        stages.push_back(*s);
      } else {
        throw InputError("unknown stage: " + retry_stage);
      }
      std::vector<StageSummary> summaries;
      bool first = true;
      for (auto stage : stages) {
        auto before = meta_failure_rate(session.paths(), stage);
        if (!before) {
          if (first) {
            throw StateError("retry-failed: the " + std::string(stage_name(stage)) +
                             " stage has not run; run `" + std::string(stage_command(stage)) +
                             "` first");
          }
          break;
        }
        first = false;
        auto summary = session.runner().run(stage, true);
        print_summary(out, summary);
        out << "  failure rate before retry: " << rate_text(before)
            << ", after: " << rate_text(summary.failure_rate()) << "\n";
        summaries.push_back(summary);
        if (!summary.complete) break;
      }
      return exit_for(summaries, stop);
    }
    if (*run_all_cmd) {
      auto config = load_config(common);
      if (config.submissions && config.comments) {
        int rc = do_ingest(config, out, err);
        if (rc != kOk) return rc;
      }
      Session session(config, stop);
      std::vector<StageSummary> summaries;
      for (auto stage : kAllStages) {
        summaries.push_back(session.runner().run(stage));
        print_summary(out, summaries.back());
        if (!summaries.back().complete) break;
      }
      return exit_for(summaries, stop);
    }
    if (*report_cmd) {
      auto config = load_config(common);
      report::ReportOptions options;
      if (!quotes.empty()) options.quotes_file = fs::absolute(quotes);
      else options.quotes_file = config.quotes_file;
      options.input_rate = config.input_rate;
      options.output_rate = config.output_rate;
      auto result = report::write_report(RunPaths{config.run_dir}, config.study.taxonomy, options);
      for (const auto& w : result.warnings) err << "warning: " << w << "\n";
      for (const auto& f : result.files) out << "wrote " << f.string() << "\n";
      return kOk;
    }
    if (*cost_cmd) {
      llm::TokenLedger ledger;
      if (input_tokens || output_tokens) {
        if (!common.config.empty()) {
          auto config = load_config(common);
          ledger.input_rate = config.input_rate;
          ledger.output_rate = config.output_rate;
        }
        ledger.total_input_tokens = input_tokens.value_or(0);
        ledger.total_output_tokens = output_tokens.value_or(0);
      } else {
        auto config = load_config(common);
        RunPaths paths{config.run_dir};
        if (!fs::exists(paths.run_log())) {
          throw StateError("no run log at " + paths.run_log().string() + "; run a stage first");
        }
        ledger = llm::replay_ledger(llm::RunLog::read(paths.run_log()), config.input_rate,
                                    config.output_rate);
      }
      if (input_rate) ledger.input_rate = *input_rate;
      if (output_rate) ledger.output_rate = *output_rate;
      out << report::render_cost_table(llm::cost_report(ledger));
      return kOk;
    }
    if (*eval_cmd) {
      std::optional<RunConfig> config;
      if (!common.config.empty()) config = load_config(common);
      auto wanted = [&](const char* name, bool have_input) {
        if (metrics.empty()) return have_input;
        return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
      };
      for (const auto& m : metrics) {
        static const std::set<std::string> known = {"factuality", "completeness", "classification",
                                                    "prevalence", "aggregation"};
        if (!known.count(m)) throw InputError("unknown metric: " + m);
      }
      std::vector<eval::MetricReport> reports;
      json doc = json::object();

      auto judged = [&](const char* name, const std::string& file, eval::Direction dir) {
        if (!wanted(name, !file.empty())) return;
        if (file.empty()) throw InputError(std::string("--") + name + " FILE is required");
        auto set = eval::read_judgments(file, dir);
        eval::MetricReport m;
        m.phase = "Generation";
        m.name = name;
        m.value = dir == eval::Direction::candidate_vs_reference ? eval::factuality(set)
                                                                  : eval::completeness(set);
        m.sample_size = set.judgments.size();
        reports.push_back(eval::with_significance(m, eval::yes_count(set), 0.5));
      };
      judged("factuality", factuality_file, eval::Direction::candidate_vs_reference);
      judged("completeness", completeness_file, eval::Direction::reference_vs_candidate);

      const ThemeTaxonomy taxonomy = config ? config->study.taxonomy : ThemeTaxonomy::builtin();
      const std::size_t n = config ? config->study.subtheme_count : 5;
      auto labeled = [&](const char* name, const std::string& labels, const std::string& predicted,
                         std::string catch_all, double chance) {
        if (!wanted(name, !labels.empty() || !predicted.empty())) return;
        if (labels.empty() || predicted.empty()) {
          throw InputError(std::string("--") + name + "-labels and --" + name +
                           "-predicted are both required");
        }
        auto annotations = eval::read_annotations(labels);
        auto gold = annotations.majority(catch_all);
        auto pred = eval::read_label_map(predicted);
        eval::MetricReport m;
        m.phase = name == std::string("classification") ? "Classification" : "Prevalence";
        m.name = "accuracy";
        m.value = eval::accuracy(gold, pred);
        m.sample_size = gold.size();
        reports.push_back(eval::with_significance(m, eval::match_count(gold, pred), chance));
        auto rows = annotations.rows();
        if (rows.size() >= 2 && rows.front().size() >= 2) {
          eval::MetricReport k;
          k.phase = m.phase;
          k.name = "fleiss_kappa";
          k.value = eval::fleiss_kappa(rows);
          k.sample_size = rows.size();
          k.note = std::to_string(rows.front().size()) + " annotators";
          reports.push_back(k);
        }
      };
      labeled("classification", cls_labels, cls_pred, std::string(1, taxonomy.catch_all()),
              cls_chance.value_or(1.0 / static_cast<double>(taxonomy.size())));
      labeled("prevalence", prev_labels, prev_pred, std::string(1, static_cast<char>('A' + n)),
              prev_chance.value_or(1.0 / static_cast<double>(n + 1)));

      if (wanted("aggregation", false)) {
        if (!config) throw InputError("aggregation metrics need --config");
        std::optional<fs::path> dir;
        if (!topics_dir.empty()) dir = fs::absolute(topics_dir);
        auto result = eval::evaluate_aggregation(RunPaths{config->run_dir}, taxonomy,
                                                 config->topic_params(), dir);
        doc["aggregation"] = eval::to_json(result);
        std::size_t scored_themes = 0, scored_subthemes = 0;
        for (const auto& t : result.themes) {
          if (!t.distinctness) continue;
          ++scored_themes;
          scored_subthemes += t.subthemes.size();
        }
        auto add = [&](const char* metric, const std::optional<double>& v, std::string note) {
          if (!v) return;
          eval::MetricReport m;
          m.phase = "Aggregation";
          m.name = metric;
          m.value = *v;
          m.sample_size = note.rfind("pooled", 0) == 0 ? scored_subthemes : scored_themes;
          m.note = std::move(note);
          reports.push_back(m);
        };
        add("distinctness", result.mean_distinctness, "mean over themes");
        add("coverage(k=1)", result.mean_coverage1, "mean over themes");
        add("coverage(k=2)", result.mean_coverage2, "mean over themes");
        add("distinctness (pooled)", result.pooled_distinctness, "pooled over all sub-themes");
        add("coverage(k=1) (pooled)", result.pooled_coverage1, "pooled over all sub-themes");
        add("coverage(k=2) (pooled)", result.pooled_coverage2, "pooled over all sub-themes");
        for (const auto& t : result.themes) {
          for (const auto& w : t.warnings) err << "warning: theme " << t.theme << ": " << w << "\n";
          if (!t.error.empty()) err << "warning: theme " << t.theme << ": " << t.error << "\n";
        }
      }
      if (reports.empty() && !doc.contains("aggregation")) {
        throw InputError("nothing to evaluate; pass judgment, label or --metrics aggregation inputs");
      }

      json list = json::array();
      for (const auto& m : reports) list.push_back(eval::to_json(m));
      doc["metrics"] = std::move(list);
      fs::path dir = !eval_out.empty() ? fs::path(eval_out)
                     : config       ? config->run_dir
                                    : fs::current_path();
      fs::create_directories(dir);
      write_file_atomic(dir / "metrics.json", doc.dump(2) + "\n");
      write_file_atomic(dir / "metrics.md", "# Evaluation metrics\n\n" +
                                                eval::render_metrics_markdown(reports));
      out << (dir / "metrics.json").string() << "\n";
      return kOk;
    }
  } catch (const StateError& e) {
    err << "error: " << e.what() << "\n";
    return kStateError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace qualpipe::cli
