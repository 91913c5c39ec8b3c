#include <algorithm>
#include <regex>
#include <set>

#include <json.hpp>

#include "qualpipe/stages.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

using nlohmann::json;

namespace {

std::optional<int> rank_value(const json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) return static_cast<int>(v.get<double>());
  if (v.is_string()) {
    auto s = text::trim(v.get<std::string>());
    try {
      std::size_t pos = 0;
      int r = std::stoi(s, &pos);
      if (pos == s.size()) return r;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

std::optional<SubTheme> from_object(const json& o) {
  if (!o.is_object()) return std::nullopt;
  auto pick = [&](std::initializer_list<const char*> keys) -> const json* {
    for (const char* k : keys) {
      if (auto it = o.find(k); it != o.end()) return &*it;
    }
    return nullptr;
  };
  const json* rank = pick({"concern_rank", "rank"});
  const json* title = pick({"concern_title", "title"});
  const json* desc = pick({"concern_description", "description"});
  if (!rank || !title || !title->is_string()) return std::nullopt;
  auto r = rank_value(*rank);
  if (!r) return std::nullopt;
  SubTheme s;
  s.rank = *r;
  s.title = text::trim(title->get<std::string>());
  if (desc && desc->is_string()) s.description = text::trim(desc->get<std::string>());
  return s;
}

// Top-level {...} blocks, skipping braces inside double-quoted strings.
std::vector<std::string> brace_blocks(std::string_view s) {
  std::vector<std::string> blocks;
  int depth = 0;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quoted) {
      if (c == '\\') ++i;
      else if (c == '"') quoted = false;
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == '{') {
      if (depth++ == 0) start = i;
    } else if (c == '}' && depth > 0) {
      if (--depth == 0) blocks.emplace_back(s.substr(start, i - start + 1));
    }
  }
  return blocks;
}

std::string unquote(std::string s) {
  s = text::trim(s);
  while (!s.empty() && (s.back() == ',')) s = text::trim(s.substr(0, s.size() - 1));
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = s.substr(1, s.size() - 2);
  }
  return text::trim(s);
}

// {concern_rank: 1, concern_title: Opaque fares, concern_description: ...}
std::optional<SubTheme> from_loose_block(const std::string& block) {
  static const std::regex key_re(R"re(["']?(concern_rank|concern_title|concern_description)["']?\s*:)re");
  std::string inner = block.substr(1, block.size() - 2);
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> keys;
  for (auto it = std::sregex_iterator(inner.begin(), inner.end(), key_re); it != std::sregex_iterator();
       ++it) {
    keys.push_back({(*it)[1].str(),
                    {static_cast<std::size_t>(it->position()),
                     static_cast<std::size_t>(it->position() + it->length())}});
  }
  std::optional<int> rank;
  std::optional<std::string> title;
  std::string description;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    auto value_start = keys[k].second.second;
    auto value_end = k + 1 < keys.size() ? keys[k + 1].second.first : inner.size();
    auto value = unquote(inner.substr(value_start, value_end - value_start));
    if (keys[k].first == "concern_rank") {
      rank = rank_value(json(value));
    } else if (keys[k].first == "concern_title") {
      title = value;
    } else {
      description = value;
    }
  }
  if (!rank || !title) return std::nullopt;
  return SubTheme{*rank, *title, description};
}

}  // namespace

std::optional<std::vector<SubTheme>> parse_subtheme_list(std::string_view raw) {
  auto body = text::strip_code_fences(raw);
  std::vector<SubTheme> entries;

  json whole = json::parse(body, nullptr, false);
  if (!whole.is_discarded()) {
    const json* arr = whole.is_array() ? &whole : nullptr;
    if (!arr && whole.is_object()) {
      for (const auto& [k, v] : whole.items()) {
        if (v.is_array()) {
          arr = &v;
          break;
        }
      }
    }
    if (arr) {
      for (const auto& o : *arr) {
        auto s = from_object(o);
        if (!s) return std::nullopt;
        entries.push_back(std::move(*s));
      }
      return entries.empty() ? std::nullopt : std::optional(entries);
    }
  }

  for (const auto& block : brace_blocks(body)) {
    json o = json::parse(block, nullptr, false);
    std::optional<SubTheme> s = o.is_discarded() ? from_loose_block(block) : from_object(o);
    if (!s) return std::nullopt;
    entries.push_back(std::move(*s));
  }
  if (entries.empty()) return std::nullopt;
  return entries;
}

std::string validate_subthemes(const std::vector<SubTheme>& entries, std::size_t n, bool exact) {
  if (exact && entries.size() != n) {
    return "expected " + std::to_string(n) + " sub-themes, got " + std::to_string(entries.size());
  }
  if (entries.empty() || entries.size() > n) {
    return "expected 1.." + std::to_string(n) + " sub-themes, got " + std::to_string(entries.size());
  }
  std::set<int> ranks;
  std::set<std::string> titles;
  for (const auto& e : entries) {
    if (e.rank < 1 || static_cast<std::size_t>(e.rank) > entries.size() || !ranks.insert(e.rank).second) {
      return "ranks are not a permutation of 1.." + std::to_string(entries.size());
    }
    if (e.title.empty()) return "sub-theme with an empty title";
    if (!titles.insert(text::to_lower(text::trim(e.title))).second) {
      return "duplicate sub-theme title: " + e.title;
    }
  }
  return {};
}

std::size_t AggregationSchedule::merge_calls() const {
  std::size_t total = 0;
  for (std::size_t i = 1; i < calls_per_level.size(); ++i) total += calls_per_level[i];
  return total;
}

AggregationSchedule aggregation_schedule(std::size_t items, std::size_t budget, std::size_t n) {
  if (budget < 2 * n || n == 0) {
    throw PreconditionError("aggregation budget must be at least twice the sub-theme count");
  }
  AggregationSchedule s;
  if (items == 0) return s;
  std::size_t calls = chunk_count(items, budget);
  s.calls_per_level.push_back(calls);
  while (calls > 1) {
    calls = chunk_count(calls * n, budget);
    s.calls_per_level.push_back(calls);
  }
  return s;
}

std::string render_aggregation_prompt(const ThemeCategory& category,
                                      const std::vector<std::pair<std::string, std::string>>& items,
                                      std::size_t n, const PromptTemplates& templates) {
  std::string data;
  for (const auto& [title, description] : items) data += title + "\n" + description + "\n";
  SlotValues slots{{"category_description", category.name + ": " + category.description},
                   {"n", std::to_string(n)},
                   {"data", data}};
  return render_template(templates.aggregation, slots);
}

std::string aggregation_unit_id(char theme, std::size_t level, std::size_t index) {
  return std::string(1, theme) + ":L" + std::to_string(level) + ":" + std::to_string(index);
}

AggregationCallResult aggregate_call(llm::Gateway& gateway, const ThemeCategory& category,
                                     const std::vector<std::pair<std::string, std::string>>& items,
                                     std::size_t level, std::size_t index, bool final_level,
                                     const StudyConfig& config, const PromptTemplates& templates) {
  AggregationCallResult result;
  llm::CompletionRequest request;
  request.messages = {
      {"user", render_aggregation_prompt(category, items, config.subtheme_count, templates)}};
  request.model_name = config.model_name;
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  request.request_tag = "agg:" + aggregation_unit_id(category.code, level, index);

  std::string problem;
  for (int round = 0; round <= config.parity_retries; ++round) {
    auto outcome = gateway.complete(request);
    ++result.calls;
    if (auto* f = std::get_if<llm::GatewayFailure>(&outcome)) {
      result.failure = UnitFailure{f->category, f->attempts, f->detail};
      return result;
    }
    auto parsed = parse_subtheme_list(std::get<llm::CompletionResult>(outcome).text);
    if (!parsed) {
      problem = "output is not a ranked sub-theme list";
      continue;
    }
    problem = validate_subthemes(*parsed, config.subtheme_count, final_level);
    if (!problem.empty()) continue;
    std::sort(parsed->begin(), parsed->end(),
              [](const SubTheme& a, const SubTheme& b) { return a.rank < b.rank; });
    result.entries = std::move(*parsed);
    return result;
  }
  result.failure = UnitFailure{llm::FailureCategory::malformed_output, result.calls, problem};
  return result;
}

AggregationResult run_aggregation(llm::Gateway& gateway, char theme,
                                  std::span<const Concern> theme_concerns,
                                  const StudyConfig& config, const PromptTemplates& templates) {
  if (theme_concerns.empty()) throw PreconditionError("aggregation needs at least one concern");
  const ThemeCategory* category = config.taxonomy.find(theme);
  if (!category) throw PreconditionError(std::string("unknown theme ") + theme);

  std::vector<std::pair<std::string, std::string>> items;
  for (const auto& c : theme_concerns) items.emplace_back(c.title, c.description);

  AggregationResult result;
  const auto budget = config.aggregation_chunk_size;
  auto schedule = aggregation_schedule(items.size(), budget, config.subtheme_count);
  for (std::size_t level = 0; level < schedule.calls_per_level.size(); ++level) {
    const bool final_level = level + 1 == schedule.calls_per_level.size();
    std::vector<std::pair<std::string, std::string>> next;
    for (std::size_t i = 0; i < schedule.calls_per_level[level]; ++i) {
      auto first = items.begin() + static_cast<std::ptrdiff_t>(i * budget);
      auto last = items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), (i + 1) * budget));
      auto call = aggregate_call(gateway, *category, {first, last}, level, i, final_level, config,
                                 templates);
      result.calls += static_cast<std::size_t>(call.calls);
      if (call.failure) {
        result.failure = std::move(call.failure);
        return result;
      }
      if (final_level) {
        result.subthemes = SubThemeSet{theme, std::move(call.entries)};
        return result;
      }
      for (auto& e : call.entries) next.emplace_back(std::move(e.title), std::move(e.description));
    }
    items = std::move(next);
  }
  return result;
}

}  // namespace qualpipe
