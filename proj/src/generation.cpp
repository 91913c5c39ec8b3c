#include <algorithm>
#include <cctype>
#include <cstdio>
#include <unordered_map>

#include <json.hpp>

#include "qualpipe/stages.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

using nlohmann::json;

void StudyConfig::validate() const {
  if (group_size == 0) throw InputError("group_size must be >= 1");
  if (classification_chunk_size == 0) throw InputError("classification_chunk_size must be >= 1");
  if (prevalence_chunk_size == 0) throw InputError("prevalence_chunk_size must be >= 1");
  if (subtheme_count == 0 || subtheme_count > 25) {
    throw InputError("subtheme_count must lie in [1, 25]");
  }
  if (aggregation_chunk_size < 2 * subtheme_count) {
    throw InputError("aggregation_chunk_size must be at least twice subtheme_count");
  }
  if (parity_retries < 0) throw InputError("parity_retries must be >= 0");
  if (context_budget_tokens == 0) throw InputError("context_budget_tokens must be >= 1");
  if (!(temperature >= 0.0 && temperature <= 2.0)) throw InputError("temperature must lie in [0, 2]");
  if (max_output_tokens == 0) throw InputError("max_output_tokens must be >= 1");
  if (taxonomy.size() < 2) throw InputError("taxonomy is empty");
}

std::string_view to_string(QuoteCheck q) {
  switch (q) {
    case QuoteCheck::unchecked: return "unchecked";
    case QuoteCheck::verbatim: return "verbatim";
    case QuoteCheck::fuzzy: return "fuzzy";
    case QuoteCheck::absent: return "absent";
  }
  return "unchecked";
}

QuoteCheck parse_quote_check(std::string_view s) {
  if (s == "verbatim") return QuoteCheck::verbatim;
  if (s == "fuzzy") return QuoteCheck::fuzzy;
  if (s == "absent") return QuoteCheck::absent;
  return QuoteCheck::unchecked;
}

std::string make_concern_id(std::string_view group_key, std::size_t ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", ordinal);
  return std::string(group_key) + "-" + buf;
}

ContextOverflow::ContextOverflow(std::string group_key, std::size_t estimated, std::size_t budget)
    : Error("group " + group_key + " needs ~" + std::to_string(estimated) +
            " prompt tokens, over the context budget of " + std::to_string(budget)),
      group_key_(std::move(group_key)) {}

std::string serialize_group(const ingest::BatchGroup& group) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    const auto& m = group.members[i];
    json obj = {{"Submission Title", m.title},
                {"Submission Body", m.body},
                {"Timestamp", text::iso8601_utc(m.created_at)},
                {"Group Key", group.group_key},
                {"Comments", m.comments}};
    out += obj.dump();
    out += i + 1 < group.members.size() ? ",\n" : "\n";
  }
  out += "]";
  return out;
}

std::string render_generation_prompt(const ingest::BatchGroup& group, const StudyConfig& config,
                                     const PromptTemplates& templates) {
  if (group.members.empty()) throw PreconditionError("cannot render a prompt for an empty group");
  SlotValues slots{{"group_size", std::to_string(config.group_size)},
                   {"topic", config.topic},
                   {"focus", config.focus.empty() ? config.topic : config.focus},
                   {"data", serialize_group(group)}};
  auto prompt = render_template(templates.generation, slots);
  auto estimated = llm::estimate_tokens(prompt);
  if (estimated > config.context_budget_tokens) {
    throw ContextOverflow(group.group_key, estimated, config.context_budget_tokens);
  }
  return prompt;
}

std::vector<ingest::BatchGroup> plan_generation_units(const std::vector<ingest::BatchGroup>& groups,
                                                      const StudyConfig& config,
                                                      const PromptTemplates& templates) {
  std::vector<ingest::BatchGroup> units;
  for (const auto& g : groups) {
    try {
      render_generation_prompt(g, config, templates);
      units.push_back(g);
    } catch (const ContextOverflow&) {
      if (g.members.size() == 1) {
        units.push_back(g);
        continue;
      }
      for (const auto& m : g.members) units.push_back(ingest::make_group({m}));
    }
  }
  return units;
}

namespace {

bool is_no_concerns(std::string t) {
  t = text::trim(t);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = text::trim(t.substr(1, t.size() - 2));
  if (!t.empty() && t.back() == '.') t.pop_back();
  return text::iequals(t, "no concerns");
}

std::optional<std::string> required_string(const json& item, const char* key) {
  auto it = item.find(key);
  if (it == item.end() || !it->is_string()) return std::nullopt;
  return text::trim(it->get<std::string>());
}

}  // namespace

GenerationParse parse_generation_output(std::string_view raw, const ingest::BatchGroup& group) {
  GenerationParse out;
  auto body = text::strip_code_fences(raw);
  if (is_no_concerns(body)) {
    out.kind = GenerationParse::Kind::no_concerns;
    return out;
  }
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) {
    out.error = "output is not JSON";
    return out;
  }
  if (!j.is_array()) {
    out.error = "output is not a JSON array";
    return out;
  }
  std::size_t ordinal = 0;
  for (const auto& item : j) {
    ++ordinal;
    auto where = "item " + std::to_string(ordinal);
    if (!item.is_object()) {
      out.error = where + " is not an object";
      return out;
    }
    auto title = required_string(item, "title");
    auto description = required_string(item, "description");
    auto quote = required_string(item, "quote");
    if (!title || !description || !quote) {
      out.error = where + " is missing a title, description or quote field";
      return out;
    }
    if (title->empty() || quote->empty()) {
      out.error = where + " has an empty title or quote";
      return out;
    }
    auto words = text::word_count(*description);
    if (words < 10 || words > 20) ++out.description_warnings;
    Concern c;
    c.concern_id = make_concern_id(group.group_key, ordinal);
    c.group_key = group.group_key;
    c.earliest_timestamp = group.earliest_timestamp;
    c.title = std::move(*title);
    c.description = std::move(*description);
    c.quote = std::move(*quote);
    out.concerns.push_back(std::move(c));
  }
  out.kind = GenerationParse::Kind::concerns;
  return out;
}

std::vector<std::string> normalized_tokens(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

bool contains_sequence(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

// Best multiset overlap between the quote and any window of |quote| tokens.
double best_window_overlap(const std::vector<std::string>& doc,
                           const std::vector<std::string>& quote) {
  std::unordered_map<std::string, int> want;
  for (const auto& t : quote) ++want[t];
  std::unordered_map<std::string, int> have;
  const std::size_t m = quote.size();
  std::size_t overlap = 0;
  std::size_t best = 0;
  auto add = [&](const std::string& t) {
    auto w = want.find(t);
    int& h = have[t];
    if (w != want.end() && h < w->second) ++overlap;
    ++h;
  };
  auto remove = [&](const std::string& t) {
    int& h = have[t];
    --h;
    auto w = want.find(t);
    if (w != want.end() && h < w->second) --overlap;
  };
  for (std::size_t i = 0; i < doc.size(); ++i) {
    add(doc[i]);
    if (i >= m) remove(doc[i - m]);
    best = std::max(best, overlap);
  }
  return static_cast<double>(best) / static_cast<double>(m);
}

}  // namespace

QuoteCheck verify_quote(std::string_view quote, const ingest::BatchGroup& group) {
  auto q = normalized_tokens(quote);
  if (q.empty()) return QuoteCheck::absent;
  bool fuzzy = false;
  for (const auto& m : group.members) {
    auto doc = normalized_tokens(m.text);
    if (contains_sequence(doc, q)) return QuoteCheck::verbatim;
    if (!fuzzy && best_window_overlap(doc, q) >= kFuzzyQuoteThreshold) fuzzy = true;
  }
  return fuzzy ? QuoteCheck::fuzzy : QuoteCheck::absent;
}

GenerationUnitResult run_generation_unit(llm::Gateway& gateway, const ingest::BatchGroup& group,
                                         const StudyConfig& config,
                                         const PromptTemplates& templates) {
  GenerationUnitResult result;
  result.group_key = group.group_key;
  std::string prompt;
  try {
    prompt = render_generation_prompt(group, config, templates);
  } catch (const ContextOverflow& e) {
    result.failure = UnitFailure{llm::FailureCategory::other, 0, e.what()};
    return result;
  }

  llm::CompletionRequest request;
  request.messages = {{"user", std::move(prompt)}};
  request.model_name = config.model_name;
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  request.request_tag = "gen:" + group.group_key;

  auto outcome = gateway.complete(request);
  if (auto* f = std::get_if<llm::GatewayFailure>(&outcome)) {
    result.failure = UnitFailure{f->category, f->attempts, f->detail};
    return result;
  }
  const auto& completion = std::get<llm::CompletionResult>(outcome);
  auto parsed = parse_generation_output(completion.text, group);
  switch (parsed.kind) {
    case GenerationParse::Kind::malformed:
      result.failure = UnitFailure{llm::FailureCategory::malformed_output, completion.attempts,
                                   parsed.error};
      return result;
    case GenerationParse::Kind::no_concerns:
      result.no_concerns = true;
      return result;
    case GenerationParse::Kind::concerns:
      break;
  }
  for (auto& c : parsed.concerns) c.quote_check = verify_quote(c.quote, group);
  result.concerns = std::move(parsed.concerns);
  result.description_warnings = parsed.description_warnings;
  return result;
}

}  // namespace qualpipe
