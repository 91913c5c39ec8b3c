#include <algorithm>
#include <cctype>
#include <set>

#include "qualpipe/stages.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

namespace {

std::string strip_quotes(std::string s) {
  s = text::trim(s);
  while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = text::trim(s.substr(1, s.size() - 2));
  }
  return s;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

llm::CompletionRequest make_request(std::string prompt, std::string tag, const StudyConfig& config) {
  llm::CompletionRequest r;
  r.messages = {{"user", std::move(prompt)}};
  r.model_name = config.model_name;
  r.temperature = config.temperature;
  r.max_output_tokens = config.max_output_tokens;
  r.request_tag = std::move(tag);
  return r;
}

std::string numbered_lines(std::span<const Concern> chunk) {
  std::string out;
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    out += std::to_string(i + 1) + ". " + chunk[i].title + ": " + chunk[i].description + "\n";
  }
  return out;
}

std::vector<std::string> ids_of(std::span<const Concern> chunk) {
  std::vector<std::string> ids;
  for (const auto& c : chunk) ids.push_back(c.concern_id);
  return ids;
}

}  // namespace

std::optional<std::vector<std::pair<int, std::string>>> parse_serial_labels(std::string_view raw) {
  std::string body = text::strip_code_fences(raw);
  auto open = body.find('{');
  auto close = body.rfind('}');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    body = body.substr(open + 1, close - open - 1);
  }
  std::vector<std::pair<int, std::string>> entries;
  std::string item;
  auto flush = [&]() -> bool {
    auto t = text::trim(item);
    item.clear();
    if (t.empty()) return true;
    auto colon = t.find(':');
    if (colon == std::string::npos) return false;
    auto key = strip_quotes(t.substr(0, colon));
    auto value = strip_quotes(t.substr(colon + 1));
    if (!all_digits(key) || key.size() > 9 || value.empty()) return false;
    entries.emplace_back(std::stoi(key), value);
    return true;
  };
  for (char c : body) {
    if (c == ',' || c == '\n') {
      if (!flush()) return std::nullopt;
    } else {
      item += c;
    }
  }
  if (!flush()) return std::nullopt;
  if (entries.empty()) return std::nullopt;
  return entries;
}

bool has_parity(const std::vector<std::pair<int, std::string>>& entries, std::size_t expected) {
  if (entries.size() != expected) return false;
  std::set<int> keys;
  for (const auto& [k, v] : entries) {
    if (k < 1 || static_cast<std::size_t>(k) > expected || !keys.insert(k).second) return false;
  }
  return true;
}

char normalize_label(std::string_view raw, char last, char catch_all, bool& unknown) {
  unknown = false;
  auto s = strip_quotes(std::string(raw));
  auto alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
  if (!s.empty() && alpha(s[0]) && (s.size() == 1 || !alpha(s[1]))) {
    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (c >= 'A' && c <= last) return c;
    unknown = true;
    return catch_all;
  }
  if (text::starts_with(text::to_lower(s), "other")) return catch_all;
  unknown = true;
  return catch_all;
}

ChunkOutcome label_chunk(llm::Gateway& gateway, const llm::CompletionRequest& request,
                         std::size_t items, char last_code, char catch_all, int parity_retries) {
  ChunkOutcome out;
  std::string last_problem;
  for (int round = 0; round <= parity_retries; ++round) {
    auto outcome = gateway.complete(request);
    ++out.calls;
    if (auto* f = std::get_if<llm::GatewayFailure>(&outcome)) {
      out.failure = UnitFailure{f->category, f->attempts, f->detail};
      return out;
    }
    auto parsed = parse_serial_labels(std::get<llm::CompletionResult>(outcome).text);
    if (!parsed) {
      last_problem = "output is not a serial-number dictionary";
      continue;
    }
    if (!has_parity(*parsed, items)) {
      last_problem = "parity violation: " + std::to_string(parsed->size()) + " entries for " +
                     std::to_string(items) + " items";
      continue;
    }
    std::sort(parsed->begin(), parsed->end());
    for (const auto& [serial, value] : *parsed) {
      bool unknown = false;
      out.labels.push_back(normalize_label(value, last_code, catch_all, unknown));
      if (unknown) ++out.unknown_labels;
    }
    return out;
  }
  out.failure = UnitFailure{llm::FailureCategory::malformed_output, out.calls, last_problem};
  return out;
}

std::string render_classification_prompt(std::span<const Concern> chunk,
                                         const ThemeTaxonomy& taxonomy,
                                         const PromptTemplates& templates) {
  std::vector<std::string> cats;
  for (const auto& c : taxonomy.categories()) {
    cats.push_back(std::string(1, c.code) + ". " + c.name + ": " + c.description);
  }
  SlotValues slots{{"category_count_word", text::number_word(taxonomy.size())},
                   {"categories", text::join(cats, "\n\n")},
                   {"data", numbered_lines(chunk)}};
  return render_template(templates.classification, slots);
}

ClassificationChunkResult classify_chunk(llm::Gateway& gateway, std::size_t chunk_index,
                                         std::span<const Concern> chunk, const StudyConfig& config,
                                         const PromptTemplates& templates) {
  ClassificationChunkResult result;
  result.chunk_index = chunk_index;
  auto request = make_request(render_classification_prompt(chunk, config.taxonomy, templates),
                              "cls:" + std::to_string(chunk_index), config);
  const char catch_all = config.taxonomy.catch_all();
  auto outcome = label_chunk(gateway, request, chunk.size(), catch_all, catch_all,
                             config.parity_retries);
  if (outcome.failure) {
    result.failure = ChunkFailure{chunk_index, ids_of(chunk), *outcome.failure};
    return result;
  }
  result.unknown_labels = outcome.unknown_labels;
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    result.assignments.push_back({chunk[i].concern_id, outcome.labels[i]});
  }
  return result;
}

ClassificationResult run_classification(llm::Gateway& gateway, std::span<const Concern> concerns,
                                        const StudyConfig& config,
                                        const PromptTemplates& templates) {
  if (concerns.empty()) throw PreconditionError("classification needs at least one concern");
  ClassificationResult result;
  const auto size = config.classification_chunk_size;
  for (std::size_t i = 0; i < chunk_count(concerns.size(), size); ++i) {
    auto chunk = concerns.subspan(i * size, std::min(size, concerns.size() - i * size));
    auto r = classify_chunk(gateway, i, chunk, config, templates);
    result.unknown_labels += r.unknown_labels;
    if (r.failure) {
      result.failures.push_back(std::move(*r.failure));
    } else {
      for (auto& a : r.assignments) result.assignments.push_back(std::move(a));
    }
  }
  return result;
}

std::string render_prevalence_prompt(std::span<const Concern> chunk, const SubThemeSet& subthemes,
                                     const PromptTemplates& templates) {
  std::vector<std::string> cats;
  for (const auto& e : subthemes.entries) {
    cats.push_back(std::string(1, subthemes.letter_for_rank(e.rank)) + ": " + e.title + " - " +
                   e.description);
  }
  SlotValues slots{{"category_count", std::to_string(subthemes.entries.size() + 1)},
                   {"categories", text::join(cats, "\n")},
                   {"catch_all", std::string(1, subthemes.catch_all())},
                   {"data", numbered_lines(chunk)}};
  return render_template(templates.prevalence, slots);
}

PrevalenceChunkResult prevalence_chunk(llm::Gateway& gateway, std::size_t chunk_index,
                                       std::span<const Concern> chunk, const SubThemeSet& subthemes,
                                       const StudyConfig& config, const PromptTemplates& templates) {
  PrevalenceChunkResult result;
  result.chunk_index = chunk_index;
  auto request = make_request(render_prevalence_prompt(chunk, subthemes, templates),
                              "prev:" + std::string(1, subthemes.theme) + ":" +
                                  std::to_string(chunk_index),
                              config);
  const char catch_all = subthemes.catch_all();
  auto outcome = label_chunk(gateway, request, chunk.size(), catch_all, catch_all,
                             config.parity_retries);
  if (outcome.failure) {
    result.failure = ChunkFailure{chunk_index, ids_of(chunk), *outcome.failure};
    return result;
  }
  result.unknown_labels = outcome.unknown_labels;
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    result.assignments.push_back({chunk[i].concern_id, subthemes.theme, outcome.labels[i]});
  }
  return result;
}

PrevalenceResult run_prevalence(llm::Gateway& gateway, std::span<const Concern> theme_concerns,
                                const SubThemeSet& subthemes, const StudyConfig& config,
                                const PromptTemplates& templates) {
  if (subthemes.entries.empty()) throw PreconditionError("prevalence needs a non-empty sub-theme list");
  if (auto problem = validate_subthemes(subthemes.entries, subthemes.entries.size());
      !problem.empty()) {
    throw PreconditionError("invalid sub-themes: " + problem);
  }
  PrevalenceResult result;
  const auto size = config.prevalence_chunk_size;
  for (std::size_t i = 0; i < chunk_count(theme_concerns.size(), size); ++i) {
    auto chunk = theme_concerns.subspan(i * size, std::min(size, theme_concerns.size() - i * size));
    auto r = prevalence_chunk(gateway, i, chunk, subthemes, config, templates);
    result.unknown_labels += r.unknown_labels;
    if (r.failure) {
      result.failures.push_back(std::move(*r.failure));
    } else {
      for (auto& a : r.assignments) result.assignments.push_back(std::move(a));
    }
  }
  return result;
}

}  // namespace qualpipe
