#include "qualpipe/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>

#include "qualpipe/checkpoint.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw InputError("config key " + key + ": not a valid number: " + value);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  double out = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size()) {
    throw InputError("config key " + key + ": not a valid number: " + value);
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig c;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size = [](std::size_t& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = parse_number<std::size_t>(k, v);
    };
  };
  const std::map<std::string, Setter> setters = {
      {"submissions", [&](auto&, auto& v) { c.submissions = path_of(v); }},
      {"comments", [&](auto&, auto& v) { c.comments = path_of(v); }},
      {"run_dir", [&](auto&, auto& v) { c.run_dir = path_of(v); }},
      {"backend",
       [&](auto& k, auto& v) {
         if (v != "live" && v != "mock") throw InputError("config key " + k + " must be live or mock");
         c.backend = v;
       }},
      {"endpoint", [&](auto&, auto& v) { c.endpoint = v; }},
      {"auth_header", [&](auto&, auto& v) { c.auth_header = v; }},
      {"request_timeout_s",
       [&](auto& k, auto& v) { c.request_timeout_s = parse_number<std::uint32_t>(k, v); }},
      {"model", [&](auto&, auto& v) { c.study.model_name = v; }},
      {"mock_script", [&](auto&, auto& v) { c.mock_script = path_of(v); }},
      {"mock_unmatched", [&](auto&, auto& v) { c.mock_unmatched = v; }},
      {"group_size", size(c.study.group_size)},
      {"classification_chunk_size", size(c.study.classification_chunk_size)},
      {"aggregation_chunk_size", size(c.study.aggregation_chunk_size)},
      {"prevalence_chunk_size", size(c.study.prevalence_chunk_size)},
      {"subtheme_count", size(c.study.subtheme_count)},
      {"context_budget_tokens", size(c.study.context_budget_tokens)},
      {"min_chars", size(c.min_chars)},
      {"concurrency", size(c.concurrency)},
      {"topic_min_size", size(c.topic_min_size)},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"temperature", [&](auto& k, auto& v) { c.study.temperature = parse_double(k, v); }},
      {"max_output_tokens",
       [&](auto& k, auto& v) { c.study.max_output_tokens = parse_number<std::uint32_t>(k, v); }},
      {"input_rate", [&](auto& k, auto& v) { c.input_rate = parse_double(k, v); }},
      {"output_rate", [&](auto& k, auto& v) { c.output_rate = parse_double(k, v); }},
      {"topic_threshold", [&](auto& k, auto& v) { c.topic_threshold = parse_double(k, v); }},
      {"max_attempts", [&](auto& k, auto& v) { c.max_attempts = parse_number<int>(k, v); }},
      {"backoff_base_ms",
       [&](auto& k, auto& v) { c.backoff_base_ms = parse_number<std::uint32_t>(k, v); }},
      {"parity_retries", [&](auto& k, auto& v) { c.study.parity_retries = parse_number<int>(k, v); }},
      {"topic", [&](auto&, auto& v) { c.study.topic = v; }},
      {"focus", [&](auto&, auto& v) { c.study.focus = v; }},
      {"taxonomy_file", [&](auto&, auto& v) { c.taxonomy_file = path_of(v); }},
      {"prompts_dir", [&](auto&, auto& v) { c.prompts_dir = path_of(v); }},
      {"quotes_file", [&](auto&, auto& v) { c.quotes_file = path_of(v); }},
  };

  std::size_t line_no = 0;
  for (const auto& raw : text::split(text, '\n')) {
    ++line_no;
    auto line = text::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = text::trim(line.substr(0, eq));
    auto value = text::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw InputError("config line " + std::to_string(line_no) + ": unknown key " + key);
    }
    it->second(key, value);
  }

  if (c.run_dir.empty()) throw InputError("config is missing run_dir");
  if (c.taxonomy_file) c.study.taxonomy = ThemeTaxonomy::from_file(*c.taxonomy_file);
  if (c.concurrency == 0) throw InputError("concurrency must be >= 1");
  if (c.max_attempts < 1) throw InputError("max_attempts must be >= 1");
  if (c.min_chars == 0) throw InputError("min_chars must be >= 1");
  if (!(c.input_rate > 0) || !(c.output_rate > 0)) throw InputError("token rates must be positive");
  c.study.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("input not found: " + path.string());
  auto base = std::filesystem::absolute(path).parent_path();
  return parse(read_file(path), base);
}

PromptTemplates RunConfig::templates() const {
  if (!prompts_dir) return PromptTemplates::builtin();
  if (!std::filesystem::is_directory(*prompts_dir)) {
    throw InputError("input not found: " + prompts_dir->string());
  }
  return PromptTemplates::from_dir(*prompts_dir);
}

llm::RetryPolicy RunConfig::retry_policy() const {
  llm::RetryPolicy p;
  p.max_attempts = max_attempts;
  p.base_delay = std::chrono::milliseconds(backoff_base_ms);
  return p;
}

eval::TopicParams RunConfig::topic_params() const {
  eval::TopicParams p;
  p.min_topic_size = topic_min_size;
  p.seed = seed;
  p.similarity_threshold = topic_threshold;
  return p;
}

std::shared_ptr<llm::Backend> RunConfig::make_backend() const {
  if (backend == "mock") {
    if (!mock_script) throw InputError("backend=mock requires mock_script");
    llm::UnmatchedPolicy unmatched;
    unmatched.canned_text = mock_unmatched;
    return llm::MockBackend::from_file(*mock_script, unmatched);
  }
  if (endpoint.empty()) throw InputError("backend=live requires endpoint");
  const char* key = std::getenv(llm::kApiKeyEnv);
  if (!key || !*key) {
    throw InputError(std::string("backend=live requires the ") + llm::kApiKeyEnv +
                     " environment variable");
  }
  llm::HttpBackendConfig http;
  http.endpoint_url = endpoint;
  http.api_key = key;
  http.auth_header = auth_header;
  http.timeout = std::chrono::seconds(request_timeout_s);
  return std::make_shared<llm::HttpBackend>(http);
}

}  // namespace qualpipe
