#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace qualpipe::llm {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string text;
};

inline constexpr double kDefaultTemperature = 0.2;

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  std::string model_name;
  double temperature = kDefaultTemperature;
  std::uint32_t max_output_tokens = 4096;
  std::string request_tag;  // stage plus unit key, e.g. "gen:<group_key>"

  // Throws PreconditionError on empty messages, a leading assistant
  // message, temperature outside [0,2] or a zero token cap.
  void validate() const;
};

struct CompletionResult {
  std::string text;
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  int attempts = 1;
};

enum class FailureCategory { throttled, content_filtered, malformed_output, network, other };

std::string_view to_string(FailureCategory c);
std::optional<FailureCategory> parse_failure_category(std::string_view s);

struct GatewayFailure {
  FailureCategory category = FailureCategory::other;
  int attempts = 1;
  std::string detail;
};

using CompletionOutcome = std::variant<CompletionResult, GatewayFailure>;

inline bool succeeded(const CompletionOutcome& o) {
  return std::holds_alternative<CompletionResult>(o);
}

// Outcome of a single provider round trip, before retry handling.
struct AttemptResponse {
  enum class Status { ok, throttled, content_filtered, malformed_output, network, other };
  Status status = Status::ok;
  std::string text;
  std::optional<std::uint64_t> input_tokens;
  std::optional<std::uint64_t> output_tokens;
  std::string detail;
};

class Backend {
 public:
  virtual ~Backend() = default;
  // Must be safe to call concurrently.
  virtual AttemptResponse send(const CompletionRequest& request) = 0;
};

// ceil(chars / 4); the fallback when a provider reports no usage.
std::uint64_t estimate_tokens(std::string_view s);
std::uint64_t estimate_prompt_tokens(const CompletionRequest& request);

// Exponential backoff with multiplicative jitter. With jitter <= 1/3 and
// multiplier >= 2 successive delays never decrease.
struct RetryPolicy {
  int max_attempts = 6;
  std::chrono::milliseconds base_delay{2000};
  double multiplier = 2.0;
  double jitter = 0.25;

  // Delay before retry number `retry` (1-based). Deterministic in `seed`.
  std::chrono::milliseconds delay_for(int retry, std::uint64_t seed) const;
};

// 64-bit FNV-1a, stable across platforms and runs.
std::uint64_t stable_hash(std::string_view s);

inline constexpr double kDefaultInputRate = 0.01;   // currency per 1K tokens
inline constexpr double kDefaultOutputRate = 0.03;

struct TokenLedger {
  std::uint64_t total_input_tokens = 0;
  std::uint64_t total_output_tokens = 0;
  double input_rate = kDefaultInputRate;
  double output_rate = kDefaultOutputRate;
};

TokenLedger record_usage(TokenLedger ledger, const CompletionResult& result);

struct CostReport {
  TokenLedger ledger;
  double input_cost = 0;
  double output_cost = 0;
  double total_cost = 0;
};

// cost = tokens / 1000 * rate. Throws PreconditionError for non-positive rates.
CostReport cost_report(const TokenLedger& ledger);

// Shared token totals updated by concurrent workers.
class UsageAccumulator {
 public:
  void add(std::uint64_t input_tokens, std::uint64_t output_tokens);
  std::uint64_t input_tokens() const { return input_.load(); }
  std::uint64_t output_tokens() const { return output_.load(); }

 private:
  std::atomic<std::uint64_t> input_{0};
  std::atomic<std::uint64_t> output_{0};
};

struct RunLogEntry {
  std::string request_tag;
  std::string outcome;  // "ok" or a failure category
  int attempts = 0;
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
};

// Append-only NDJSON log of every gateway call; line order is unspecified
// under concurrency.
class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& path);
  void append(const RunLogEntry& entry);

  static std::vector<RunLogEntry> read(const std::filesystem::path& path);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// Sums tokens of successful calls in a run log.
TokenLedger replay_ledger(const std::vector<RunLogEntry>& entries, double input_rate,
                          double output_rate);

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, RetryPolicy policy, Sleeper sleeper = {});

  // Retries throttling and transport failures up to the attempt cap;
  // content-policy rejections and malformed provider output fail at once.
  CompletionOutcome complete(const CompletionRequest& request);

  void set_run_log(RunLog* log) { log_ = log; }
  const RetryPolicy& policy() const { return policy_; }
  const UsageAccumulator& usage() const { return usage_; }
  std::uint64_t backend_calls() const { return calls_.load(); }

 private:
  std::shared_ptr<Backend> backend_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  RunLog* log_ = nullptr;
  UsageAccumulator usage_;
  std::atomic<std::uint64_t> calls_{0};
};

// Scripted backend keyed by request_tag. Entries sharing a tag are served
// in file order; once exhausted the last one repeats.
struct ScriptEntry {
  std::string request_tag;
  AttemptResponse::Status status = AttemptResponse::Status::ok;
  std::string response_text;
  std::optional<std::uint64_t> input_tokens;
  std::optional<std::uint64_t> output_tokens;
};

struct UnmatchedPolicy {
  // When unset, unmatched tags fail as malformed_output.
  std::optional<std::string> canned_text;
};

class MockBackend final : public Backend {
 public:
  explicit MockBackend(std::vector<ScriptEntry> entries, UnmatchedPolicy unmatched = {});

  static std::vector<ScriptEntry> parse_script(std::istream& in);
  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& path,
                                                UnmatchedPolicy unmatched = {});

  AttemptResponse send(const CompletionRequest& request) override;
  std::size_t calls() const;

 private:
  struct Queue {
    std::vector<ScriptEntry> entries;
    std::size_t next = 0;
  };
  mutable std::mutex mu_;
  std::map<std::string, Queue> queues_;
  UnmatchedPolicy unmatched_;
  std::size_t calls_ = 0;
};

std::string to_script_line(const ScriptEntry& entry);

// Adapts a callable; handy for tests and fault injection.
class CallbackBackend final : public Backend {
 public:
  using Fn = std::function<AttemptResponse(const CompletionRequest&)>;
  explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}
  AttemptResponse send(const CompletionRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// Chat-completions over HTTP(S) in the common OpenAI-compatible wire format.
struct HttpBackendConfig {
  std::string endpoint_url;  // full URL, e.g. https://host/v1/chat/completions
  std::string api_key;
  std::string auth_header = "Authorization";  // "api-key" for Azure-style deployments
  std::chrono::seconds timeout{120};
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  AttemptResponse send(const CompletionRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::string origin_;
  std::string path_;
};

std::string build_chat_request_body(const CompletionRequest& request);

// Maps a provider HTTP response onto an attempt status.
AttemptResponse interpret_chat_response(int http_status, std::string_view body,
                                        const CompletionRequest& request);

inline constexpr const char* kApiKeyEnv = "QUALLM_API_KEY";

}  // namespace qualpipe::llm
