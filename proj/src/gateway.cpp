#include "qualpipe/gateway.hpp"

#include <cmath>
#include <random>
#include <thread>

#include <json.hpp>

#include "qualpipe/error.hpp"

namespace qualpipe::llm {

using nlohmann::json;

void CompletionRequest::validate() const {
  if (messages.empty()) throw PreconditionError("completion request has no messages");
  const auto& first = messages.front().role;
  if (first != "system" && first != "user") {
    throw PreconditionError("first message must be from system or user, got: " + first);
  }
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw PreconditionError("temperature must lie in [0, 2]");
  }
  if (max_output_tokens == 0) throw PreconditionError("max_output_tokens must be positive");
}

std::string_view to_string(FailureCategory c) {
  switch (c) {
    case FailureCategory::throttled: return "throttled";
    case FailureCategory::content_filtered: return "content_filtered";
    case FailureCategory::malformed_output: return "malformed_output";
    case FailureCategory::network: return "network";
    case FailureCategory::other: return "other";
  }
  return "other";
}

std::optional<FailureCategory> parse_failure_category(std::string_view s) {
  for (auto c : {FailureCategory::throttled, FailureCategory::content_filtered,
                 FailureCategory::malformed_output, FailureCategory::network,
                 FailureCategory::other}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::uint64_t estimate_tokens(std::string_view s) { return (s.size() + 3) / 4; }

std::uint64_t estimate_prompt_tokens(const CompletionRequest& request) {
  std::size_t chars = 0;
  for (const auto& m : request.messages) chars += m.text.size();
  return (chars + 3) / 4;
}

std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::chrono::milliseconds RetryPolicy::delay_for(int retry, std::uint64_t seed) const {
  std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(retry) * 0x9E3779B97F4A7C15ULL));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double nominal = static_cast<double>(base_delay.count()) * std::pow(multiplier, retry - 1);
  double jittered = nominal * (1.0 + jitter * unit(rng));
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(jittered)));
}

TokenLedger record_usage(TokenLedger ledger, const CompletionResult& result) {
  ledger.total_input_tokens += result.input_tokens;
  ledger.total_output_tokens += result.output_tokens;
  return ledger;
}

CostReport cost_report(const TokenLedger& ledger) {
  if (!(ledger.input_rate > 0) || !(ledger.output_rate > 0)) {
    throw PreconditionError("token rates must be positive");
  }
  CostReport r;
  r.ledger = ledger;
  r.input_cost = static_cast<double>(ledger.total_input_tokens) / 1000.0 * ledger.input_rate;
  r.output_cost = static_cast<double>(ledger.total_output_tokens) / 1000.0 * ledger.output_rate;
  r.total_cost = r.input_cost + r.output_cost;
  return r;
}

void UsageAccumulator::add(std::uint64_t input_tokens, std::uint64_t output_tokens) {
  input_.fetch_add(input_tokens);
  output_.fetch_add(output_tokens);
}

RunLog::RunLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw InputError("cannot open run log " + path.string());
}

void RunLog::append(const RunLogEntry& e) {
  json line = {{"request_tag", e.request_tag},
               {"outcome", e.outcome},
               {"attempts", e.attempts},
               {"tokens", {{"input", e.input_tokens}, {"output", e.output_tokens}}}};
  std::lock_guard lock(mu_);
  out_ << line.dump() << '\n';
  out_.flush();
}

std::vector<RunLogEntry> RunLog::read(const std::filesystem::path& path) {
  std::vector<RunLogEntry> entries;
  std::ifstream in(path);
  if (!in) return entries;
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    RunLogEntry e;
    e.request_tag = j.value("request_tag", "");
    e.outcome = j.value("outcome", "");
    e.attempts = j.value("attempts", 0);
    if (auto t = j.find("tokens"); t != j.end() && t->is_object()) {
      e.input_tokens = t->value("input", std::uint64_t{0});
      e.output_tokens = t->value("output", std::uint64_t{0});
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

TokenLedger replay_ledger(const std::vector<RunLogEntry>& entries, double input_rate,
                          double output_rate) {
  TokenLedger ledger{0, 0, input_rate, output_rate};
  for (const auto& e : entries) {
    ledger.total_input_tokens += e.input_tokens;
    ledger.total_output_tokens += e.output_tokens;
  }
  return ledger;
}

Gateway::Gateway(std::shared_ptr<Backend> backend, RetryPolicy policy, Sleeper sleeper)
    : backend_(std::move(backend)), policy_(policy), sleeper_(std::move(sleeper)) {
  if (!backend_) throw PreconditionError("gateway needs a backend");
  if (policy_.max_attempts < 1) throw PreconditionError("max_attempts must be >= 1");
  if (!sleeper_) {
    sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

namespace {

FailureCategory category_of(AttemptResponse::Status s) {
  using S = AttemptResponse::Status;
  switch (s) {
    case S::throttled: return FailureCategory::throttled;
    case S::content_filtered: return FailureCategory::content_filtered;
    case S::malformed_output: return FailureCategory::malformed_output;
    case S::network: return FailureCategory::network;
    default: return FailureCategory::other;
  }
}

bool retryable(AttemptResponse::Status s) {
  return s == AttemptResponse::Status::throttled || s == AttemptResponse::Status::network;
}

}  // namespace

CompletionOutcome Gateway::complete(const CompletionRequest& request) {
  request.validate();
  const std::uint64_t seed = stable_hash(request.request_tag);
  for (int attempt = 1;; ++attempt) {
    AttemptResponse resp;
    try {
      resp = backend_->send(request);
    } catch (const std::exception& e) {
      resp.status = AttemptResponse::Status::network;
      resp.detail = e.what();
    }
    calls_.fetch_add(1);

    if (resp.status == AttemptResponse::Status::ok) {
      CompletionResult r;
      r.text = std::move(resp.text);
      r.input_tokens = resp.input_tokens.value_or(estimate_prompt_tokens(request));
      r.output_tokens = resp.output_tokens.value_or(estimate_tokens(r.text));
      r.attempts = attempt;
      usage_.add(r.input_tokens, r.output_tokens);
      if (log_) log_->append({request.request_tag, "ok", attempt, r.input_tokens, r.output_tokens});
      return r;
    }

    if (!retryable(resp.status) || attempt >= policy_.max_attempts) {
      GatewayFailure f{category_of(resp.status), attempt, std::move(resp.detail)};
      if (log_) log_->append({request.request_tag, std::string(to_string(f.category)), attempt, 0, 0});
      return f;
    }
    sleeper_(policy_.delay_for(attempt, seed));
  }
}

}  // namespace qualpipe::llm
