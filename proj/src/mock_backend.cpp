#include <fstream>
#include <istream>

#include <json.hpp>

#include "qualpipe/error.hpp"
#include "qualpipe/gateway.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe::llm {

using nlohmann::json;

namespace {

using Status = AttemptResponse::Status;

std::optional<Status> parse_status(std::string_view s) {
  if (s == "ok") return Status::ok;
  if (s == "throttled") return Status::throttled;
  if (s == "content_filtered") return Status::content_filtered;
  if (s == "malformed_output") return Status::malformed_output;
  if (s == "network") return Status::network;
  if (s == "other") return Status::other;
  return std::nullopt;
}

std::string_view status_name(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::throttled: return "throttled";
    case Status::content_filtered: return "content_filtered";
    case Status::malformed_output: return "malformed_output";
    case Status::network: return "network";
    case Status::other: return "other";
  }
  return "other";
}

}  // namespace

MockBackend::MockBackend(std::vector<ScriptEntry> entries, UnmatchedPolicy unmatched)
    : unmatched_(std::move(unmatched)) {
  for (auto& e : entries) {
    auto tag = e.request_tag;
    queues_[tag].entries.push_back(std::move(e));
  }
}

std::vector<ScriptEntry> MockBackend::parse_script(std::istream& in) {
  std::vector<ScriptEntry> entries;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (text::trim(line).empty()) continue;
    auto where = "mock script line " + std::to_string(line_number);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InputError(where + ": malformed JSON");
    ScriptEntry e;
    try {
      e.request_tag = j.at("request_tag").get<std::string>();
      e.response_text = j.value("response_text", "");
      auto outcome = j.value("outcome", "ok");
      auto status = parse_status(outcome);
      if (!status) throw InputError(where + ": unknown outcome " + outcome);
      e.status = *status;
      if (j.contains("input_tokens")) e.input_tokens = j.at("input_tokens").get<std::uint64_t>();
      if (j.contains("output_tokens")) e.output_tokens = j.at("output_tokens").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      throw InputError(where + ": " + ex.what());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::shared_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& path,
                                                    UnmatchedPolicy unmatched) {
  std::ifstream in(path);
  if (!in) throw InputError("input not found: mock script " + path.string());
  return std::make_shared<MockBackend>(parse_script(in), std::move(unmatched));
}

AttemptResponse MockBackend::send(const CompletionRequest& request) {
  ScriptEntry entry;
  {
    std::lock_guard lock(mu_);
    ++calls_;
    auto it = queues_.find(request.request_tag);
    if (it == queues_.end()) {
      AttemptResponse r;
      if (unmatched_.canned_text) {
        r.text = *unmatched_.canned_text;
        r.input_tokens = estimate_prompt_tokens(request);
        r.output_tokens = estimate_tokens(r.text);
      } else {
        r.status = Status::malformed_output;
        r.detail = "no scripted response for " + request.request_tag;
      }
      return r;
    }
    auto& q = it->second;
    entry = q.entries[std::min(q.next, q.entries.size() - 1)];
    if (q.next < q.entries.size()) ++q.next;
  }
  AttemptResponse r;
  r.status = entry.status;
  if (entry.status == Status::ok) {
    r.text = entry.response_text;
    r.input_tokens = entry.input_tokens.value_or(estimate_prompt_tokens(request));
    r.output_tokens = entry.output_tokens.value_or(estimate_tokens(r.text));
  } else {
    r.detail = "scripted " + std::string(status_name(entry.status));
  }
  return r;
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::string to_script_line(const ScriptEntry& e) {
  json j = {{"request_tag", e.request_tag}, {"response_text", e.response_text}};
  if (e.status != Status::ok) j["outcome"] = std::string(status_name(e.status));
  if (e.input_tokens) j["input_tokens"] = *e.input_tokens;
  if (e.output_tokens) j["output_tokens"] = *e.output_tokens;
  return j.dump();
}

}  // namespace qualpipe::llm
