#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "qualpipe/error.hpp"
#include "qualpipe/gateway.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe::llm {

using nlohmann::json;
using Status = AttemptResponse::Status;

namespace {

bool mentions_content_policy(const json& body) {
  auto err = body.find("error");
  if (err == body.end() || !err->is_object()) return false;
  auto code = text::to_lower(err->value("code", ""));
  auto message = text::to_lower(err->value("message", ""));
  return code == "content_filter" || code == "content_policy_violation" ||
         message.find("content management policy") != std::string::npos ||
         message.find("content_filter") != std::string::npos;
}

std::string error_message(const json& body, int status) {
  if (body.is_object()) {
    auto err = body.find("error");
    if (err != body.end() && err->is_object() && err->contains("message") &&
        (*err)["message"].is_string()) {
      return "HTTP " + std::to_string(status) + ": " + (*err)["message"].get<std::string>();
    }
  }
  return "HTTP " + std::to_string(status);
}

}  // namespace

std::string build_chat_request_body(const CompletionRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.text}});
  json body = {{"model", request.model_name},
               {"messages", std::move(messages)},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output_tokens}};
  return body.dump();
}

AttemptResponse interpret_chat_response(int http_status, std::string_view body,
                                        const CompletionRequest& request) {
  AttemptResponse r;
  json j = json::parse(body, nullptr, false);

  if (http_status == 429) {
    r.status = Status::throttled;
    r.detail = error_message(j, http_status);
    return r;
  }
  if (http_status == 408 || http_status >= 500) {
    r.status = Status::network;
    r.detail = error_message(j, http_status);
    return r;
  }
  if (http_status != 200) {
    r.status = !j.is_discarded() && mentions_content_policy(j) ? Status::content_filtered
                                                                : Status::other;
    r.detail = error_message(j, http_status);
    return r;
  }

  if (j.is_discarded() || !j.is_object()) {
    r.status = Status::malformed_output;
    r.detail = "response body is not JSON";
    return r;
  }
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) {
    r.status = Status::malformed_output;
    r.detail = "response has no choices";
    return r;
  }
  const auto& choice = choices->front();
  std::string content;
  if (auto msg = choice.find("message"); msg != choice.end() && msg->is_object()) {
    if (auto c = msg->find("content"); c != msg->end() && c->is_string()) content = c->get<std::string>();
  }
  if (choice.value("finish_reason", "") == "content_filter" && content.empty()) {
    r.status = Status::content_filtered;
    r.detail = "completion stopped by content filter";
    return r;
  }
  if (content.empty()) {
    r.status = Status::malformed_output;
    r.detail = "response has no message content";
    return r;
  }
  r.text = std::move(content);
  if (auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
    if (usage->contains("prompt_tokens")) r.input_tokens = usage->value("prompt_tokens", std::uint64_t{0});
    if (usage->contains("completion_tokens")) {
      r.output_tokens = usage->value("completion_tokens", std::uint64_t{0});
    }
  }
  if (!r.input_tokens) r.input_tokens = estimate_prompt_tokens(request);
  if (!r.output_tokens) r.output_tokens = estimate_tokens(r.text);
  return r;
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto& url = config_.endpoint_url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InputError("endpoint must be an absolute URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (config_.api_key.empty()) {
    throw InputError(std::string("live backend needs a credential in ") + kApiKeyEnv);
  }
}

AttemptResponse HttpBackend::send(const CompletionRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  httplib::Headers headers;
  if (text::iequals(config_.auth_header, "Authorization")) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  } else {
    headers.emplace(config_.auth_header, config_.api_key);
  }

  auto res = client.Post(path_, headers, build_chat_request_body(request), "application/json");
  if (!res) {
    AttemptResponse r;
    r.status = Status::network;
    r.detail = "transport error: " + httplib::to_string(res.error());
    return r;
  }
  return interpret_chat_response(res->status, res->body, request);
}

}  // namespace qualpipe::llm
