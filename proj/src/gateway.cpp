#include "moa/gateway.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace moa {

using nlohmann::json;

std::string_view to_string(ChatRole role) noexcept {
  switch (role) {
    case ChatRole::System: return "system";
    case ChatRole::User: return "user";
    case ChatRole::Assistant: return "assistant";
  }
  return "user";
}

namespace {

ChatRole parse_role(std::string_view s) {
  if (s == "system") return ChatRole::System;
  if (s == "user") return ChatRole::User;
  if (s == "assistant") return ChatRole::Assistant;
  throw Error(Errc::InvalidArgument, "invalid chat role '" + std::string(s) + "'");
}

}  // namespace

void ChatRequest::validate() const {
  if (messages.empty()) throw Error(Errc::InvalidArgument, "chat request has no messages");
  if (max_tokens <= 0) throw Error(Errc::InvalidArgument, "max_tokens must be positive");
  if (!(temperature >= 0.0)) throw Error(Errc::InvalidArgument, "temperature must be >= 0");
}

json ChatRequest::to_json() const {
  json msgs = json::array();
  for (const auto& m : messages)
    msgs.push_back(json{{"role", std::string(to_string(m.role))}, {"content", m.content}});
  json body{{"model", model},
            {"messages", std::move(msgs)},
            {"temperature", temperature},
            {"max_tokens", max_tokens}};
  if (seed) body["seed"] = *seed;
  return body;
}

ChatRequest ChatRequest::from_json(const json& body) {
  ChatRequest r;
  try {
    r.model = body.value("model", std::string());
    for (const auto& m : body.at("messages"))
      r.messages.push_back({parse_role(m.at("role").get<std::string>()),
                            m.at("content").get<std::string>()});
    r.temperature = body.value("temperature", 1.0);
    r.max_tokens = body.value("max_tokens", 1024);
    if (auto it = body.find("seed"); it != body.end() && !it->is_null())
      r.seed = it->get<std::int64_t>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("bad chat request: ") + e.what());
  }
  r.validate();
  return r;
}

std::set<int> RetryPolicy::default_retryable_statuses() {
  std::set<int> s{408, 429};
  for (int code = 500; code < 600; ++code) s.insert(code);
  return s;
}

void RetryPolicy::validate() const {
  if (max_attempts < 1 || max_attempts > 10)
    throw Error(Errc::InvalidArgument, "max_attempts must be in [1, 10]");
  if (base_backoff_ms < 0) throw Error(Errc::InvalidArgument, "base_backoff_ms must be >= 0");
  if (!(backoff_multiplier >= 1.0))
    throw Error(Errc::InvalidArgument, "backoff_multiplier must be >= 1");
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  const double ms = base_backoff_ms * std::pow(backoff_multiplier, attempt - 1);
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

std::pair<std::string, std::string> split_base_url(std::string_view base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string_view::npos)
    throw Error(Errc::InvalidArgument, "base_url lacks a scheme: " + std::string(base_url));
  const auto path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(base_url), std::string()};
  std::string path(base_url.substr(path_start));
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {std::string(base_url.substr(0, path_start)), path};
}

std::pair<std::string, Usage> parse_completion_body(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedResponse, std::string("invalid JSON: ") + e.what());
  }
  const json* content = nullptr;
  if (j.is_object() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& choice = j["choices"][0];
    if (choice.is_object() && choice.contains("message") && choice["message"].is_object() &&
        choice["message"].contains("content"))
      content = &choice["message"]["content"];
  }
  if (content == nullptr || !content->is_string())
    throw Error(Errc::MalformedResponse, "missing choices[0].message.content");
  Usage usage;
  if (auto it = j.find("usage"); it != j.end() && it->is_object()) {
    usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
    usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
  }
  return {content->get<std::string>(), usage};
}

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)) {}

Sample Gateway::complete(const EndpointSpec& endpoint, const ChatRequest& request,
                         const RetryPolicy& policy) const {
  request.validate();
  policy.validate();
  const auto [origin, prefix] = split_base_url(endpoint.base_url);
  const std::string path = prefix + "/v1/chat/completions";
  const std::string body = request.to_json().dump();

  httplib::Headers headers;
  if (!endpoint.api_key_env.empty()) {
    if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key != nullptr)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const auto timeout = options_.timeout;
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);

  for (int attempt = 1;; ++attempt) {
    httplib::Client client(origin);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body, "application/json");
    const double elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    AttemptEvent event{endpoint.name, attempt, 0, {}};
    std::optional<Error> failure;
    bool retryable = false;
    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                              elapsed_ms >= 0.9 * static_cast<double>(timeout.count()));
      event.error = httplib::to_string(err);
      failure = timed_out ? Error(Errc::Timeout, endpoint.name + ": " + event.error)
                          : Error(Errc::EndpointError, endpoint.name + ": " + event.error, 0);
      retryable = true;
    } else {
      event.status = res->status;
      if (res->status < 200 || res->status >= 300) {
        event.error = "HTTP " + std::to_string(res->status);
        failure = Error(Errc::EndpointError,
                        endpoint.name + ": HTTP " + std::to_string(res->status) + ": " + res->body,
                        res->status);
        retryable = policy.is_retryable(res->status);
      }
    }
    if (options_.on_attempt) options_.on_attempt(event);

    if (!failure) {
      auto [text, usage] = parse_completion_body(res->body);
      Sample s;
      s.proposer_name = endpoint.name;
      s.text = std::move(text);
      s.usage = usage;
      s.latency_ms = elapsed_ms;
      return s;
    }
    if (!retryable || attempt >= policy.max_attempts) throw *failure;
    const auto delay = policy.backoff(attempt);
    if (options_.sleep)
      options_.sleep(delay);
    else
      std::this_thread::sleep_for(delay);
  }
}

std::vector<SlotResult> Gateway::fan_out(std::span<const CompletionJob> jobs, int parallelism,
                                         const RetryPolicy& policy) const {
  if (parallelism < 1) throw Error(Errc::InvalidArgument, "parallelism must be >= 1");
  std::vector<std::optional<SlotResult>> slots(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
      try {
        slots[i].emplace(complete(jobs[i].endpoint, jobs[i].request, policy));
      } catch (const Error& e) {
        slots[i].emplace(e);
      } catch (const std::exception& e) {
        slots[i].emplace(Error(Errc::EndpointError, e.what()));
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(parallelism), jobs.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
  }
  std::vector<SlotResult> out;
  out.reserve(jobs.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace moa
