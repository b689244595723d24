#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "moa/core.hpp"

namespace moa {

enum class ChatRole { System, User, Assistant };

std::string_view to_string(ChatRole role) noexcept;

struct ChatMessage {
  ChatRole role = ChatRole::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;

  void validate() const;

  // Wire body {"model","messages","temperature","max_tokens","seed"}; seed is
  // omitted when unset.
  nlohmann::json to_json() const;
  static ChatRequest from_json(const nlohmann::json& body);

  bool operator==(const ChatRequest&) const = default;
};

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;
  double backoff_multiplier = 2.0;
  std::set<int> retryable_statuses = default_retryable_statuses();

  static std::set<int> default_retryable_statuses();

  void validate() const;
  bool is_retryable(int status) const { return retryable_statuses.contains(status); }
  // Delay after failed attempt `attempt` (1-based).
  std::chrono::milliseconds backoff(int attempt) const;
};

struct AttemptEvent {
  std::string endpoint;
  int attempt = 0;
  int status = 0;  // 0 when no HTTP response was received
  std::string error;
};

struct GatewayOptions {
  std::chrono::milliseconds timeout{120'000};
  std::function<void(const AttemptEvent&)> on_attempt;
  // Replaces std::this_thread::sleep_for between retries when set.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct CompletionJob {
  EndpointSpec endpoint;
  ChatRequest request;
};

using SlotResult = std::variant<Sample, Error>;

// OpenAI-compatible chat-completions client. Stateless apart from its
// options; safe to share across threads.
class Gateway {
 public:
  explicit Gateway(GatewayOptions options = {});

  // POST {base_url}/v1/chat/completions. Returns the first choice's content
  // with usage and latency recorded; proposer_name is the endpoint name.
  Sample complete(const EndpointSpec& endpoint, const ChatRequest& request,
                  const RetryPolicy& policy = {}) const;

  // Runs jobs with at most `parallelism` in flight. result[i] belongs to
  // jobs[i]; failures stay in their slot.
  std::vector<SlotResult> fan_out(std::span<const CompletionJob> jobs, int parallelism,
                                  const RetryPolicy& policy = {}) const;

  const GatewayOptions& options() const noexcept { return options_; }

 private:
  GatewayOptions options_;
};

// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_base_url(std::string_view base_url);

// Parses an OpenAI chat-completion response body into text and usage.
// Throws MalformedResponse.
std::pair<std::string, Usage> parse_completion_body(std::string_view body);

}  // namespace moa
