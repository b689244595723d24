#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "moa/core.hpp"
#include "moa/gateway.hpp"

namespace httplib {
class Server;
}

namespace moa::mock {

struct MockPersona {
  std::string name;
  double accuracy = 1.0;     // probability of answering with the reference
  int vocab_spread = 1;      // distinct distractors this persona draws from
  int latency_ms = 0;
  int latency_jitter_ms = 0;  // extra delay in [0, jitter), hashed from the request
  std::vector<int> failure_script;  // statuses emitted before succeeding

  void validate() const;
};

struct MockItem {
  std::string id;
  std::string text;
  std::string reference;
  std::vector<std::string> distractors;
};

// Prompt lookup by text (the mock only sees messages, not ids).
class MockDataset {
 public:
  MockDataset() = default;
  explicit MockDataset(std::vector<MockItem> items);

  // Builds items from prompts with `pool_size` single-token distractors each.
  // Prompts without a reference get a generated one.
  static MockDataset synthesize(const std::vector<Prompt>& prompts, int pool_size);

  const MockItem* find_by_text(std::string_view text) const;
  const std::vector<MockItem>& items() const noexcept { return items_; }
  std::size_t min_pool_size() const noexcept;

 private:
  std::vector<MockItem> items_;
  std::map<std::string, std::size_t, std::less<>> by_text_;
};

// Deterministic chat-completion body for one request.
// Proposer mode answers the dataset item; aggregator mode (request carries
// the aggregation sentinel) returns the majority extracted answer among the
// numbered responses, ties broken lexicographically.
nlohmann::json respond(const MockPersona& persona, const MockDataset& dataset, const ChatRequest& request);

// Answers parsed from "k. text" lines numbered 1, 2, ... in order.
std::vector<std::string> parse_numbered_responses(std::string_view user_content);
std::string majority_answer(const std::vector<std::string>& answers);

struct InflightStats {
  int current = 0;
  int max_seen = 0;
};

struct LoggedRequest {
  std::string persona;
  std::string body;
};

// OpenAI-compatible test server. Personas are mounted at
// /persona/{name}/v1/chat/completions; /debug/inflight reports the
// concurrent-request gauge.
class MockServer {
 public:
  MockServer(std::vector<MockPersona> personas, MockDataset dataset);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  // port 0 picks a free port. Throws PortInUse when binding fails.
  void start(int port = 0, const std::string& host = "127.0.0.1");
  // Stops accepting and waits for in-flight requests to finish.
  void stop();
  // Blocks until stop() is called from another thread.
  void wait();

  int port() const noexcept { return port_; }
  std::string base_url(const std::string& persona) const;

  InflightStats inflight() const noexcept;
  void reset_inflight() noexcept;
  std::vector<LoggedRequest> request_log() const;
  void clear_log();

  const std::vector<MockPersona>& personas() const noexcept { return personas_; }

 private:
  void handle_completion(const std::string& persona_name, const std::string& body, int& status,
                         std::string& response);

  std::vector<MockPersona> personas_;
  MockDataset dataset_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::atomic<int> current_{0};
  std::atomic<int> max_seen_{0};
  std::map<std::string, std::unique_ptr<std::atomic<int>>> served_;
  mutable std::mutex log_mutex_;
  std::vector<LoggedRequest> log_;
};

struct MockConfig {
  std::vector<MockPersona> personas;
  MockDataset dataset;
};

// {"personas": [...], "prompts": [{"id","text","reference","distractors"}]}
// or {"personas": [...], "dataset": "file.jsonl", "distractor_pool": N}.
// Relative dataset paths resolve against `base_dir`.
MockConfig parse_mock_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
MockConfig load_mock_config(const std::filesystem::path& path);

std::unique_ptr<MockServer> serve(std::vector<MockPersona> personas, MockDataset dataset, int port = 0);

}  // namespace moa::mock
