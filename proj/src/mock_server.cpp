#include "moa/mock_server.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "moa/ensemble.hpp"
#include "moa/metrics.hpp"

// After Eigen: <resolv.h> (via httplib) defines a _res macro.
#include <httplib.h>

namespace moa::mock {

using nlohmann::json;

namespace {

std::string hex(std::uint64_t v, int digits = 8) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return out;
}

double unit_interval(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

const ChatMessage* last_user_message(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it)
    if (it->role == ChatRole::User) return &*it;
  return nullptr;
}

bool is_aggregation_request(const ChatRequest& request) {
  for (const auto& m : request.messages)
    if (m.content.find(kAggregationSentinel) != std::string::npos) return true;
  return false;
}

MockItem fallback_item(std::string_view text) {
  const auto h = stable_hash(text);
  MockItem item;
  item.id = "h" + hex(h, 16);
  item.text = std::string(text);
  item.reference = "ans" + hex(h);
  for (int k = 0; k < 16; ++k) item.distractors.push_back("alt" + std::to_string(k) + hex(mix64(h + k)));
  return item;
}

json completion_body(const ChatRequest& request, const std::string& content) {
  const auto digest = stable_hash(request.to_json().dump());
  return json{{"id", "mock-" + hex(digest, 16)},
              {"object", "chat.completion"},
              {"model", request.model},
              {"choices",
               json::array({json{{"index", 0},
                                 {"message", {{"role", "assistant"}, {"content", content}}},
                                 {"finish_reason", "stop"}}})},
              {"usage",
               {{"prompt_tokens", estimate_tokens(request.messages)},
                {"completion_tokens", static_cast<std::int64_t>((content.size() + 3) / 4)}}}};
}

}  // namespace

void MockPersona::validate() const {
  if (name.empty()) throw Error(Errc::ConfigError, "persona name is empty");
  if (!(accuracy >= 0.0 && accuracy <= 1.0))
    throw Error(Errc::ConfigError, "persona '" + name + "': accuracy outside [0, 1]");
  if (vocab_spread < 1) throw Error(Errc::ConfigError, "persona '" + name + "': vocab_spread < 1");
  if (latency_ms < 0 || latency_jitter_ms < 0)
    throw Error(Errc::ConfigError, "persona '" + name + "': negative latency");
}

MockDataset::MockDataset(std::vector<MockItem> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].distractors.empty())
      throw Error(Errc::ConfigError, "mock item '" + items_[i].id + "' has no distractors");
    by_text_.emplace(items_[i].text, i);
  }
}

MockDataset MockDataset::synthesize(const std::vector<Prompt>& prompts, int pool_size) {
  if (pool_size < 1) throw Error(Errc::ConfigError, "distractor pool must be >= 1");
  std::vector<MockItem> items;
  items.reserve(prompts.size());
  for (const auto& p : prompts) {
    MockItem item;
    item.id = p.id;
    item.text = p.text;
    const auto h = stable_hash(p.id);
    item.reference = p.reference_answer.value_or("ans" + hex(h));
    for (int k = 0; k < pool_size; ++k)
      item.distractors.push_back("alt" + std::to_string(k) + hex(mix64(h ^ static_cast<std::uint64_t>(k + 1))));
    items.push_back(std::move(item));
  }
  return MockDataset(std::move(items));
}

const MockItem* MockDataset::find_by_text(std::string_view text) const {
  auto it = by_text_.find(text);
  return it == by_text_.end() ? nullptr : &items_[it->second];
}

std::size_t MockDataset::min_pool_size() const noexcept {
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (const auto& item : items_) m = std::min(m, item.distractors.size());
  return items_.empty() ? 0 : m;
}

std::vector<std::string> parse_numbered_responses(std::string_view user_content) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= user_content.size()) {
    const auto nl = user_content.find('\n', pos);
    const auto line =
        user_content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    const std::string prefix = std::to_string(out.size() + 1) + ". ";
    if (line.substr(0, prefix.size()) == prefix) out.emplace_back(line.substr(prefix.size()));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

std::string majority_answer(const std::vector<std::string>& answers) {
  std::map<std::string, int> counts;
  for (const auto& a : answers) ++counts[a];
  std::string best;
  int best_count = 0;
  // std::map iterates in lexicographic order, so the first maximum wins ties.
  for (const auto& [answer, count] : counts) {
    if (count > best_count) {
      best = answer;
      best_count = count;
    }
  }
  return best;
}

json respond(const MockPersona& persona, const MockDataset& dataset, const ChatRequest& request) {
  const ChatMessage* user = last_user_message(request);
  const std::string_view text = user ? std::string_view(user->content) : std::string_view();

  if (is_aggregation_request(request)) {
    std::vector<std::string> answers;
    for (const auto& r : parse_numbered_responses(text)) {
      auto a = extract_answer(r);
      const auto first = a.find_first_not_of(" \t\r");
      const auto last = a.find_last_not_of(" \t\r");
      answers.push_back(first == std::string::npos ? std::string() : a.substr(first, last - first + 1));
    }
    return completion_body(request, majority_answer(answers));
  }

  MockItem fallback;
  const MockItem* item = dataset.find_by_text(text);
  if (item == nullptr) {
    fallback = fallback_item(text);
    item = &fallback;
  }
  // Temperature 0 is greedy: the seed does not matter.
  const std::string draw = request.temperature <= 0.0 ? std::string("greedy")
                                                      : std::to_string(request.seed.value_or(0));
  const auto h = stable_hash(persona.name + '\0' + item->id + '\0' + draw);
  std::string content;
  if (unit_interval(h) < persona.accuracy) {
    content = item->reference;
  } else {
    // Softmax over the persona's phrasings with logits -k: option k has
    // weight exp(-k / T), so T -> 0 is greedy and higher T flattens the pick.
    std::size_t k = 0;
    if (request.temperature > 0.0 && persona.vocab_spread > 1) {
      double total = 0.0;
      for (int j = 0; j < persona.vocab_spread; ++j) total += std::exp(-j / request.temperature);
      double target = unit_interval(mix64(h)) * total;
      for (; k + 1 < static_cast<std::size_t>(persona.vocab_spread); ++k) {
        target -= std::exp(-static_cast<double>(k) / request.temperature);
        if (target < 0.0) break;
      }
    }
    const auto pool = item->distractors.size();
    const auto offset = stable_hash(persona.name) % pool;
    content = item->distractors[(offset + k) % pool];
  }
  return completion_body(request, content);
}

MockServer::MockServer(std::vector<MockPersona> personas, MockDataset dataset)
    : personas_(std::move(personas)), dataset_(std::move(dataset)) {
  for (const auto& p : personas_) {
    p.validate();
    if (dataset_.min_pool_size() < static_cast<std::size_t>(p.vocab_spread) && !dataset_.items().empty())
      throw Error(Errc::ConfigError, "distractor pool smaller than vocab_spread of '" + p.name + "'");
    if (!served_.emplace(p.name, std::make_unique<std::atomic<int>>(0)).second)
      throw Error(Errc::ConfigError, "duplicate persona '" + p.name + "'");
  }
}

MockServer::~MockServer() { stop(); }

void MockServer::handle_completion(const std::string& persona_name, const std::string& body, int& status,
                                   std::string& response) {
  const MockPersona* persona = nullptr;
  for (const auto& p : personas_)
    if (p.name == persona_name) persona = &p;
  if (persona == nullptr) {
    status = 404;
    response = json{{"error", {{"message", "unknown persona " + persona_name}}}}.dump();
    return;
  }
  {
    std::lock_guard lock(log_mutex_);
    log_.push_back({persona_name, body});
  }
  const int served = served_.at(persona_name)->fetch_add(1);
  if (served < static_cast<int>(persona->failure_script.size())) {
    status = persona->failure_script[static_cast<std::size_t>(served)];
    response = json{{"error", {{"message", "scripted failure"}, {"code", status}}}}.dump();
    return;
  }
  ChatRequest request;
  try {
    request = ChatRequest::from_json(json::parse(body));
  } catch (const std::exception& e) {
    status = 400;
    response = json{{"error", {{"message", e.what()}}}}.dump();
    return;
  }
  int delay = persona->latency_ms;
  if (persona->latency_jitter_ms > 0)
    delay += static_cast<int>(stable_hash(body) % static_cast<std::uint64_t>(persona->latency_jitter_ms));
  if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
  status = 200;
  response = respond(*persona, dataset_, request).dump();
}

void MockServer::start(int port, const std::string& host) {
  if (server_) throw Error(Errc::InvalidArgument, "mock server already started");
  server_ = std::make_unique<httplib::Server>();
  server_->new_task_queue = [] { return new httplib::ThreadPool(64); };
  // httplib's default adds SO_REUSEPORT, which lets a second server share the
  // port silently.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  server_->Post(R"(/persona/([^/]+)/v1/chat/completions)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  const int now = current_.fetch_add(1) + 1;
                  int seen = max_seen_.load();
                  while (now > seen && !max_seen_.compare_exchange_weak(seen, now)) {
                  }
                  int status = 500;
                  std::string body;
                  try {
                    handle_completion(req.matches[1], req.body, status, body);
                  } catch (const std::exception& e) {
                    status = 500;
                    body = json{{"error", {{"message", e.what()}}}}.dump();
                  }
                  current_.fetch_sub(1);
                  res.status = status;
                  res.set_content(body, "application/json");
                });
  server_->Get("/debug/inflight", [this](const httplib::Request&, httplib::Response& res) {
    const auto stats = inflight();
    res.set_content(json{{"current", stats.current}, {"max_seen", stats.max_seen}}.dump(), "application/json");
  });
  server_->Get("/debug/log", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& entry : request_log()) out.push_back({{"persona", entry.persona}, {"body", entry.body}});
    res.set_content(out.dump(), "application/json");
  });

  host_ = host;
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ <= 0) {
      server_.reset();
      throw Error(Errc::PortInUse, "could not bind any port on " + host);
    }
  } else {
    if (!server_->bind_to_port(host, port)) {
      server_.reset();
      throw Error(Errc::PortInUse, host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void MockServer::stop() {
  if (!server_) return;
  server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

void MockServer::wait() {
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::base_url(const std::string& persona) const {
  return "http://" + host_ + ":" + std::to_string(port_) + "/persona/" + persona;
}

InflightStats MockServer::inflight() const noexcept { return {current_.load(), max_seen_.load()}; }

void MockServer::reset_inflight() noexcept { max_seen_.store(current_.load()); }

std::vector<LoggedRequest> MockServer::request_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

void MockServer::clear_log() {
  std::lock_guard lock(log_mutex_);
  log_.clear();
}

MockConfig parse_mock_config(const json& j, const std::filesystem::path& base_dir) {
  MockConfig config;
  try {
    for (const auto& p : j.at("personas")) {
      MockPersona persona;
      persona.name = p.at("name").get<std::string>();
      persona.accuracy = p.value("accuracy", 1.0);
      persona.vocab_spread = p.value("vocab_spread", 1);
      persona.latency_ms = p.value("latency_ms", 0);
      persona.latency_jitter_ms = p.value("latency_jitter_ms", 0);
      persona.failure_script = p.value("failure_script", std::vector<int>{});
      persona.validate();
      config.personas.push_back(std::move(persona));
    }
    if (j.contains("prompts")) {
      std::vector<MockItem> items;
      for (const auto& p : j.at("prompts"))
        items.push_back({p.at("id").get<std::string>(), p.at("text").get<std::string>(),
                         p.at("reference").get<std::string>(),
                         p.at("distractors").get<std::vector<std::string>>()});
      config.dataset = MockDataset(std::move(items));
    } else if (j.contains("dataset")) {
      std::filesystem::path path = j.at("dataset").get<std::string>();
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      int pool = j.value("distractor_pool", 0);
      for (const auto& p : config.personas) pool = std::max(pool, p.vocab_spread);
      config.dataset = MockDataset::synthesize(load_dataset(path), pool);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("mock config: ") + e.what());
  }
  return config;
}

MockConfig load_mock_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open mock config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return parse_mock_config(j, path.parent_path());
}

std::unique_ptr<MockServer> serve(std::vector<MockPersona> personas, MockDataset dataset, int port) {
  auto server = std::make_unique<MockServer>(std::move(personas), std::move(dataset));
  server->start(port);
  return server;
}

}  // namespace moa::mock
