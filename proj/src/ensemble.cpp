#include "moa/ensemble.hpp"

#include <fstream>
#include <sstream>

namespace moa {

namespace {

constexpr std::string_view kStandardSystem =
    "You have been provided with a set of candidate responses to the user query shown below. "
    "Your task is to synthesize these responses into a single, high-quality response. "
    "Evaluate the candidates critically: some of them may be incomplete, biased or wrong. "
    "Do not copy any single candidate verbatim; write one accurate, well-structured answer "
    "to the original query.";

constexpr std::string_view kStandardUser = "Responses:\n{{responses}}\n\nOriginal query:\n{{query}}";

std::string substitute(std::string_view tmpl, std::string_view query, std::string_view responses) {
  static constexpr std::string_view kQuery = "{{query}}";
  static constexpr std::string_view kResponses = "{{responses}}";
  std::string out;
  out.reserve(tmpl.size() + query.size() + responses.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.substr(i, kQuery.size()) == kQuery) {
      out += query;
      i += kQuery.size();
    } else if (tmpl.substr(i, kResponses.size()) == kResponses) {
      out += responses;
      i += kResponses.size();
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

std::vector<ChatMessage> aggregation_messages(const AggregationTemplate& tmpl, std::string user) {
  std::vector<ChatMessage> msgs;
  if (!tmpl.system.empty()) msgs.push_back({ChatRole::System, tmpl.system});
  msgs.push_back({ChatRole::User, std::move(user)});
  return msgs;
}

void check_budget(const EndpointSpec& endpoint, const std::vector<ChatMessage>& messages) {
  const auto estimate = estimate_tokens(messages);
  if (estimate > endpoint.max_context_tokens)
    throw Error(Errc::ContextBudgetExceeded,
                "aggregation prompt for '" + endpoint.name + "' is ~" + std::to_string(estimate) +
                    " tokens, budget " + std::to_string(endpoint.max_context_tokens));
}

const EndpointSpec& lookup(const EndpointRegistry& registry, const std::string& name) {
  auto it = registry.find(name);
  if (it == registry.end()) throw Error(Errc::UnknownEndpointName, "'" + name + "'");
  return it->second;
}

std::int64_t aggregator_seed(std::int64_t base_seed, const EndpointSpec& aggregator, int step) {
  return derive_seed(base_seed, "aggregate:" + aggregator.name, step);
}

}  // namespace

AggregationTemplate AggregationTemplate::standard() {
  return {"moa-agg-v1", std::string(kStandardSystem), std::string(kStandardUser)};
}

AggregationTemplate AggregationTemplate::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open template " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  auto tmpl = standard();
  tmpl.version = "file:" + path.filename().string();
  tmpl.user = buf.str();
  if (tmpl.user.find("{{responses}}") == std::string::npos ||
      tmpl.user.find("{{query}}") == std::string::npos)
    throw Error(Errc::ConfigError, "template must contain {{responses}} and {{query}}");
  return tmpl;
}

std::string render_numbered_responses(const std::vector<Sample>& responses) {
  std::string out;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (i > 0) out += '\n';
    out += std::to_string(i + 1);
    out += ". ";
    out += responses[i].text;
  }
  return out;
}

std::string build_aggregation_prompt(const Prompt& original, const std::vector<Sample>& responses,
                                     const AggregationTemplate& tmpl) {
  if (responses.empty()) throw Error(Errc::EmptyResponses, "nothing to aggregate");
  return substitute(tmpl.user, original.text, render_numbered_responses(responses));
}

std::int64_t estimate_tokens(const std::vector<ChatMessage>& messages) noexcept {
  std::int64_t chars = 0;
  for (const auto& m : messages) chars += static_cast<std::int64_t>(m.content.size());
  return (chars + 3) / 4;
}

Ensemble::Ensemble(const Gateway& gateway, EndpointRegistry endpoints, EnsembleOptions options)
    : gateway_(gateway), endpoints_(std::move(endpoints)), options_(std::move(options)) {
  if (options_.parallelism < 1) throw Error(Errc::InvalidArgument, "parallelism must be >= 1");
}

Sample Ensemble::aggregate(const EndpointSpec& aggregator, double temperature, std::int64_t seed,
                           const std::vector<ChatMessage>& messages, const Prompt& prompt) const {
  check_budget(aggregator, messages);
  ChatRequest req{aggregator.model, messages, temperature, aggregator.max_tokens, seed};
  try {
    Sample s = gateway_.complete(aggregator, req, options_.retry);
    s.prompt_id = prompt.id;
    return s;
  } catch (const Error& e) {
    throw Error(Errc::LayerFailed, "aggregator '" + aggregator.name + "': " + e.what(), e.status());
  }
}

EnsembleOutcome Ensemble::run_layers(const MoAConfig& config, const EndpointRegistry& registry,
                                     const Prompt& prompt) const {
  if (config.layers < 2) throw Error(Errc::InvalidArgument, "MoA needs at least 2 layers");
  const auto& mixture = config.proposer_mixture;
  if (mixture.size() < 1) throw Error(Errc::InvalidArgument, "empty proposer mixture");

  struct Slot {
    const EndpointSpec* endpoint;
    int entry;
    int repeat;
  };
  std::vector<Slot> slots;
  for (int e = 0; e < static_cast<int>(mixture.entries().size()); ++e) {
    const auto& entry = mixture.entries()[static_cast<std::size_t>(e)];
    const auto& ep = lookup(registry, entry.endpoint_name);
    for (int r = 0; r < entry.repeat_count; ++r) slots.push_back({&ep, e, r});
  }

  EnsembleOutcome outcome;
  outcome.config_code = "moa-l" + std::to_string(config.layers) + "-" + mixture.short_code();

  // x_1 is the raw query; x_{i+1} is the aggregation prompt over layer i.
  std::vector<ChatMessage> layer_input{{ChatRole::User, prompt.text}};
  for (int layer = 1; layer < config.layers; ++layer) {
    const std::int64_t layer_base =
        layer == 1 ? config.base_seed : derive_seed(config.base_seed, "layer", layer);
    std::vector<CompletionJob> jobs;
    jobs.reserve(slots.size());
    for (const auto& slot : slots) {
      if (layer > 1) check_budget(*slot.endpoint, layer_input);
      jobs.push_back({*slot.endpoint,
                      ChatRequest{slot.endpoint->model, layer_input, slot.endpoint->temperature,
                                  slot.endpoint->max_tokens,
                                  mixture_seed(mixture, slot.entry, slot.repeat, layer_base)}});
    }
    auto results = gateway_.fan_out(jobs, options_.parallelism, options_.retry);

    LayerTrace trace;
    trace.layer_index = layer;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (auto* s = std::get_if<Sample>(&results[i])) {
        s->seed_index = slots[i].repeat;
        s->prompt_id = prompt.id;
        trace.calls.push_back(std::move(*s));
      } else {
        trace.failures.emplace_back(std::get<Error>(results[i]).what());
      }
    }
    if (trace.calls.empty())
      throw Error(Errc::LayerFailed, "layer " + std::to_string(layer) + ": all " +
                                         std::to_string(slots.size()) + " proposer calls failed");
    trace.inputs = trace.calls;
    trace.aggregation_prompt = build_aggregation_prompt(prompt, trace.inputs, options_.tmpl);
    layer_input = aggregation_messages(options_.tmpl, trace.aggregation_prompt);
    if (layer == config.layers - 1) {
      trace.output = aggregate(config.aggregator, config.aggregator_temperature,
                               aggregator_seed(config.base_seed, config.aggregator, 1), layer_input,
                               prompt);
      outcome.final_text = trace.output->text;
    }
    outcome.traces.push_back(std::move(trace));
  }
  outcome.forward_passes = count_forward_passes(outcome);
  return outcome;
}

EnsembleOutcome Ensemble::run_moa(const MoAConfig& config, const Prompt& prompt) const {
  return run_layers(config, endpoints_, prompt);
}

EnsembleOutcome Ensemble::run_self_moa(const EndpointSpec& proposer, const EndpointSpec& aggregator,
                                       int n, const Prompt& prompt, std::int64_t base_seed,
                                       double aggregator_temperature) const {
  if (n < 1) throw Error(Errc::InvalidArgument, "Self-MoA needs n >= 1");
  EndpointRegistry registry = endpoints_;
  registry.insert_or_assign(proposer.name, proposer);
  MoAConfig config{2, homogeneous_mixture(proposer.name, n), aggregator, aggregator_temperature,
                   base_seed};
  return run_layers(config, registry, prompt);
}

EnsembleOutcome Ensemble::run_self_moa_seq(const SeqConfig& config, const Prompt& prompt) const {
  const int n = config.total_samples;
  const int w = config.window;
  const int r = config.reserved;
  if (n < 1) throw Error(Errc::InvalidArgument, "total_samples must be >= 1");
  if (r < 1 || r >= w) throw Error(Errc::InvalidArgument, "need 1 <= reserved < window");

  const auto mixture = homogeneous_mixture(config.proposer.name, n);
  std::vector<CompletionJob> jobs;
  jobs.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    jobs.push_back({config.proposer,
                    ChatRequest{config.proposer.model,
                                {{ChatRole::User, prompt.text}},
                                config.proposer.temperature,
                                config.proposer.max_tokens,
                                mixture_seed(mixture, 0, j, config.base_seed)}});
  auto results = gateway_.fan_out(jobs, options_.parallelism, options_.retry);

  EnsembleOutcome outcome;
  outcome.config_code = "seq-" + mixture.short_code() + "-w" + std::to_string(w) + "r" +
                        std::to_string(r);

  LayerTrace first;
  first.layer_index = 1;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (auto* s = std::get_if<Sample>(&results[i])) {
      s->seed_index = static_cast<int>(i);
      s->prompt_id = prompt.id;
      first.calls.push_back(std::move(*s));
    } else {
      first.failures.emplace_back(std::get<Error>(results[i]).what());
    }
  }
  if (first.calls.empty())
    throw Error(Errc::LayerFailed, "all " + std::to_string(n) + " proposer calls failed");

  const std::vector<Sample> candidates = first.calls;
  const std::size_t m = candidates.size();
  std::size_t pos = std::min<std::size_t>(static_cast<std::size_t>(w), m);
  int step = 1;

  first.inputs.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(pos));
  first.aggregation_prompt = build_aggregation_prompt(prompt, first.inputs, options_.tmpl);
  first.output = aggregate(config.aggregator, config.aggregator_temperature,
                           aggregator_seed(config.base_seed, config.aggregator, step),
                           aggregation_messages(options_.tmpl, first.aggregation_prompt), prompt);
  Sample synthesis = *first.output;
  outcome.traces.push_back(std::move(first));

  const std::size_t fresh_per_step = static_cast<std::size_t>(w - r);
  while (pos < m) {
    ++step;
    const std::size_t take = std::min(fresh_per_step, m - pos);
    LayerTrace trace;
    trace.layer_index = step;
    trace.inputs.assign(static_cast<std::size_t>(r), synthesis);
    trace.inputs.insert(trace.inputs.end(), candidates.begin() + static_cast<std::ptrdiff_t>(pos),
                        candidates.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
    trace.aggregation_prompt = build_aggregation_prompt(prompt, trace.inputs, options_.tmpl);
    trace.output = aggregate(config.aggregator, config.aggregator_temperature,
                             aggregator_seed(config.base_seed, config.aggregator, step),
                             aggregation_messages(options_.tmpl, trace.aggregation_prompt), prompt);
    synthesis = *trace.output;
    outcome.traces.push_back(std::move(trace));
  }
  outcome.final_text = synthesis.text;
  outcome.forward_passes = count_forward_passes(outcome);
  return outcome;
}

int count_forward_passes(const EnsembleOutcome& outcome) noexcept {
  int passes = 0;
  for (const auto& t : outcome.traces) passes += static_cast<int>(t.calls.size()) + (t.output ? 1 : 0);
  return passes;
}

int moa_forward_passes(int layers, int n) noexcept { return (layers - 1) * n + 1; }

int seq_aggregator_calls(int n, int window, int reserved) noexcept {
  const int extra = std::max(0, n - window);
  const int per_step = window - reserved;
  return 1 + (extra + per_step - 1) / per_step;
}

int seq_forward_passes(int n, int window, int reserved) noexcept {
  return n + seq_aggregator_calls(n, window, reserved);
}

}  // namespace moa
