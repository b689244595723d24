#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moa/core.hpp"
#include "moa/gateway.hpp"

namespace moa {

// Versioned aggregation prompt. `user` accepts the placeholders {{responses}}
// and {{query}}; each is substituted once, in a single pass.
struct AggregationTemplate {
  std::string version = "moa-agg-v1";
  std::string system;
  std::string user;

  static AggregationTemplate standard();
  // Reads a UTF-8 user template; the system instruction stays standard.
  static AggregationTemplate from_file(const std::filesystem::path& path);
};

// Substring of the standard system instruction; its presence marks a request
// as an aggregation request.
inline constexpr std::string_view kAggregationSentinel =
    "synthesize these responses into a single, high-quality response";

std::string render_numbered_responses(const std::vector<Sample>& responses);

std::string build_aggregation_prompt(const Prompt& original, const std::vector<Sample>& responses,
                                     const AggregationTemplate& tmpl = AggregationTemplate::standard());

// Rough characters/4 token estimate used for the context budget check.
std::int64_t estimate_tokens(const std::vector<ChatMessage>& messages) noexcept;

struct MoAConfig {
  int layers = 2;
  ProposerMixture proposer_mixture;
  EndpointSpec aggregator;
  double aggregator_temperature = 0.0;
  std::int64_t base_seed = 0;
};

struct SeqConfig {
  EndpointSpec proposer;
  EndpointSpec aggregator;
  int total_samples = 6;
  int window = 6;
  int reserved = 3;
  double aggregator_temperature = 0.0;
  std::int64_t base_seed = 0;
};

struct EnsembleOptions {
  int parallelism = 6;
  RetryPolicy retry;
  AggregationTemplate tmpl = AggregationTemplate::standard();
};

// Runs the Mixed-MoA, Self-MoA and Self-MoA-Seq pipelines for one prompt at
// a time. Holds references only; one instance may serve many threads.
class Ensemble {
 public:
  Ensemble(const Gateway& gateway, EndpointRegistry endpoints, EnsembleOptions options = {});

  EnsembleOutcome run_moa(const MoAConfig& config, const Prompt& prompt) const;

  EnsembleOutcome run_self_moa(const EndpointSpec& proposer, const EndpointSpec& aggregator, int n,
                               const Prompt& prompt, std::int64_t base_seed,
                               double aggregator_temperature = 0.0) const;

  EnsembleOutcome run_self_moa_seq(const SeqConfig& config, const Prompt& prompt) const;

  const EndpointRegistry& endpoints() const noexcept { return endpoints_; }
  const EnsembleOptions& options() const noexcept { return options_; }

 private:
  EnsembleOutcome run_layers(const MoAConfig& config, const EndpointRegistry& registry,
                             const Prompt& prompt) const;
  Sample aggregate(const EndpointSpec& aggregator, double temperature, std::int64_t seed,
                   const std::vector<ChatMessage>& messages, const Prompt& prompt) const;

  const Gateway& gateway_;
  EndpointRegistry endpoints_;
  EnsembleOptions options_;
};

int count_forward_passes(const EnsembleOutcome& outcome) noexcept;

// Closed forms for the pipelines' call counts.
int moa_forward_passes(int layers, int n) noexcept;
int seq_aggregator_calls(int n, int window, int reserved) noexcept;
int seq_forward_passes(int n, int window, int reserved) noexcept;

}  // namespace moa
