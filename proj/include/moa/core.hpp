#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moa/error.hpp"

namespace moa {

struct Prompt {
  std::string id;
  std::string text;
  std::optional<std::string> reference_answer;

  bool operator==(const Prompt&) const = default;
};

enum class EndpointRole { Proposer, Aggregator, Both };

std::string_view to_string(EndpointRole role) noexcept;
EndpointRole parse_endpoint_role(std::string_view text);

// A callable model behind an OpenAI-compatible base URL.
struct EndpointSpec {
  std::string name;
  std::string base_url;
  std::string model;
  double temperature = 0.7;
  int max_tokens = 1024;
  int max_context_tokens = 8192;
  std::string api_key_env;
  EndpointRole role_default = EndpointRole::Both;

  // Throws InvalidArgument when temperature is outside [0, 2] or the token
  // budgets are inconsistent.
  void validate() const;

  bool operator==(const EndpointSpec&) const = default;
};

using EndpointRegistry = std::map<std::string, EndpointSpec, std::less<>>;

struct MixtureEntry {
  std::string endpoint_name;
  int repeat_count = 0;

  bool operator==(const MixtureEntry&) const = default;
};

// Ordered multiset of proposers. Entries are kept in first-appearance order
// with one entry per distinct endpoint.
class ProposerMixture {
 public:
  ProposerMixture() = default;
  explicit ProposerMixture(std::vector<MixtureEntry> entries);

  const std::vector<MixtureEntry>& entries() const noexcept { return entries_; }

  // Total number of proposer slots n.
  int size() const noexcept;

  // Canonical code: single-character names repeated, longer names as "[name]".
  std::string short_code() const;

  // Slot-ordered endpoint names, e.g. {i,i,m,m,d,d} for "iimmdd".
  std::vector<std::string> slots() const;

  bool operator==(const ProposerMixture&) const = default;

 private:
  std::vector<MixtureEntry> entries_;
};

ProposerMixture parse_mixture_code(std::string_view code, const EndpointRegistry& registry);

// Homogeneous mixture of n repeats of a single endpoint (Self-MoA).
ProposerMixture homogeneous_mixture(const std::string& endpoint_name, int n);

// Stable 64-bit hashing used for every derived seed and mock decision.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0) noexcept;
std::uint64_t mix64(std::uint64_t x) noexcept;

// Non-negative 63-bit seed from (base_seed, label, index).
std::int64_t derive_seed(std::int64_t base_seed, std::string_view label, std::int64_t index) noexcept;

std::int64_t mixture_seed(const ProposerMixture& mixture, int entry_index, int repeat_index,
                          std::int64_t base_seed);

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  bool operator==(const Usage&) const = default;
};

struct Sample {
  std::string proposer_name;
  int seed_index = 0;
  std::string text;
  std::string prompt_id;
  Usage usage;
  double latency_ms = 0.0;
};

// One pipeline step. `calls` holds the completion calls issued by proposers
// in this step; `inputs` is what was rendered into `aggregation_prompt`
// (it may repeat a synthesis); `output` is the aggregator call, if any.
struct LayerTrace {
  int layer_index = 1;
  std::vector<Sample> calls;
  std::vector<Sample> inputs;
  std::string aggregation_prompt;
  std::optional<Sample> output;
  std::vector<std::string> failures;
};

struct EnsembleOutcome {
  std::string final_text;
  std::vector<LayerTrace> traces;
  int forward_passes = 0;
  std::string config_code;
};

struct DatasetRecord {
  Prompt prompt;
  std::vector<Sample> samples;
  std::optional<EnsembleOutcome> outcome;
};

// Dataset file: JSON Lines {"id", "text", "reference"}.
std::vector<Prompt> load_dataset(const std::filesystem::path& path);
std::vector<Prompt> parse_dataset(std::string_view jsonl);

}  // namespace moa
