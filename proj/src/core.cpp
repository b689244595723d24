#include "moa/core.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace moa {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownEndpointName: return "UnknownEndpointName";
    case Errc::EmptyCode: return "EmptyCode";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EndpointError: return "EndpointError";
    case Errc::Timeout: return "Timeout";
    case Errc::MalformedResponse: return "MalformedResponse";
    case Errc::EmptyResponses: return "EmptyResponses";
    case Errc::LayerFailed: return "LayerFailed";
    case Errc::ContextBudgetExceeded: return "ContextBudgetExceeded";
    case Errc::EmptyList: return "EmptyList";
    case Errc::NotPSD: return "NotPSD";
    case Errc::EigenFailure: return "EigenFailure";
    case Errc::MixedPromptIds: return "MixedPromptIds";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::MissingReference: return "MissingReference";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::SingularDesign: return "SingularDesign";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::PortInUse: return "PortInUse";
    case Errc::ConfigError: return "ConfigError";
    case Errc::ParseError: return "ParseError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

std::string_view to_string(EndpointRole role) noexcept {
  switch (role) {
    case EndpointRole::Proposer: return "proposer";
    case EndpointRole::Aggregator: return "aggregator";
    case EndpointRole::Both: return "both";
  }
  return "both";
}

EndpointRole parse_endpoint_role(std::string_view text) {
  if (text == "proposer") return EndpointRole::Proposer;
  if (text == "aggregator") return EndpointRole::Aggregator;
  if (text == "both") return EndpointRole::Both;
  throw Error(Errc::InvalidArgument, "unknown endpoint role '" + std::string(text) + "'");
}

void EndpointSpec::validate() const {
  if (name.empty()) throw Error(Errc::InvalidArgument, "endpoint name is empty");
  if (!(temperature >= 0.0 && temperature <= 2.0))
    throw Error(Errc::InvalidArgument, "endpoint '" + name + "': temperature outside [0, 2]");
  if (max_tokens <= 0 || max_context_tokens <= 0)
    throw Error(Errc::InvalidArgument, "endpoint '" + name + "': token budgets must be positive");
  if (max_tokens > max_context_tokens)
    throw Error(Errc::InvalidArgument,
                "endpoint '" + name + "': max_tokens exceeds max_context_tokens");
}

ProposerMixture::ProposerMixture(std::vector<MixtureEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string, std::less<>> seen;
  for (const auto& e : entries_) {
    if (e.repeat_count < 1)
      throw Error(Errc::InvalidArgument, "repeat count must be >= 1 for '" + e.endpoint_name + "'");
    if (e.endpoint_name.empty()) throw Error(Errc::InvalidArgument, "empty endpoint name");
    if (!seen.insert(e.endpoint_name).second)
      throw Error(Errc::InvalidArgument, "duplicate mixture entry '" + e.endpoint_name + "'");
  }
  if (entries_.empty()) throw Error(Errc::EmptyCode, "mixture has no entries");
}

int ProposerMixture::size() const noexcept {
  int n = 0;
  for (const auto& e : entries_) n += e.repeat_count;
  return n;
}

std::string ProposerMixture::short_code() const {
  std::string code;
  for (const auto& e : entries_) {
    const std::string token =
        e.endpoint_name.size() == 1 ? e.endpoint_name : "[" + e.endpoint_name + "]";
    for (int r = 0; r < e.repeat_count; ++r) code += token;
  }
  return code;
}

std::vector<std::string> ProposerMixture::slots() const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(size()));
  for (const auto& e : entries_)
    for (int r = 0; r < e.repeat_count; ++r) out.push_back(e.endpoint_name);
  return out;
}

ProposerMixture parse_mixture_code(std::string_view code, const EndpointRegistry& registry) {
  if (code.empty()) throw Error(Errc::EmptyCode, "mixture code is empty");
  std::vector<MixtureEntry> entries;
  auto add = [&](std::string name) {
    if (!registry.contains(name))
      throw Error(Errc::UnknownEndpointName, "'" + name + "' in mixture code '" +
                                                 std::string(code) + "'");
    for (auto& e : entries) {
      if (e.endpoint_name == name) {
        ++e.repeat_count;
        return;
      }
    }
    entries.push_back({std::move(name), 1});
  };
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] == '[') {
      const auto close = code.find(']', i + 1);
      if (close == std::string_view::npos || close == i + 1)
        throw Error(Errc::UnknownEndpointName, "unterminated bracket in '" + std::string(code) + "'");
      add(std::string(code.substr(i + 1, close - i - 1)));
      i = close;
    } else {
      add(std::string(1, code[i]));
    }
  }
  return ProposerMixture(std::move(entries));
}

ProposerMixture homogeneous_mixture(const std::string& endpoint_name, int n) {
  if (n < 1) throw Error(Errc::InvalidArgument, "mixture size must be >= 1");
  return ProposerMixture({{endpoint_name, n}});
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

std::int64_t derive_seed(std::int64_t base_seed, std::string_view label, std::int64_t index) noexcept {
  std::string key(label);
  key.push_back('\0');
  key += std::to_string(index);
  const auto h = stable_hash(key, static_cast<std::uint64_t>(base_seed));
  return static_cast<std::int64_t>(h >> 1);
}

std::int64_t mixture_seed(const ProposerMixture& mixture, int entry_index, int repeat_index,
                          std::int64_t base_seed) {
  const auto& entries = mixture.entries();
  if (entry_index < 0 || entry_index >= static_cast<int>(entries.size()))
    throw Error(Errc::IndexOutOfRange, "entry index " + std::to_string(entry_index));
  const auto& entry = entries[static_cast<std::size_t>(entry_index)];
  if (repeat_index < 0 || repeat_index >= entry.repeat_count)
    throw Error(Errc::IndexOutOfRange, "repeat index " + std::to_string(repeat_index));
  return derive_seed(base_seed, entry.endpoint_name, repeat_index);
}

std::vector<Prompt> parse_dataset(std::string_view jsonl) {
  std::vector<Prompt> prompts;
  std::set<std::string, std::less<>> ids;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, "dataset line " + std::to_string(line_no) + ": " + e.what(),
                  line_no);
    }
    auto fail = [&](const std::string& what) {
      throw Error(Errc::ParseError, "dataset line " + std::to_string(line_no) + ": " + what, line_no);
    };
    if (!j.is_object()) fail("expected an object");
    if (!j.contains("id") || !j["id"].is_string()) fail("missing string field 'id'");
    if (!j.contains("text") || !j["text"].is_string()) fail("missing string field 'text'");
    Prompt p;
    p.id = j["id"].get<std::string>();
    p.text = j["text"].get<std::string>();
    if (p.text.empty()) fail("empty prompt text");
    if (j.contains("reference") && !j["reference"].is_null()) {
      if (!j["reference"].is_string()) fail("'reference' must be a string or null");
      p.reference_answer = j["reference"].get<std::string>();
    }
    if (!ids.insert(p.id).second) fail("duplicate id '" + p.id + "'");
    prompts.push_back(std::move(p));
  }
  return prompts;
}

std::vector<Prompt> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace moa
