#include "moa/json_io.hpp"

#include <sstream>

namespace moa {

using nlohmann::json;

void to_json(json& j, const Prompt& p) {
  j = json{{"id", p.id}, {"text", p.text}};
  j["reference"] = p.reference_answer ? json(*p.reference_answer) : json(nullptr);
}

void from_json(const json& j, Prompt& p) {
  j.at("id").get_to(p.id);
  j.at("text").get_to(p.text);
  p.reference_answer.reset();
  if (auto it = j.find("reference"); it != j.end() && !it->is_null())
    p.reference_answer = it->get<std::string>();
}

void to_json(json& j, const EndpointSpec& e) {
  j = json{{"name", e.name},
           {"base_url", e.base_url},
           {"model", e.model},
           {"temperature", e.temperature},
           {"max_tokens", e.max_tokens},
           {"max_context_tokens", e.max_context_tokens},
           {"api_key_env", e.api_key_env},
           {"role", std::string(to_string(e.role_default))}};
}

void from_json(const json& j, EndpointSpec& e) {
  j.at("name").get_to(e.name);
  j.at("base_url").get_to(e.base_url);
  e.model = j.value("model", e.name);
  e.temperature = j.value("temperature", 0.7);
  e.max_tokens = j.value("max_tokens", 1024);
  e.max_context_tokens = j.value("max_context_tokens", 8192);
  e.api_key_env = j.value("api_key_env", std::string());
  e.role_default = parse_endpoint_role(j.value("role", std::string("both")));
}

void to_json(json& j, const Usage& u) {
  j = json{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
}

void from_json(const json& j, Usage& u) {
  u.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  u.completion_tokens = j.value("completion_tokens", std::int64_t{0});
}

void to_json(json& j, const Sample& s) {
  j = json{{"proposer", s.proposer_name}, {"seed_index", s.seed_index}, {"text", s.text},
           {"prompt_id", s.prompt_id},    {"usage", s.usage},           {"latency_ms", s.latency_ms}};
}

void from_json(const json& j, Sample& s) {
  s.proposer_name = j.value("proposer", std::string());
  s.seed_index = j.value("seed_index", 0);
  j.at("text").get_to(s.text);
  s.prompt_id = j.value("prompt_id", std::string());
  if (j.contains("usage")) j.at("usage").get_to(s.usage);
  s.latency_ms = j.value("latency_ms", 0.0);
}

void to_json(json& j, const LayerTrace& t) {
  j = json{{"layer_index", t.layer_index},
           {"calls", t.calls},
           {"inputs", t.inputs},
           {"aggregation_prompt", t.aggregation_prompt},
           {"failures", t.failures}};
  j["output"] = t.output ? json(*t.output) : json(nullptr);
}

void from_json(const json& j, LayerTrace& t) {
  j.at("layer_index").get_to(t.layer_index);
  t.calls = j.value("calls", std::vector<Sample>{});
  t.inputs = j.value("inputs", std::vector<Sample>{});
  t.aggregation_prompt = j.value("aggregation_prompt", std::string());
  t.failures = j.value("failures", std::vector<std::string>{});
  t.output.reset();
  if (auto it = j.find("output"); it != j.end() && !it->is_null()) t.output = it->get<Sample>();
}

void to_json(json& j, const EnsembleOutcome& o) {
  j = json{{"final_text", o.final_text},
           {"traces", o.traces},
           {"forward_passes", o.forward_passes},
           {"config_code", o.config_code}};
}

void from_json(const json& j, EnsembleOutcome& o) {
  j.at("final_text").get_to(o.final_text);
  o.traces = j.value("traces", std::vector<LayerTrace>{});
  j.at("forward_passes").get_to(o.forward_passes);
  o.config_code = j.value("config_code", std::string());
}

void to_json(json& j, const DatasetRecord& r) {
  j = json{{"prompt", r.prompt}, {"samples", r.samples}};
  j["outcome"] = r.outcome ? json(*r.outcome) : json(nullptr);
}

void from_json(const json& j, DatasetRecord& r) {
  j.at("prompt").get_to(r.prompt);
  r.samples = j.value("samples", std::vector<Sample>{});
  r.outcome.reset();
  if (auto it = j.find("outcome"); it != j.end() && !it->is_null())
    r.outcome = it->get<EnsembleOutcome>();
}

std::vector<DatasetRecord> parse_records(std::string_view jsonl) {
  std::vector<DatasetRecord> out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<DatasetRecord>());
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return out;
}

std::string dump_records(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json(r).dump();
    out += '\n';
  }
  return out;
}

}  // namespace moa
