#pragma once

#include <json.hpp>

#include "moa/core.hpp"

namespace moa {

void to_json(nlohmann::json& j, const Prompt& p);
void from_json(const nlohmann::json& j, Prompt& p);
void to_json(nlohmann::json& j, const EndpointSpec& e);
void from_json(const nlohmann::json& j, EndpointSpec& e);
void to_json(nlohmann::json& j, const Usage& u);
void from_json(const nlohmann::json& j, Usage& u);
void to_json(nlohmann::json& j, const Sample& s);
void from_json(const nlohmann::json& j, Sample& s);
void to_json(nlohmann::json& j, const LayerTrace& t);
void from_json(const nlohmann::json& j, LayerTrace& t);
void to_json(nlohmann::json& j, const EnsembleOutcome& o);
void from_json(const nlohmann::json& j, EnsembleOutcome& o);
void to_json(nlohmann::json& j, const DatasetRecord& r);
void from_json(const nlohmann::json& j, DatasetRecord& r);

// Records JSONL, one DatasetRecord per line. Throws ParseError with the
// 1-based line number on malformed input.
std::vector<DatasetRecord> parse_records(std::string_view jsonl);
std::string dump_records(const std::vector<DatasetRecord>& records);

}  // namespace moa
