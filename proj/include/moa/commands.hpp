#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moa/analysis.hpp"
#include "moa/core.hpp"
#include "moa/ensemble.hpp"
#include "moa/gateway.hpp"
#include "moa/metrics.hpp"

namespace moa::cli {

// Stable process exit codes.
enum ExitCode : int { kSuccess = 0, kPartialFailure = 1, kConfigError = 2 };

int exit_code_for(const Error& error) noexcept;

enum class PipelineKind { MoA, SelfMoA, SelfMoASeq };

PipelineKind parse_pipeline_kind(std::string_view text);
std::string_view to_string(PipelineKind kind) noexcept;

struct SweepSettings {
  std::vector<std::string> mixtures;
  std::vector<double> temperatures{0.5, 0.7, 1.0, 1.1, 1.2};
  // Explicit (mixture, temperature) pairs; replaces the cross product when set.
  std::vector<std::pair<std::string, double>> pairs;
  std::vector<QualitySpec> specs{{QualityMethod::Average, 1}};
};

// Single JSON document, "schema_version": 1.
struct RunConfig {
  int schema_version = 1;
  std::vector<EndpointSpec> endpoints;
  PipelineKind pipeline = PipelineKind::SelfMoA;
  int layers = 2;
  std::string mixture;
  std::string proposer;
  int n = 6;
  int total_samples = 6;
  int window = 6;
  int reserved = 3;
  std::string aggregator;
  double aggregator_temperature = 0.0;
  std::filesystem::path dataset;
  std::filesystem::path out = "out";
  std::int64_t base_seed = 0;
  int parallelism = 4;
  std::optional<std::filesystem::path> template_path;
  std::string kernel = "unigram-cosine";
  int timeout_ms = 120'000;
  RetryPolicy retry;
  SweepSettings sweep;

  EndpointRegistry registry() const;
  // Throws ConfigError / UnknownEndpointName on inconsistent references.
  void validate() const;
};

// Relative paths resolve against base_dir. JSON syntax errors carry the
// 1-based line number in Error::status().
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> out;
  std::optional<std::int64_t> seed;
  std::optional<int> parallelism;
  std::optional<std::vector<double>> temperature_grid;
  std::optional<std::vector<QualitySpec>> specs;
};

void apply_overrides(RunConfig& config, const Overrides& overrides);

std::vector<double> parse_real_list(std::string_view comma_list);

struct RunSummary {
  int prompts = 0;
  std::vector<std::string> failed_ids;
  long long forward_passes = 0;
  std::optional<double> accuracy;
  std::filesystem::path outcomes_path;
  std::vector<DatasetRecord> records;
};

// Runs the configured pipeline over the dataset; writes outcomes.jsonl.
RunSummary cmd_run(const RunConfig& config, std::ostream& log);

struct SweepSummary {
  std::vector<SweepPoint> points;
  std::vector<std::string> skipped;
  std::filesystem::path csv_path;
};

// For each (mixture, temperature): single-model accuracies q_i, the MoA
// pipeline's accuracy t (percent) and proposer diversity d; writes sweep.csv.
SweepSummary cmd_sweep(const RunConfig& config, std::ostream& log);

struct RegressSummary {
  std::vector<SweepRow> rows;
  std::filesystem::path json_path;
  std::filesystem::path table_path;
  std::filesystem::path plot_path;
};

RegressSummary cmd_regress(const std::filesystem::path& sweep_csv, const std::vector<QualitySpec>& specs,
                           const std::filesystem::path& out_dir, std::ostream& log);

DiversityReport cmd_diversity(const std::filesystem::path& outcomes_jsonl, const std::filesystem::path& out_dir,
                              const std::string& kernel, std::ostream& log);

nlohmann::json diversity_report_json(const DiversityReport& report, const std::string& kernel);
nlohmann::json quality_report_json(const QualityReport& report);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace moa::cli
