#include "moa/commands.hpp"

#include <atomic>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "moa/json_io.hpp"

namespace moa::cli {

using nlohmann::json;

namespace {

template <typename Fn>
void parallel_for(std::size_t count, int parallelism, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(parallelism, 1)), count);
  if (workers <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
}

int line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  int line = 1;
  for (std::size_t i = 0; i < byte; ++i)
    if (text[i] == '\n') ++line;
  return line;
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

const EndpointSpec& find_endpoint(const EndpointRegistry& registry, const std::string& name) {
  auto it = registry.find(name);
  if (it == registry.end()) throw Error(Errc::UnknownEndpointName, "'" + name + "' is not a configured endpoint");
  return it->second;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

int exit_code_for(const Error& error) noexcept {
  switch (error.code()) {
    case Errc::ConfigError:
    case Errc::ParseError:
    case Errc::UnknownEndpointName:
    case Errc::EmptyCode:
    case Errc::IoError:
    case Errc::InvalidArgument:
      return kConfigError;
    default:
      return kPartialFailure;
  }
}

PipelineKind parse_pipeline_kind(std::string_view text) {
  if (text == "moa") return PipelineKind::MoA;
  if (text == "self-moa") return PipelineKind::SelfMoA;
  if (text == "self-moa-seq") return PipelineKind::SelfMoASeq;
  throw Error(Errc::ConfigError, "unknown pipeline '" + std::string(text) + "'");
}

std::string_view to_string(PipelineKind kind) noexcept {
  switch (kind) {
    case PipelineKind::MoA: return "moa";
    case PipelineKind::SelfMoA: return "self-moa";
    case PipelineKind::SelfMoASeq: return "self-moa-seq";
  }
  return "moa";
}

EndpointRegistry RunConfig::registry() const {
  EndpointRegistry reg;
  for (const auto& e : endpoints) {
    e.validate();
    if (!reg.emplace(e.name, e).second) throw Error(Errc::ConfigError, "duplicate endpoint '" + e.name + "'");
  }
  return reg;
}

void RunConfig::validate() const {
  if (schema_version != 1)
    throw Error(Errc::ConfigError, "unsupported schema_version " + std::to_string(schema_version));
  const auto reg = registry();
  if (reg.empty()) throw Error(Errc::ConfigError, "no endpoints configured");
  if (aggregator.empty()) throw Error(Errc::ConfigError, "no aggregator configured");
  find_endpoint(reg, aggregator);
  if (parallelism < 1) throw Error(Errc::ConfigError, "parallelism must be >= 1");
  retry.validate();
  switch (pipeline) {
    case PipelineKind::MoA:
      if (layers < 2) throw Error(Errc::ConfigError, "moa needs layers >= 2");
      if (!mixture.empty()) parse_mixture_code(mixture, reg);
      break;
    case PipelineKind::SelfMoA:
      find_endpoint(reg, proposer);
      if (n < 1) throw Error(Errc::ConfigError, "n must be >= 1");
      break;
    case PipelineKind::SelfMoASeq:
      find_endpoint(reg, proposer);
      if (total_samples < 1) throw Error(Errc::ConfigError, "total_samples must be >= 1");
      if (reserved < 1 || reserved >= window) throw Error(Errc::ConfigError, "need 1 <= reserved < window");
      break;
  }
  for (const auto& code : sweep.mixtures) parse_mixture_code(code, reg);
  for (const auto& [code, t] : sweep.pairs) parse_mixture_code(code, reg);
}

RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const int line = line_of(json_text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(Errc::ConfigError, "config line " + std::to_string(line) + ": " + e.what(), line);
  }
  RunConfig c;
  try {
    if (!j.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
    c.schema_version = j.at("schema_version").get<int>();
    for (const auto& e : j.at("endpoints")) c.endpoints.push_back(e.get<EndpointSpec>());
    c.pipeline = parse_pipeline_kind(j.value("pipeline", std::string("self-moa")));
    c.layers = j.value("layers", 2);
    c.mixture = j.value("mixture", std::string());
    c.proposer = j.value("proposer", std::string());
    c.n = j.value("n", 6);
    c.total_samples = j.value("total_samples", c.n);
    c.window = j.value("window", 6);
    c.reserved = j.value("reserved", 3);
    c.aggregator = j.value("aggregator", std::string());
    c.aggregator_temperature = j.value("aggregator_temperature", 0.0);
    if (j.contains("dataset")) c.dataset = resolve(j.at("dataset").get<std::string>(), base_dir);
    if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>(), base_dir);
    c.base_seed = j.value("base_seed", std::int64_t{0});
    c.parallelism = j.value("parallelism", 4);
    if (j.contains("template")) c.template_path = resolve(j.at("template").get<std::string>(), base_dir);
    c.kernel = j.value("kernel", std::string("unigram-cosine"));
    c.timeout_ms = j.value("timeout_ms", 120'000);
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
      c.retry.base_backoff_ms = r.value("base_backoff_ms", c.retry.base_backoff_ms);
      c.retry.backoff_multiplier = r.value("backoff_multiplier", c.retry.backoff_multiplier);
      if (r.contains("retryable_statuses"))
        c.retry.retryable_statuses = r.at("retryable_statuses").get<std::set<int>>();
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      c.sweep.mixtures = s.value("mixtures", std::vector<std::string>{});
      if (s.contains("temperatures")) c.sweep.temperatures = s.at("temperatures").get<std::vector<double>>();
      for (const auto& p : s.value("pairs", json::array()))
        c.sweep.pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<double>());
      if (s.contains("specs")) {
        c.sweep.specs.clear();
        for (const auto& spec : s.at("specs")) c.sweep.specs.push_back(parse_quality_spec(spec.get<std::string>()));
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("config schema: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

std::vector<double> parse_real_list(std::string_view comma_list) {
  std::vector<double> out;
  std::stringstream in{std::string(comma_list)};
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(' ') == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(Errc::ConfigError, "bad number '" + item + "' in list");
    }
  }
  if (out.empty()) throw Error(Errc::ConfigError, "empty number list");
  return out;
}

void apply_overrides(RunConfig& config, const Overrides& o) {
  if (o.dataset) config.dataset = *o.dataset;
  if (o.out) config.out = *o.out;
  if (o.seed) config.base_seed = *o.seed;
  if (o.parallelism) config.parallelism = *o.parallelism;
  if (o.temperature_grid) config.sweep.temperatures = *o.temperature_grid;
  if (o.specs) config.sweep.specs = *o.specs;
  config.validate();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

namespace {

EnsembleOptions ensemble_options(const RunConfig& config) {
  EnsembleOptions opts;
  opts.parallelism = config.parallelism;
  opts.retry = config.retry;
  if (config.template_path) opts.tmpl = AggregationTemplate::from_file(*config.template_path);
  return opts;
}

bool all_referenced(const std::vector<DatasetRecord>& records) {
  if (records.empty()) return false;
  for (const auto& r : records)
    if (!r.prompt.reference_answer) return false;
  return true;
}

}  // namespace

RunSummary cmd_run(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto prompts = load_dataset(config.dataset);
  if (prompts.empty()) throw Error(Errc::EmptyDataset, "dataset " + config.dataset.string() + " is empty");
  const auto registry = config.registry();
  Gateway gateway(GatewayOptions{std::chrono::milliseconds(config.timeout_ms), {}, {}});
  Ensemble ensemble(gateway, registry, ensemble_options(config));
  const auto& aggregator = find_endpoint(registry, config.aggregator);

  std::optional<MoAConfig> moa;
  if (config.pipeline == PipelineKind::MoA) {
    if (config.mixture.empty()) throw Error(Errc::ConfigError, "moa pipeline needs a mixture code");
    moa = MoAConfig{config.layers, parse_mixture_code(config.mixture, registry), aggregator,
                    config.aggregator_temperature, config.base_seed};
  }

  std::vector<std::optional<DatasetRecord>> results(prompts.size());
  std::vector<std::string> errors(prompts.size());
  parallel_for(prompts.size(), config.parallelism, [&](std::size_t i) {
    const auto& prompt = prompts[i];
    try {
      EnsembleOutcome outcome;
      switch (config.pipeline) {
        case PipelineKind::MoA:
          outcome = ensemble.run_moa(*moa, prompt);
          break;
        case PipelineKind::SelfMoA:
          outcome = ensemble.run_self_moa(find_endpoint(registry, config.proposer), aggregator, config.n, prompt,
                                          config.base_seed, config.aggregator_temperature);
          break;
        case PipelineKind::SelfMoASeq:
          outcome = ensemble.run_self_moa_seq(
              SeqConfig{find_endpoint(registry, config.proposer), aggregator, config.total_samples, config.window,
                        config.reserved, config.aggregator_temperature, config.base_seed},
              prompt);
          break;
      }
      DatasetRecord record{prompt, outcome.traces.front().calls, std::move(outcome)};
      results[i] = std::move(record);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  RunSummary summary;
  summary.prompts = static_cast<int>(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (results[i]) {
      summary.forward_passes += results[i]->outcome->forward_passes;
      summary.records.push_back(std::move(*results[i]));
    } else {
      summary.failed_ids.push_back(prompts[i].id);
      log << "prompt " << prompts[i].id << " failed: " << errors[i] << '\n';
    }
  }
  summary.outcomes_path = config.out / "outcomes.jsonl";
  write_file(summary.outcomes_path, dump_records(summary.records));
  if (all_referenced(summary.records)) summary.accuracy = accuracy(summary.records);

  log << "pipeline " << to_string(config.pipeline) << ": " << summary.records.size() << "/" << summary.prompts
      << " prompts ok, forward passes " << summary.forward_passes << '\n';
  if (summary.accuracy) log << "accuracy " << fixed(*summary.accuracy) << '\n';
  if (!summary.failed_ids.empty()) {
    log << "failed prompts:";
    for (const auto& id : summary.failed_ids) log << ' ' << id;
    log << '\n';
  }
  log << "outcomes written to " << summary.outcomes_path.string() << '\n';
  return summary;
}

SweepSummary cmd_sweep(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto prompts = load_dataset(config.dataset);
  if (prompts.empty()) throw Error(Errc::EmptyDataset, "dataset " + config.dataset.string() + " is empty");
  for (const auto& p : prompts)
    if (!p.reference_answer) throw Error(Errc::MissingReference, "sweep needs references; '" + p.id + "' has none");
  const auto registry = config.registry();
  const auto& aggregator = find_endpoint(registry, config.aggregator);
  Gateway gateway(GatewayOptions{std::chrono::milliseconds(config.timeout_ms), {}, {}});

  std::vector<std::pair<std::string, double>> grid = config.sweep.pairs;
  if (grid.empty())
    for (const auto& code : config.sweep.mixtures)
      for (double t : config.sweep.temperatures) grid.emplace_back(code, t);
  if (grid.empty()) throw Error(Errc::ConfigError, "sweep has no mixtures");

  // Single-model accuracy is deterministic per (endpoint, temperature).
  std::map<std::pair<std::string, double>, double> single_model_cache;
  auto single_model_accuracy = [&](const EndpointSpec& endpoint) {
    const auto key = std::make_pair(endpoint.name, endpoint.temperature);
    if (auto it = single_model_cache.find(key); it != single_model_cache.end()) return it->second;
    std::vector<CompletionJob> jobs;
    for (const auto& p : prompts)
      jobs.push_back({endpoint, ChatRequest{endpoint.model,
                                            {{ChatRole::User, p.text}},
                                            endpoint.temperature,
                                            endpoint.max_tokens,
                                            derive_seed(config.base_seed, "single:" + endpoint.name, 0)}});
    auto results = gateway.fan_out(jobs, config.parallelism, config.retry);
    std::vector<DatasetRecord> records;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (auto* e = std::get_if<Error>(&results[i])) throw *e;
      records.push_back({prompts[i], {std::get<Sample>(results[i])}, std::nullopt});
    }
    const double q = accuracy(records);
    single_model_cache.emplace(key, q);
    return q;
  };

  SweepSummary summary;
  for (const auto& [code, temperature] : grid) {
    const std::string label = code + "@" + format_real(temperature);
    try {
      EndpointRegistry heated = registry;
      for (auto& [name, ep] : heated) ep.temperature = temperature;
      const auto mixture = parse_mixture_code(code, heated);

      std::vector<double> per_model;
      for (const auto& slot : mixture.slots()) per_model.push_back(single_model_accuracy(heated.at(slot)));

      EnsembleOptions opts = ensemble_options(config);
      Ensemble ensemble(gateway, heated, opts);
      const MoAConfig moa{config.layers, mixture, aggregator, config.aggregator_temperature, config.base_seed};

      std::vector<std::optional<DatasetRecord>> records(prompts.size());
      std::vector<std::string> errors(prompts.size());
      parallel_for(prompts.size(), config.parallelism, [&](std::size_t i) {
        try {
          auto outcome = ensemble.run_moa(moa, prompts[i]);
          records[i] = DatasetRecord{prompts[i], outcome.traces.front().calls, std::move(outcome)};
        } catch (const Error& e) {
          errors[i] = e.what();
        }
      });
      std::vector<DatasetRecord> done;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i]) throw Error(Errc::LayerFailed, "prompt " + prompts[i].id + ": " + errors[i]);
        done.push_back(std::move(*records[i]));
      }

      const auto kernel = make_kernel(config.kernel);
      SweepPoint point;
      point.config_code = code;
      point.temperature = temperature;
      point.per_model = per_model;
      point.quality = quality(std::span<const double>(per_model), {QualityMethod::Average, 1});
      point.diversity = dataset_diversity(done, *kernel).dataset_diversity;
      point.performance = 100.0 * accuracy(done);
      summary.points.push_back(std::move(point));
    } catch (const Error& e) {
      log << "warning: skipping " << label << ": " << e.what() << '\n';
      summary.skipped.push_back(label);
    }
  }
  if (summary.points.empty()) throw Error(Errc::EmptyDataset, "sweep produced no points");
  summary.csv_path = config.out / "sweep.csv";
  write_file(summary.csv_path, format_sweep_csv(summary.points));
  log << "sweep: " << summary.points.size() << " points (" << summary.skipped.size() << " skipped) -> "
      << summary.csv_path.string() << '\n';
  return summary;
}

RegressSummary cmd_regress(const std::filesystem::path& sweep_csv, const std::vector<QualitySpec>& specs,
                           const std::filesystem::path& out_dir, std::ostream& log) {
  const auto points = parse_sweep_csv(read_file(sweep_csv));
  if (points.size() < 4)
    throw Error(Errc::InsufficientData,
                "regression needs >= 4 rows (n - 3 >= 1 dof), got " + std::to_string(points.size()));
  RegressSummary summary;
  summary.rows = sweep_report(points, specs);
  summary.json_path = out_dir / "fit_report.json";
  summary.table_path = out_dir / "fit_table.csv";
  summary.plot_path = out_dir / "plot.csv";
  const json report{{"n_points", points.size()}, {"fits", sweep_report_json(summary.rows)}};
  write_file(summary.json_path, report.dump(2) + "\n");
  write_file(summary.table_path, sweep_table_csv(summary.rows));
  write_file(summary.plot_path, plot_csv(points));

  log << std::left << std::setw(10) << "spec" << std::setw(20) << "alpha (se)" << std::setw(20) << "beta (se)"
      << std::setw(10) << "R^2"
      << "band\n";
  for (const auto& row : summary.rows) {
    log << std::setw(10) << to_string(row.spec);
    if (row.fit) {
      log << std::setw(20) << (fixed(row.fit->alpha, 3) + " (" + fixed(row.fit->alpha_se, 3) + ")")
          << std::setw(20) << (fixed(row.fit->beta, 3) + " (" + fixed(row.fit->beta_se, 3) + ")") << std::setw(10)
          << fixed(row.fit->r_square, 3) << to_string(*row.band()) << '\n';
    } else {
      log << "error: " << row.error << '\n';
    }
  }
  return summary;
}

json diversity_report_json(const DiversityReport& report, const std::string& kernel) {
  return {{"kernel", kernel}, {"per_prompt", report.per_prompt}, {"dataset_diversity", report.dataset_diversity}};
}

json quality_report_json(const QualityReport& report) {
  return {{"spec", to_string(report.spec)}, {"per_model", report.per_model}, {"value", report.value}};
}

DiversityReport cmd_diversity(const std::filesystem::path& outcomes_jsonl, const std::filesystem::path& out_dir,
                              const std::string& kernel_name, std::ostream& log) {
  const auto records = parse_records(read_file(outcomes_jsonl));
  const auto kernel = make_kernel(kernel_name);
  auto report = dataset_diversity(records, *kernel);
  write_file(out_dir / "diversity.json", diversity_report_json(report, kernel->name()).dump(2) + "\n");
  log << "dataset diversity " << fixed(report.dataset_diversity, 6) << " over " << report.per_prompt.size()
      << " prompts\n";
  return report;
}

}  // namespace moa::cli
