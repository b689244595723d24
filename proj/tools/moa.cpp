// moa: run Mixture-of-Agents pipelines, sweeps and quality-diversity analysis.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "moa/commands.hpp"
#include "moa/mock_server.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

struct CommonFlags {
  std::string config;
  std::string dataset;
  std::string out;
  std::int64_t seed = 0;
  int parallelism = 0;
  std::string temperature_grid;
  std::string specs;
};

moa::cli::Overrides overrides_from(const CommonFlags& f, const CLI::App& app) {
  moa::cli::Overrides o;
  if (!f.dataset.empty()) o.dataset = f.dataset;
  if (!f.out.empty()) o.out = f.out;
  if (app.count("--seed") > 0) o.seed = f.seed;
  if (app.count("--parallelism") > 0) o.parallelism = f.parallelism;
  if (!f.temperature_grid.empty()) o.temperature_grid = moa::cli::parse_real_list(f.temperature_grid);
  if (!f.specs.empty()) o.specs = moa::parse_quality_specs(f.specs);
  return o;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool sweep_flags) {
  cmd->add_option("--config", f.config, "run configuration (JSON, schema_version 1)")->required();
  cmd->add_option("--dataset", f.dataset, "dataset JSONL, overrides the config");
  cmd->add_option("--out", f.out, "output directory, overrides the config");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--parallelism", f.parallelism, "prompts processed concurrently")->check(CLI::PositiveNumber);
  if (sweep_flags) {
    cmd->add_option("--temperature-grid", f.temperature_grid, "comma-separated temperatures");
    cmd->add_option("--specs", f.specs, "quality specs, e.g. avg,knorm:2,cinv:2");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-Agents / Self-MoA orchestration and quality-diversity analysis"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "run a pipeline over a dataset");
  add_common(run, run_flags, false);

  CommonFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "sweep mixtures x temperatures into a CSV");
  add_common(sweep, sweep_flags, true);

  std::string regress_csv;
  std::string regress_specs = "avg";
  std::string regress_out = ".";
  auto* regress = app.add_subcommand("regress", "fit performance ~ quality + diversity");
  regress->add_option("sweep_csv", regress_csv, "sweep CSV")->required();
  regress->add_option("--specs", regress_specs, "quality specs, e.g. avg,knorm:2,cinv:2");
  regress->add_option("--out", regress_out, "output directory");

  std::string diversity_in;
  std::string diversity_out = ".";
  std::string diversity_kernel = "unigram-cosine";
  auto* diversity = app.add_subcommand("diversity", "Vendi-score diversity of an outcomes JSONL");
  diversity->add_option("outcomes", diversity_in, "outcomes JSONL")->required();
  diversity->add_option("--out", diversity_out, "output directory");
  diversity->add_option("--kernel", diversity_kernel, "similarity kernel");

  std::string mock_config;
  int mock_port = 8080;
  std::string mock_host = "127.0.0.1";
  auto* mock = app.add_subcommand("mock-serve", "serve deterministic mock personas");
  mock->add_option("--config", mock_config, "persona/dataset JSON")->required();
  mock->add_option("--port", mock_port, "port (0 picks a free one)");
  mock->add_option("--host", mock_host, "bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : moa::cli::kConfigError;
  }

  try {
    if (*run) {
      auto config = moa::cli::load_run_config(run_flags.config);
      moa::cli::apply_overrides(config, overrides_from(run_flags, *run));
      const auto summary = moa::cli::cmd_run(config, std::cout);
      return summary.failed_ids.empty() ? moa::cli::kSuccess : moa::cli::kPartialFailure;
    }
    if (*sweep) {
      auto config = moa::cli::load_run_config(sweep_flags.config);
      moa::cli::apply_overrides(config, overrides_from(sweep_flags, *sweep));
      const auto summary = moa::cli::cmd_sweep(config, std::cout);
      return summary.skipped.empty() ? moa::cli::kSuccess : moa::cli::kPartialFailure;
    }
    if (*regress) {
      const auto summary =
          moa::cli::cmd_regress(regress_csv, moa::parse_quality_specs(regress_specs), regress_out, std::cout);
      for (const auto& row : summary.rows)
        if (!row.fit) return moa::cli::kPartialFailure;
      return moa::cli::kSuccess;
    }
    if (*diversity) {
      moa::cli::cmd_diversity(diversity_in, diversity_out, diversity_kernel, std::cout);
      return moa::cli::kSuccess;
    }
    if (*mock) {
      auto config = moa::mock::load_mock_config(mock_config);
      moa::mock::MockServer server(std::move(config.personas), std::move(config.dataset));
      server.start(mock_port, mock_host);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "mock server listening on " << mock_host << ":" << server.port() << std::endl;
      while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      server.stop();
      std::cout << "mock server stopped" << std::endl;
      return moa::cli::kSuccess;
    }
  } catch (const moa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return moa::cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return moa::cli::kPartialFailure;
  }
  return moa::cli::kSuccess;
}
