#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "moa/ensemble.hpp"
#include "moa/json_io.hpp"
#include "test_support.hpp"

using namespace moa;
using namespace moa::testing;

namespace {

struct Fixture {
  std::vector<Prompt> prompts = make_prompts(4);
  std::unique_ptr<mock::MockServer> server = start_mock(
      {{"i", 0.8, 2, 0, 0, {}}, {"m", 0.6, 3, 0, 0, {}}, {"d", 0.4, 4, 0, 0, {}}, {"agg", 1.0, 1, 0, 0, {}}}, prompts);
  Gateway gateway;

  EndpointRegistry registry() const {
    EndpointRegistry reg;
    for (const char* name : {"i", "m", "d"}) reg.emplace(name, endpoint_for(*server, name, name));
    reg.emplace("agg", endpoint_for(*server, "agg", "agg", 0.0));
    return reg;
  }
  EndpointSpec ep(const std::string& name) const { return registry().at(name); }
};

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

// Step-by-step window simulation, independent of the closed form.
int simulate_seq_aggregations(int n, int w, int r) {
  int consumed = std::min(n, w);
  int calls = 1;
  while (consumed < n) {
    consumed += std::min(w - r, n - consumed);
    ++calls;
  }
  return calls;
}

}  // namespace

TEST_CASE("aggregation prompt template") {
  const Prompt p{"p", "What is 2+2?", std::nullopt};
  std::vector<Sample> rs{{"i", 0, "four", "p", {}, 0}, {"m", 1, "4", "p", {}, 0}};
  const auto text = build_aggregation_prompt(p, rs);
  CHECK(text == "Responses:\n1. four\n2. 4\n\nOriginal query:\nWhat is 2+2?");
  CHECK(count_occurrences(text, p.text) == 1);
  CHECK(AggregationTemplate::standard().system.find(kAggregationSentinel) != std::string::npos);

  // placeholders inside the substituted text are not expanded again
  const Prompt tricky{"t", "say {{responses}}", std::nullopt};
  CHECK(build_aggregation_prompt(tricky, rs).find("say {{responses}}") != std::string::npos);

  try {
    build_aggregation_prompt(p, {});
    FAIL("empty responses accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyResponses);
  }
  CHECK(estimate_tokens({{ChatRole::User, "abcde"}}) == 2);
}

TEST_CASE("template from file") {
  const auto dir = scratch_dir("tmpl");
  {
    std::ofstream(dir / "good.txt") << "Q: {{query}}\nA:\n{{responses}}";
    std::ofstream(dir / "bad.txt") << "only {{query}}";
  }
  const auto t = AggregationTemplate::from_file(dir / "good.txt");
  const Prompt p{"p", "why?", std::nullopt};
  CHECK(build_aggregation_prompt(p, {{"i", 0, "because", "p", {}, 0}}, t) == "Q: why?\nA:\n1. because");
  CHECK_THROWS_AS(AggregationTemplate::from_file(dir / "bad.txt"), Error);
  CHECK_THROWS_AS(AggregationTemplate::from_file(dir / "missing.txt"), Error);
}

TEST_CASE("closed-form pass counts") {
  CHECK(moa_forward_passes(2, 6) == 7);
  CHECK(moa_forward_passes(3, 6) == 13);
  CHECK(moa_forward_passes(2, 1) == 2);
  CHECK(seq_aggregator_calls(30, 6, 3) == 9);
  CHECK(seq_forward_passes(30, 6, 3) == 39);
  CHECK(seq_aggregator_calls(6, 6, 3) == 1);
  CHECK(seq_aggregator_calls(7, 6, 3) == 2);
  for (int n = 1; n <= 40; ++n)
    for (int w = 2; w <= 8; ++w)
      for (int r = 1; r < w; ++r) CHECK(seq_aggregator_calls(n, w, r) == simulate_seq_aggregations(n, w, r));
}

TEST_CASE("Mixed-MoA forward passes") {
  Fixture f;
  const auto reg = f.registry();
  Ensemble ens(f.gateway, reg);
  for (auto [layers, code, expected] : {std::tuple{2, "iimmdd", 7}, std::tuple{3, "iimmdd", 13}, std::tuple{2, "i", 2}}) {
    f.server->clear_log();
    MoAConfig cfg{layers, parse_mixture_code(code, reg), reg.at("agg"), 0.0, 5};
    const auto out = ens.run_moa(cfg, f.prompts[0]);
    CHECK(out.forward_passes == expected);
    CHECK(count_forward_passes(out) == expected);
    CHECK(static_cast<int>(f.server->request_log().size()) == expected);
    CHECK(static_cast<int>(out.traces.size()) == layers - 1);
    CHECK(out.config_code == "moa-l" + std::to_string(layers) + "-" + code);
    REQUIRE(out.traces.back().output.has_value());
    CHECK(out.final_text == out.traces.back().output->text);
  }
}

TEST_CASE("Self-MoA forward passes and homogeneity") {
  Fixture f;
  Ensemble ens(f.gateway, f.registry());
  for (int n : {6, 4, 1}) {
    const auto out = ens.run_self_moa(f.ep("i"), f.ep("agg"), n, f.prompts[1], 3);
    CHECK(out.forward_passes == n + 1);
    for (const auto& s : out.traces[0].calls) CHECK(s.proposer_name == "i");
  }
  CHECK_THROWS_AS(ens.run_self_moa(f.ep("i"), f.ep("agg"), 0, f.prompts[1], 3), Error);
}

TEST_CASE("Self-MoA equals run_moa over a homogeneous mixture") {
  Fixture f;
  const auto reg = f.registry();
  EnsembleOptions opts;
  opts.parallelism = 1;
  Ensemble ens(f.gateway, reg, opts);
  f.server->clear_log();
  const auto a = ens.run_self_moa(reg.at("d"), reg.at("agg"), 6, f.prompts[2], 11);
  const auto log_a = f.server->request_log();
  f.server->clear_log();
  const auto b = ens.run_moa({2, parse_mixture_code("dddddd", reg), reg.at("agg"), 0.0, 11}, f.prompts[2]);
  const auto log_b = f.server->request_log();
  REQUIRE(log_a.size() == log_b.size());
  for (std::size_t i = 0; i < log_a.size(); ++i) CHECK(log_a[i].body == log_b[i].body);
  CHECK(a.final_text == b.final_text);
  CHECK(a.config_code == b.config_code);
}

TEST_CASE("Self-MoA-Seq window policy") {
  Fixture f;
  Ensemble ens(f.gateway, f.registry());
  SeqConfig cfg{f.ep("m"), f.ep("agg"), 30, 6, 3, 0.0, 9};
  auto out = ens.run_self_moa_seq(cfg, f.prompts[0]);
  CHECK(out.forward_passes == 39);
  CHECK(out.traces.size() == 9);
  CHECK(out.traces[0].calls.size() == 30);
  CHECK(out.traces[0].inputs.size() == 6);
  for (std::size_t k = 1; k < out.traces.size(); ++k) {
    const auto& t = out.traces[k];
    CHECK(t.calls.empty());
    REQUIRE(t.inputs.size() == 6);
    for (int c = 0; c < 3; ++c) CHECK(t.inputs[static_cast<std::size_t>(c)].text == out.traces[k - 1].output->text);
  }
  CHECK(out.config_code == "seq-" + homogeneous_mixture("m", 30).short_code() + "-w6r3");

  cfg.total_samples = 7;
  out = ens.run_self_moa_seq(cfg, f.prompts[0]);
  REQUIRE(out.traces.size() == 2);
  CHECK(out.traces[1].inputs.size() == 4);
  CHECK(out.traces[1].inputs[3].text == out.traces[0].calls[6].text);
  CHECK(out.forward_passes == 9);

  cfg.reserved = 6;
  CHECK_THROWS_AS(ens.run_self_moa_seq(cfg, f.prompts[0]), Error);
}

TEST_CASE("Seq with n <= window sends the Self-MoA request sequence") {
  Fixture f;
  EnsembleOptions opts;
  opts.parallelism = 1;
  Ensemble ens(f.gateway, f.registry(), opts);
  f.server->clear_log();
  const auto self = ens.run_self_moa(f.ep("i"), f.ep("agg"), 6, f.prompts[3], 21);
  const auto log_self = f.server->request_log();
  f.server->clear_log();
  const auto seq = ens.run_self_moa_seq({f.ep("i"), f.ep("agg"), 6, 6, 3, 0.0, 21}, f.prompts[3]);
  const auto log_seq = f.server->request_log();
  REQUIRE(log_self.size() == 7);
  REQUIRE(log_seq.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(log_self[i].persona == log_seq[i].persona);
    CHECK(log_self[i].body == log_seq[i].body);
  }
  CHECK(self.final_text == seq.final_text);
}

TEST_CASE("property: pass counts over random configurations") {
  Fixture f;
  const auto reg = f.registry();
  Ensemble ens(f.gateway, reg);
  std::mt19937 rng(77);
  const std::string letters = "imd";
  for (int trial = 0; trial < 15; ++trial) {
    const int layers = 2 + static_cast<int>(rng() % 3);
    const int n = 1 + static_cast<int>(rng() % 6);
    std::string code;
    for (int k = 0; k < n; ++k) code += letters[rng() % 3];
    f.server->clear_log();
    const auto out = ens.run_moa({layers, parse_mixture_code(code, reg), reg.at("agg"), 0.0, trial}, f.prompts[0]);
    CHECK(out.forward_passes == moa_forward_passes(layers, n));
    CHECK(f.server->request_log().size() == static_cast<std::size_t>(out.forward_passes));
    // every aggregation prompt carries the query exactly once
    for (const auto& t : out.traces) CHECK(count_occurrences(t.aggregation_prompt, f.prompts[0].text) == 1);
  }
  for (int trial = 0; trial < 15; ++trial) {
    const int w = 2 + static_cast<int>(rng() % 6);
    const int r = 1 + static_cast<int>(rng() % static_cast<unsigned>(w - 1));
    const int n = 1 + static_cast<int>(rng() % 20);
    f.server->clear_log();
    const auto out = ens.run_self_moa_seq({f.ep("d"), f.ep("agg"), n, w, r, 0.0, trial}, f.prompts[1]);
    CHECK(static_cast<int>(out.traces.size()) == simulate_seq_aggregations(n, w, r));
    CHECK(out.forward_passes == n + simulate_seq_aggregations(n, w, r));
    CHECK(f.server->request_log().size() == static_cast<std::size_t>(out.forward_passes));
    for (const auto& t : out.traces) {
      CHECK(t.inputs.size() <= static_cast<std::size_t>(w));
      CHECK(count_occurrences(t.aggregation_prompt, f.prompts[1].text) == 1);
    }
  }
}

TEST_CASE("runs are deterministic for a fixed base seed") {
  Fixture f;
  const auto reg = f.registry();
  Ensemble ens(f.gateway, reg);
  MoAConfig cfg{3, parse_mixture_code("imd", reg), reg.at("agg"), 0.0, 1234};
  auto a = ens.run_moa(cfg, f.prompts[0]);
  auto b = ens.run_moa(cfg, f.prompts[0]);
  for (auto* o : {&a, &b})
    for (auto& t : o->traces)
      for (auto* v : {&t.calls, &t.inputs})
        for (auto& s : *v) s.latency_ms = 0;
  for (auto* o : {&a, &b})
    for (auto& t : o->traces)
      if (t.output) t.output->latency_ms = 0;
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
}

TEST_CASE("context budget and failures") {
  Fixture f;
  auto reg = f.registry();
  auto tiny = reg.at("agg");
  tiny.max_context_tokens = 10;
  Ensemble ens(f.gateway, reg);
  try {
    ens.run_moa({2, parse_mixture_code("iimmdd", reg), tiny, 0.0, 0}, f.prompts[0]);
    FAIL("oversized prompt accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ContextBudgetExceeded);
  }

  auto gone = reg.at("i");
  gone.base_url = f.server->base_url("nobody");
  reg.insert_or_assign("i", gone);
  Ensemble broken(f.gateway, reg);
  // one of three proposers failing still aggregates the rest
  const auto out = broken.run_moa({2, parse_mixture_code("imd", reg), reg.at("agg"), 0.0, 0}, f.prompts[0]);
  CHECK(out.traces[0].calls.size() == 2);
  CHECK(out.traces[0].failures.size() == 1);
  CHECK(out.forward_passes == 3);
  try {
    broken.run_moa({2, parse_mixture_code("ii", reg), reg.at("agg"), 0.0, 0}, f.prompts[0]);
    FAIL("all-failed layer accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LayerFailed);
  }
  try {
    broken.run_moa({2, parse_mixture_code("m", reg), gone, 0.0, 0}, f.prompts[0]);
    FAIL("failed aggregator accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LayerFailed);
  }
}
