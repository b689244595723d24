#include <doctest.h>

#include <random>
#include <set>

#include "moa/core.hpp"
#include "moa/json_io.hpp"

using namespace moa;

namespace {

EndpointRegistry registry_of(std::initializer_list<std::string> names) {
  EndpointRegistry reg;
  for (const auto& n : names) {
    EndpointSpec e;
    e.name = n;
    e.base_url = "http://127.0.0.1:1";
    e.model = n;
    reg.emplace(n, e);
  }
  return reg;
}

}  // namespace

TEST_CASE("parse_mixture_code groups by first appearance") {
  const auto reg = registry_of({"i", "m", "d"});

  auto mix = parse_mixture_code("iimmdd", reg);
  CHECK(mix.entries() == std::vector<MixtureEntry>{{"i", 2}, {"m", 2}, {"d", 2}});
  CHECK(mix.size() == 6);
  CHECK(mix.short_code() == "iimmdd");

  mix = parse_mixture_code("i", reg);
  CHECK(mix.entries() == std::vector<MixtureEntry>{{"i", 1}});
  CHECK(mix.size() == 1);

  mix = parse_mixture_code("dddddd", reg);
  CHECK(mix.entries() == std::vector<MixtureEntry>{{"d", 6}});
  CHECK(mix.size() == 6);

  // canonical grouping
  mix = parse_mixture_code("imdimd", reg);
  CHECK(mix.short_code() == "iimmdd");
  CHECK(mix.slots() == std::vector<std::string>{"i", "i", "m", "m", "d", "d"});
}

TEST_CASE("parse_mixture_code errors") {
  const auto reg = registry_of({"i", "m"});
  auto code_of = [&](std::string_view code) {
    try {
      parse_mixture_code(code, reg);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidArgument;
  };
  CHECK(code_of("") == Errc::EmptyCode);
  CHECK(code_of("iix") == Errc::UnknownEndpointName);
  CHECK(code_of("[qwen]") == Errc::UnknownEndpointName);
  CHECK(code_of("[i") == Errc::UnknownEndpointName);
}

TEST_CASE("bracketed multi-character endpoint names") {
  const auto reg = registry_of({"i", "qwen2"});
  const auto mix = parse_mixture_code("[qwen2][qwen2]i", reg);
  CHECK(mix.entries() == std::vector<MixtureEntry>{{"qwen2", 2}, {"i", 1}});
  CHECK(mix.short_code() == "[qwen2][qwen2]i");
}

TEST_CASE("property: parse is a left inverse of short_code rendering") {
  const auto reg = registry_of({"i", "m", "d", "[x]", "wiz"});
  const std::vector<std::string> tokens{"i", "m", "d", "[wiz]"};
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 500; ++trial) {
    const int len = 1 + static_cast<int>(rng() % 12);
    std::string code;
    int token_count = 0;
    for (int k = 0; k < len; ++k, ++token_count) code += tokens[rng() % tokens.size()];
    const auto mix = parse_mixture_code(code, reg);
    CHECK(mix.size() == token_count);
    int sum = 0;
    for (const auto& e : mix.entries()) sum += e.repeat_count;
    CHECK(sum == token_count);
    const auto again = parse_mixture_code(mix.short_code(), reg);
    CHECK(again == mix);
    CHECK(again.short_code() == mix.short_code());
  }
}

TEST_CASE("mixture_seed is deterministic and injective over slots") {
  const auto reg = registry_of({"i", "m", "d"});
  const auto mix = parse_mixture_code("iimmdd", reg);
  CHECK(mixture_seed(mix, 0, 0, 7) == mixture_seed(mix, 0, 0, 7));
  CHECK(mixture_seed(mix, 0, 0, 7) >= 0);
  for (std::int64_t base : {0, 1, 7, -3, 1'000'000'007})
    CHECK(mixture_seed(mix, 0, 0, base) != mixture_seed(mix, 0, 1, base));

  // full 6-repeat mixture: enumerate every slot
  const auto six = parse_mixture_code("dddddd", reg);
  std::set<std::int64_t> seeds;
  for (int r = 0; r < 6; ++r) seeds.insert(mixture_seed(six, 0, r, 42));
  CHECK(seeds.size() == 6);

  std::set<std::int64_t> all;
  for (int e = 0; e < 3; ++e)
    for (int r = 0; r < 2; ++r) all.insert(mixture_seed(mix, e, r, 42));
  CHECK(all.size() == 6);

  CHECK_THROWS_AS(mixture_seed(mix, 3, 0, 0), Error);
  CHECK_THROWS_AS(mixture_seed(mix, 0, 2, 0), Error);
  CHECK_THROWS_AS(mixture_seed(mix, -1, 0, 0), Error);
}

TEST_CASE("endpoint validation") {
  EndpointSpec e;
  e.name = "i";
  e.base_url = "http://x";
  CHECK_NOTHROW(e.validate());
  e.temperature = -0.1;
  CHECK_THROWS_AS(e.validate(), Error);
  e.temperature = 0.7;
  e.max_tokens = 9000;
  CHECK_THROWS_AS(e.validate(), Error);
}

TEST_CASE("dataset JSONL parsing") {
  const auto prompts = parse_dataset(
      "{\"id\":\"a\",\"text\":\"What?\",\"reference\":\"42\"}\n"
      "\n"
      "{\"id\":\"b\",\"text\":\"Open ended\",\"reference\":null}\n");
  REQUIRE(prompts.size() == 2);
  CHECK(prompts[0].reference_answer == std::optional<std::string>("42"));
  CHECK_FALSE(prompts[1].reference_answer.has_value());

  try {
    parse_dataset("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
    FAIL("duplicate id accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ParseError);
    CHECK(e.status() == 2);
  }
  try {
    parse_dataset("{\"id\":\"a\",\"text\":\"x\"}\nnot json\n");
    FAIL("bad json accepted");
  } catch (const Error& e) {
    CHECK(e.status() == 2);
  }
  CHECK_THROWS_AS(parse_dataset("{\"id\":\"a\",\"text\":\"\"}\n"), Error);
}

TEST_CASE("records JSONL round trip keeps traces") {
  Sample s{"i", 1, "text", "p", {3, 4}, 1.5};
  LayerTrace t;
  t.layer_index = 1;
  t.calls = {s};
  t.inputs = {s, s};
  t.aggregation_prompt = "agg";
  t.output = s;
  DatasetRecord r{{"p", "prompt", std::nullopt}, {s}, EnsembleOutcome{"final", {t}, 2, "moa-l2-i"}};
  const auto back = parse_records(dump_records({r}));
  REQUIRE(back.size() == 1);
  CHECK(dump_records(back) == dump_records({r}));
  CHECK(back[0].outcome->traces[0].inputs.size() == 2);

  try {
    parse_records(dump_records({r}) + "{broken\n");
    FAIL("malformed line accepted");
  } catch (const Error& e) {
    CHECK(e.status() == 2);
  }
}
