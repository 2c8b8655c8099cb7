#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "s3l/config.hpp"

using namespace s3l;

TEST_CASE("empty config text yields all defaults") {
  auto cfg = parse_config_text("", {});
  CHECK(cfg.seed == 42);
  CHECK(cfg.tau == 0.1);
  CHECK(cfg.encoder_preset == "tiny");
  CHECK(cfg.frame_budget == 7200);
  CHECK(cfg.accum == 4);
  CHECK(cfg.alpha == 0.999);
  CHECK(cfg.lr == 3e-4);
}

TEST_CASE("overrides beat file values") {
  const std::string text = "objective.tau = 0.3\ntrain.steps = 50\n# a comment\n";
  auto cfg = parse_config_text(text, {{"objective.tau", "0.05"}});
  CHECK(cfg.tau == 0.05);
  CHECK(cfg.steps == 50);
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    parse_config_text("bogus.key = 1\n", {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus.key") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("train.steps = many\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("no equals here\n", {}), ConfigError);
}

TEST_CASE("validation rejects inconsistent settings") {
  CHECK_THROWS_AS(parse_config_text("objective.tau = -1\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.schedule = linear\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.alpha = 1.5\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("encoder.preset = huge\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.warm_frac = 0.6\ntrain.hold_frac = 0.6\n", {}),
                  ConfigError);
}

TEST_CASE("echoed config reproduces itself") {
  auto cfg = parse_config_text("objective.tau = 0.07\nseed = 7\naugment.noise = babble\n", {});
  const std::string echo = echo_config(cfg);
  auto cfg2 = parse_config_text(echo, {});
  CHECK(echo_config(cfg2) == echo);
  CHECK(cfg2.tau == cfg.tau);
  CHECK(cfg2.seed == cfg.seed);
  CHECK(cfg2.noise_kind == "babble");
}

TEST_CASE("manifest round trip and validation") {
  Manifest m;
  m.entries.push_back({"a", "synth:1", 1.5, true});
  m.entries.push_back({"b", "/tmp/some.wav", 2.25, false});
  const std::string path = "/tmp/s3l_test_manifest.jsonl";
  write_manifest(path, m);
  auto r = read_manifest(path);
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].id == "a");
  CHECK(r.entries[0].source == "synth:1");
  CHECK(r.entries[0].duration_s == 1.5);
  CHECK(r.entries[0].labeled);
  CHECK(r.entries[1].labeled == false);

  Manifest dup;
  dup.entries.push_back({"x", "synth:1", 1.0, true});
  dup.entries.push_back({"x", "synth:2", 1.0, true});
  CHECK_THROWS_AS(dup.validate(), ConfigError);

  CHECK_THROWS_AS(read_manifest("/tmp/s3l_missing_manifest.jsonl"), IoError);
}
