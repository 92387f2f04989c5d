#include <doctest.h>

#include <cstdio>

#include "olab/config.hpp"
#include "olab/errors.hpp"
#include "olab/manifest.hpp"

using namespace olab;
using namespace olab::config;

TEST_CASE("defaults resolve and serialize round-trips") {
  const ExperimentConfig defaults = parse_config("");
  CHECK(defaults.seed == 7);
  CHECK(defaults.model_kind == "multimodal");
  const ExperimentConfig back = parse_config(defaults.serialize());
  CHECK(back.serialize() == defaults.serialize());
}

TEST_CASE("values parse into the right sections") {
  const ExperimentConfig cfg = parse_config(
      "[global]\n"
      "seed = 99\n"
      "output_dir = out/exp\n"
      "[model]\n"
      "kind = text_encoder\n"
      "d_model = 64  # inline comment\n"
      "[schedule]\n"
      "learning_rate = 0.001\n"
      "max_epochs = 3\n");
  CHECK(cfg.seed == 99);
  CHECK(cfg.output_dir == "out/exp");
  CHECK(cfg.model_kind == "text_encoder");
  CHECK(cfg.model.d_model == 64);
  CHECK(cfg.schedule.learning_rate == 0.001);
  CHECK(cfg.schedule.max_epochs == 3);
}

TEST_CASE("unknown keys and sections are errors") {
  CHECK_THROWS_AS(parse_config("[global]\nspeed = 9\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[warp]\nseed = 9\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = 9\n"), ConfigError);  // key before any section
  CHECK_THROWS_AS(parse_config("[model]\nd_model = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nkind = oracle\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[schedule]\nmax_epochs = 0\n"), ConfigError);
}

TEST_CASE("manifest json round-trips and hashes are stable") {
  manifest::Manifest m;
  m.command = "train";
  m.seed = 123;
  m.resolved_config = parse_config("").serialize();
  m.inputs["games.txt"] = "fnv1a:00000000deadbeef";
  m.environment["OLAB_SEED"] = "123";
  m.wall_clock_s = 4.5;
  const manifest::Manifest back = manifest::Manifest::from_json(m.to_json());
  CHECK(back.command == m.command);
  CHECK(back.seed == m.seed);
  CHECK(back.resolved_config == m.resolved_config);
  CHECK(back.inputs == m.inputs);
  CHECK(back.environment == m.environment);

  const std::string path = "test_hash_input.txt";
  std::FILE* f = std::fopen(path.c_str(), "w");
  std::fputs("hello othello\n", f);
  std::fclose(f);
  const uint64_t h1 = manifest::fnv1a_file(path);
  const uint64_t h2 = manifest::fnv1a_file(path);
  CHECK(h1 == h2);
  CHECK(manifest::hash_string(h1).substr(0, 6) == "fnv1a:");
  std::remove(path.c_str());
  CHECK_THROWS_AS(manifest::fnv1a_file("definitely_missing_file"), DataError);
}
