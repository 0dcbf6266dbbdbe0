#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "support.hpp"
#include "trigada/common.hpp"
#include "trigada/experiment.hpp"

using namespace trigada;

TEST_SUITE("config") {

TEST_CASE("defaults cover the whole schema") {
  const ExperimentConfig cfg;
  CHECK(cfg.values().size() == config_schema().size());
  CHECK_NOTHROW(cfg.validate());
  const auto ada = cfg.ada_config();
  CHECK(ada.batch_size == 16);
  CHECK(ada.max_epochs == 1000);
  CHECK(ada.finetune_epochs == 10);
  CHECK(ada.learning_rate == 1e-3);
  CHECK(cfg.reals("lambdas") == kLambdaGrid);
  const auto m = cfg.model_config();
  CHECK(m.hidden == 100);
  CHECK(m.input_dropout == 0.5);
  CHECK(m.classifier_hidden == 100);
  CHECK(m.domain_layers == 3);
  CHECK(cfg.selftrain_spec().labeled_fraction == 0.01);
}

TEST_CASE("materialized config round-trips every key unchanged") {
  auto cfg = ExperimentConfig::load(testing::fixture("experiment.cfg"));
  cfg.set("lambdas", "0.5,2.0");
  cfg.set("domain_routing", "source_only");
  cfg.set("max_grad_norm", "5");
  testing::TempDir tmp("cfg");
  cfg.save(tmp.path / "config.kv");
  const auto back = ExperimentConfig::load(tmp.path / "config.kv");
  CHECK(back.values() == cfg.values());
  CHECK(back.hash() == cfg.hash());
  CHECK(back.ada_config().routing == DomainRouting::SOURCE_ONLY);
  CHECK(back.ada_config().max_grad_norm == 5.0);
  CHECK(back.ada_config().lambda == 0.5);
  CHECK(back.model_config().hidden == 8);
}

TEST_CASE("hash follows content") {
  ExperimentConfig a, b;
  CHECK(a.hash() == b.hash());
  b.set("seed", "14");
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
}

TEST_CASE("unknown, duplicate and malformed keys are rejected") {
  std::istringstream unknown("mode = ada\nlamda = 1\n");
  try {
    ExperimentConfig::parse(unknown, "cfg");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("lamda") != std::string::npos);
  }
  std::istringstream dup("seed = 1\nseed = 2\n");
  CHECK_THROWS_AS(ExperimentConfig::parse(dup, "cfg"), ParseError);
  std::istringstream version("schema_version = 2\n");
  CHECK_THROWS_AS(ExperimentConfig::parse(version, "cfg"), ConfigError);

  ExperimentConfig cfg;
  CHECK_THROWS_AS(cfg.apply_override("nokey"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("bogus=1"), ConfigError);
  cfg.apply_override("lambda = 2.5");
  CHECK(cfg.real("lambda") == 2.5);
  cfg.set("mode", "adaa");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.set("mode", "ada");
  cfg.set("batch_size", "many");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("output root honours the environment override") {
  ExperimentConfig cfg;
  cfg.set("output_dir", "here");
  ::unsetenv("TRIGADA_OUTPUT_ROOT");
  CHECK(cfg.output_root() == std::filesystem::path("here"));
  ::setenv("TRIGADA_OUTPUT_ROOT", "/tmp/elsewhere", 1);
  CHECK(cfg.output_root() == std::filesystem::path("/tmp/elsewhere"));
  CHECK(cfg.prepared_dir() == std::filesystem::path("/tmp/elsewhere/prepared"));
  ::unsetenv("TRIGADA_OUTPUT_ROOT");
}

TEST_CASE("lambda selection uses dev F1, then domain confusion") {
  std::vector<SweepRow> rows(3);
  rows[0].lambda = 0.1;
  rows[0].mean_dev_f1 = 0.8;
  rows[0].mean_domain_accuracy = 0.9;
  rows[1].lambda = 1.0;
  rows[1].mean_dev_f1 = 0.8;
  rows[1].mean_domain_accuracy = 0.55;
  rows[2].lambda = 5.0;
  rows[2].mean_dev_f1 = 0.7;
  rows[2].mean_domain_accuracy = 0.5;
  CHECK(select_best_lambda(rows) == 1);
  rows[2].mean_dev_f1 = 0.81;
  CHECK(select_best_lambda(rows) == 2);
  CHECK_THROWS_AS(select_best_lambda({}), ValidationError);
}

}  // TEST_SUITE
