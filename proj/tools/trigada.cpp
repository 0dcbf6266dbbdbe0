// trigada: config-driven experiment runner.
//
//   trigada <prepare|train|sweep|finetune|selftrain|eval|synth> [--config FILE] [--set key=value]...
//
// Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.

#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trigada/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailure = 2;

using Command = std::function<std::filesystem::path(const trigada::ExperimentConfig&)>;

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::pair<Command, std::string>> commands = {
      {"prepare", {trigada::cmd_prepare, "validate corpora, split, build vocab and stats"}},
      {"train", {trigada::cmd_train, "train one model (mode = supervised | ada | feda)"}},
      {"sweep", {trigada::cmd_sweep, "adversarial runs over the lambda grid and seeds"}},
      {"finetune", {trigada::cmd_finetune, "finetune a checkpoint on labeled target fractions"}},
      {"selftrain", {trigada::cmd_selftrain, "teacher/student self-training on the target"}},
      {"eval", {trigada::cmd_eval, "transfer matrix and disagreement export"}},
      {"synth", {trigada::cmd_synth, "write a synthetic corpus pair and word vectors"}},
  };

  CLI::App app{"Event-trigger tagging with adversarial domain adaptation"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "print artifact and config-schema versions");

  std::string config_path;
  std::vector<std::string> overrides;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override one key (key=value); repeatable")->allow_extra_args(false);
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  if (show_version) {
    std::cout << "trigada " << trigada::kVersion << " (config schema " << trigada::kConfigSchemaVersion << ")\n";
    return kOk;
  }
  const auto chosen = app.get_subcommands();
  if (chosen.empty()) {
    std::cerr << app.help();
    return kInvalid;
  }
  const std::string name = chosen.front()->get_name();

  try {
    auto cfg = config_path.empty() ? trigada::ExperimentConfig{} : trigada::ExperimentConfig::load(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    const auto out = commands.at(name).first(cfg);
    std::cout << out.string() << '\n';
    return kOk;
  } catch (const trigada::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kFailure;
  }
}
