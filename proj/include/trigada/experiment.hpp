#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trigada/corpus.hpp"
#include "trigada/model.hpp"
#include "trigada/selftrain.hpp"
#include "trigada/training.hpp"

namespace trigada {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognized key with its default, in documentation order.
const std::vector<ConfigKey>& config_schema();

// One declarative key=value document covering every module. Values are kept
// as text; the typed views below parse and validate them.
class ExperimentConfig {
 public:
  /// All defaults.
  ExperimentConfig();

  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(std::istream& in, const std::string& origin);

  /// Rejects unknown keys.
  void set(const std::string& key, const std::string& value);
  /// "key=value" form used by --set.
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  std::string str(const std::string& key) const { return get(key); }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::uint64_t> u64s(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  /// Every key with its value, sorted, one "key = value" per line.
  std::string canonical() const;
  std::string hash() const { return hex64(fnv1a(canonical())); }
  void save(const std::filesystem::path& path) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  ModelConfig model_config() const;
  ModelConfig student_config() const;
  AdaConfig ada_config() const;
  SelfTrainSpec selftrain_spec() const;

  /// TRIGADA_OUTPUT_ROOT when set, else output_dir.
  std::filesystem::path output_root() const;
  std::filesystem::path prepared_dir() const;

  /// Parses every typed view once; throws ConfigError on the first bad value.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

// Corpora and feature resources read back from a prepared directory.
struct PreparedData {
  Corpus source;
  Corpus target;
  std::shared_ptr<FeatureResources> resources;
};

PreparedData load_prepared(const ExperimentConfig& cfg, bool need_contextual);

// Each command writes only below its own directory under the output root and
// returns that directory.
std::filesystem::path cmd_synth(const ExperimentConfig& cfg);
std::filesystem::path cmd_prepare(const ExperimentConfig& cfg);
std::filesystem::path cmd_train(const ExperimentConfig& cfg);
std::filesystem::path cmd_sweep(const ExperimentConfig& cfg);
std::filesystem::path cmd_finetune(const ExperimentConfig& cfg);
std::filesystem::path cmd_selftrain(const ExperimentConfig& cfg);
std::filesystem::path cmd_eval(const ExperimentConfig& cfg);

struct SweepRow {
  double lambda = 0.0;
  std::vector<double> dev_f1;
  std::vector<double> domain_accuracy;
  std::vector<double> target_f1;
  double mean_dev_f1 = 0.0;
  double mean_domain_accuracy = 0.0;
  double mean_target_f1 = 0.0;
};

/// Highest mean source-dev F1; among equal scores, domain accuracy closest to 0.5.
std::size_t select_best_lambda(const std::vector<SweepRow>& rows, double tolerance = 1e-12);

/// Stats report rows for prepare (name, docs, tokens, events, density%).
std::string format_stats_table(const std::vector<std::pair<std::string, CorpusStats>>& rows);

}  // namespace trigada
