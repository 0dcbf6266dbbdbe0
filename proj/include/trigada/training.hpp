#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trigada/corpus.hpp"
#include "trigada/eval.hpp"
#include "trigada/model.hpp"

namespace trigada {

inline const std::vector<double> kLambdaGrid{0.1, 0.2, 0.5, 1.0, 2.0, 5.0};

// Which mixed-batch columns send the reversed gradient back into R. D is
// trained on every column either way.
enum class DomainRouting { BOTH, SOURCE_ONLY };

const char* to_string(DomainRouting r);
DomainRouting parse_domain_routing(const std::string& s);

struct AdaConfig {
  double lambda = 1.0;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 1000;
  std::size_t finetune_epochs = 10;
  std::size_t patience = 25;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
  DomainRouting routing = DomainRouting::BOTH;
  std::uint64_t seed = 13;
  bool verbose = false;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double domain_loss = std::numeric_limits<double>::quiet_NaN();
  double domain_accuracy = std::numeric_limits<double>::quiet_NaN();
  double dev_f1 = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainLog {
  std::vector<EpochRecord> epochs;

  void write_jsonl(const std::filesystem::path& path) const;
  static TrainLog read_jsonl(const std::filesystem::path& path);
};

// Raised on a non-finite loss; carries the epochs completed so far.
class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(const std::string& what, TrainLog log) : RuntimeFailure(what), log_(std::move(log)) {}
  const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

/// 1-based epoch with the highest dev F1 (latest on ties); 0 for an empty log.
std::size_t select_best_epoch(const TrainLog& log);

// Data-path audit: how many labeled sentences of each domain were handed to
// the loss. ADA's target stream carries no tags at all.
struct TagAudit {
  std::size_t source_tag_reads = 0;
  std::size_t target_tag_reads = 0;
};

struct TrainResult {
  TaggerModel best;
  TaggerModel final_model;
  TrainLog log;
  std::size_t best_epoch = 0;
  TagAudit audit;
  std::vector<std::string> warnings;
};

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  explicit Adam(const AdaConfig& cfg) : Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon) {}

  /// One update over the trainable parameters; the list must keep its order between calls.
  void step(const std::vector<Param*>& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
double clip_gradients(const std::vector<Param*>& params, double max_norm);

/// Token-mean cross entropy on the source train split; early stopping on source-dev F1.
TrainResult train_supervised(const ModelConfig& mcfg, std::shared_ptr<const FeatureResources> resources,
                             const Corpus& source, const AdaConfig& cfg);

/// Adversarial training. `heldout_target` feeds the logged domain accuracy
/// together with the source dev split; when empty, up to 200 unlabeled
/// target sentences are used instead.
TrainResult train_ada(const ModelConfig& mcfg, std::shared_ptr<const FeatureResources> resources,
                      const Corpus& source, std::span<const TokenSequence> target_unlabeled, const AdaConfig& cfg,
                      std::span<const TokenSequence> heldout_target = {});

/// Joint training over source train and `target_train`; early stopping on
/// pooled dev F1 over the source dev split and `target_dev`.
TrainResult train_feda(const ModelConfig& mcfg, std::shared_ptr<const FeatureResources> resources,
                       const Corpus& source, std::span<const TaggedSentence> target_train, const AdaConfig& cfg,
                       std::span<const TaggedSentence> target_dev = {});

/// Continues training every parameter on `labeled` for cfg.finetune_epochs
/// and returns the final-epoch model. Only the event loss is used.
TaggerModel finetune(const TaggerModel& model, std::span<const TaggedSentence> labeled, const AdaConfig& cfg,
                     TrainLog* log = nullptr);

struct CurveRun {
  double percent = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_labeled = 0;
  EvalReport report;
};

struct CurvePoint {
  double percent = 0.0;
  double mean_f1 = 0.0;
  double stdev_f1 = 0.0;  // sample stdev, 0 for a single run
  std::size_t runs = 0;
};

struct CurveReport {
  std::vector<CurvePoint> points;
  std::vector<CurveRun> runs;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  /// "percent\tmean_f1\tstdev_f1\truns" rows.
  std::string to_tsv() const;
};

/// For each percent and seed: sample that fraction of the target train pool,
/// finetune a copy of `model`, evaluate on `eval_split` of the target.
CurveReport run_finetune_sweep(const TaggerModel& model, const Corpus& target, std::span<const double> percents,
                               std::span<const std::uint64_t> seeds, const AdaConfig& cfg,
                               const std::string& eval_split = "test");

/// D's accuracy at telling source from target, evaluation mode.
double domain_accuracy(const TaggerModel& model, std::span<const TokenSequence> source,
                       std::span<const TokenSequence> target);

// Low-level loop shared by every trainer, also used by self-training.
struct LabeledItem {
  const TaggedSentence* sentence = nullptr;
  Domain domain = Domain::SOURCE;
  double weight = 1.0;  // used when TrainPlan::weighted
};

struct TrainPlan {
  std::vector<LabeledItem> train;
  /// Sum of weight * token NLL per batch instead of the token mean.
  bool weighted = false;
  std::vector<LabeledItem> dev;  // empty disables early stopping
  bool adversarial = false;
  std::vector<const TokenSequence*> mix_source;
  std::vector<const TokenSequence*> mix_target;
  std::vector<const TokenSequence*> probe_source;
  std::vector<const TokenSequence*> probe_target;
  std::size_t epochs = 0;
  bool early_stopping = true;
};

TrainResult run_training(TaggerModel init, const TrainPlan& plan, const AdaConfig& cfg);

}  // namespace trigada
