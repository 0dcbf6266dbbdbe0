#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trigada/corpus.hpp"
#include "trigada/features.hpp"
#include "trigada/nets.hpp"

namespace trigada {

enum class LearnerKind { LSTM, BILSTM, POS, CONTEXTUAL };

const char* to_string(LearnerKind k);
LearnerKind parse_learner_kind(const std::string& s);
/// The input representation each learner consumes.
FeatureKind feature_kind_for(LearnerKind k);

struct ModelConfig {
  LearnerKind kind = LearnerKind::BILSTM;
  FeaturePlan plan;
  std::size_t hidden = 100;
  double input_dropout = 0.5;
  std::size_t classifier_hidden = 100;
  std::size_t domain_hidden = 100;
  std::size_t domain_layers = 3;
  PoolMode pooling = PoolMode::MEAN;
  bool domain_head = false;
  bool feda = false;
  double lambda = 0.0;

  bool bidirectional() const { return kind != LearnerKind::LSTM; }
  /// Per-token width of one representation learner.
  std::size_t repr_dim() const { return bidirectional() ? 2 * hidden : hidden; }
  /// Width the event classifier sees (three stacked extractors under FEDA).
  std::size_t features_dim() const { return feda ? 3 * repr_dim() : repr_dim(); }
  void validate() const;
};

// Read-only inputs shared by every model built over the same data.
struct FeatureResources {
  Vocab vocab;
  Vocab pos_vocab;
  EmbeddingTable words;
  std::shared_ptr<const ContextualFeatureStore> store;

  FeatureContext context(const FeaturePlan& plan) const {
    return {&vocab, &pos_vocab, plan, store.get()};
  }
};

// R: a unidirectional or bidirectional LSTM; bidirectional outputs are the
// forward and backward states stacked.
class ReprLearner {
 public:
  struct Cache {
    Lstm::Cache forward;
    Lstm::Cache backward;
  };

  ReprLearner() = default;
  ReprLearner(const std::string& name, Eigen::Index in, Eigen::Index hidden, bool bidirectional);

  Seq forward(const Seq& x, const SeqMask& mask, Cache* cache) const;
  Seq backward(const Cache& cache, const Seq& dh);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);
  Eigen::Index out_dim() const { return bidirectional_ ? 2 * fwd_.hidden() : fwd_.hidden(); }

 private:
  Lstm fwd_;
  Lstm bwd_;
  bool bidirectional_ = false;
};

// FEDA extractor slots; index 0 is the only slot of a plain model.
enum class ExtractorSlot { GENERAL = 0, SOURCE = 1, TARGET = 2 };

class TaggerModel {
 public:
  struct Pass {
    const Batch* batch = nullptr;
    std::size_t steps = 0;
    Eigen::Index batch_size = 0;
    Domain gate = Domain::SOURCE;
    SeqMask mask;
    Seq inputs;
    Seq dropout;
    std::vector<int> active;
    std::vector<ReprLearner::Cache> extractor_cache;
    Seq h;
    bool has_logits = false;
    Mlp::Cache event_cache;
    Mat logits;  // 2 x (steps * batch), column t * batch + b
  };

  struct DomainPass {
    Pooler::Cache pool_cache;
    Mat pooled;
    Mlp::Cache mlp_cache;
    Mat logits;  // 2 x batch
  };

  TaggerModel(ModelConfig cfg, std::shared_ptr<const FeatureResources> resources, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const FeatureResources& resources() const { return *resources_; }
  std::shared_ptr<const FeatureResources> shared_resources() const { return resources_; }
  FeatureContext feature_context() const { return resources_->context(cfg_.plan); }

  /// Dense input vectors per position, (input_dim x batch). No dropout.
  Seq embed(const Batch& batch) const;

  Pass forward(const Batch& batch, bool train, Rng* dropout_rng, Domain gate = Domain::SOURCE,
               bool event_head = true) const;
  /// Accumulates gradients from token logits and/or an extra gradient on h.
  void backward(Pass& pass, const Mat* dlogits, const Seq* dh_extra);

  DomainPass domain_forward(const Pass& pass) const;
  /// D receives the plain gradient; the returned gradient on h has passed
  /// through the reversal layer. Columns with route[b] == 0 send nothing back to R.
  Seq domain_backward(const DomainPass& dp, const Mat& dlogits, const GradientReversal& grl,
                      const RowVec* route = nullptr);

  std::vector<Param*> params();
  std::vector<Param*> repr_params();
  std::vector<Param*> event_params();
  std::vector<Param*> domain_params();
  std::vector<const Param*> all_params() const;
  void zero_grad();
  std::size_t parameter_count(const std::vector<Param*>& ps) const;

  /// Token logits for each sentence (2 x n_tokens), evaluation mode.
  std::vector<Mat> token_logits(std::span<const TokenSequence> seqs, Domain gate = Domain::SOURCE) const;
  std::vector<std::vector<Tag>> predict(std::span<const TokenSequence> seqs, Domain gate = Domain::SOURCE) const;
  std::vector<std::vector<Tag>> predict(std::span<const TaggedSentence> sents, Domain gate = Domain::SOURCE) const;

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  std::string config_hash;

  /// Writes params.bin, model.json, vocab.txt and pos_vocab.txt.
  void save(const std::filesystem::path& dir) const;
  static TaggerModel load(const std::filesystem::path& dir,
                          std::shared_ptr<const ContextualFeatureStore> store = nullptr);

  static constexpr std::size_t kInferenceBatch = 64;

 private:
  Eigen::Index feda_offset(int slot) const;

  ModelConfig cfg_;
  std::shared_ptr<const FeatureResources> resources_;
  Param pos_embed_;
  std::vector<ReprLearner> extractors_;
  Mlp event_head_;
  Mlp domain_head_;
  Pooler pooler_;
  bool trained_ = false;
};

/// Argmax over (O, EVENT) logits; an exact tie yields O.
Tag argmax_tag(double logit_o, double logit_event);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace trigada
