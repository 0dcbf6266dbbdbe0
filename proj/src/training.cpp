#include "trigada/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "trigada/kv.hpp"

namespace trigada {

const char* to_string(DomainRouting r) { return r == DomainRouting::BOTH ? "both" : "source_only"; }

DomainRouting parse_domain_routing(const std::string& s) {
  const auto v = to_lower(trim(s));
  if (v == "both") return DomainRouting::BOTH;
  if (v == "source_only") return DomainRouting::SOURCE_ONLY;
  throw ConfigError("unknown domain routing '" + s + "' (expected both|source_only)");
}

void AdaConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0");
}

nlohmann::json to_json(const EpochRecord& r) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"epoch", r.epoch},
          {"task_loss", num(r.task_loss)},
          {"domain_loss", num(r.domain_loss)},
          {"domain_accuracy", num(r.domain_accuracy)},
          {"dev_f1", num(r.dev_f1)},
          {"wall_seconds", r.wall_seconds}};
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& r : epochs) out << to_json(r).dump() << '\n';
}

TrainLog TrainLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  TrainLog log;
  std::string line;
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.task_loss = num(j.at("task_loss"));
    r.domain_loss = num(j.at("domain_loss"));
    r.domain_accuracy = num(j.at("domain_accuracy"));
    r.dev_f1 = num(j.at("dev_f1"));
    r.wall_seconds = j.at("wall_seconds").get<double>();
    log.epochs.push_back(r);
  }
  return log;
}

std::size_t select_best_epoch(const TrainLog& log) {
  std::size_t best = 0;
  double best_f1 = -std::numeric_limits<double>::infinity();
  for (const auto& r : log.epochs)
    if (std::isfinite(r.dev_f1) && r.dev_f1 >= best_f1) {
      best_f1 = r.dev_f1;
      best = r.epoch;
    }
  return best;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw RuntimeFailure("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (!p.trainable) continue;
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double clip_gradients(const std::vector<Param*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    if (p->trainable) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params)
      if (p->trainable) p->grad *= s;
  }
  return norm;
}

namespace {

// Token targets in logit-column order (t * B + b), -1 for padding.
std::vector<int> flat_targets(const Batch& batch) {
  const std::size_t B = batch.size();
  std::vector<int> out(batch.max_len * B, -1);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) out[t * B + b] = batch.tags[b][t];
  return out;
}

std::vector<double> flat_weights(const Batch& batch) {
  const std::size_t B = batch.size();
  std::vector<double> out(batch.max_len * B, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) out[t * B + b] = batch.weights[b];
  return out;
}

// Cycles through a list in reshuffled rounds.
class Stream {
 public:
  Stream(const std::vector<const TokenSequence*>& items, std::uint64_t seed) : items_(items), rng_(seed) {}

  const TokenSequence* next() {
    if (pos_ == order_.size()) {
      order_.resize(items_.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return items_[order_[pos_++]];
  }

 private:
  const std::vector<const TokenSequence*>& items_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct TaskBatch {
  std::vector<const TaggedSentence*> sentences;
  std::vector<double> weights;
  Domain domain = Domain::SOURCE;
};

// Shuffles the items, then chunks each domain separately so every batch has
// a single FEDA gate. With two domains present the batch order is shuffled too.
std::vector<TaskBatch> schedule(const std::vector<LabeledItem>& items, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<TaskBatch> batches;
  bool mixed = false;
  for (Domain d : {Domain::SOURCE, Domain::TARGET}) {
    TaskBatch cur;
    cur.domain = d;
    for (auto i : order) {
      if (items[i].domain != d) continue;
      cur.sentences.push_back(items[i].sentence);
      cur.weights.push_back(items[i].weight);
      if (cur.sentences.size() == batch_size) {
        batches.push_back(cur);
        cur.sentences.clear();
        cur.weights.clear();
      }
    }
    if (!cur.sentences.empty()) batches.push_back(cur);
    if (d == Domain::TARGET && !batches.empty() && batches.front().domain != batches.back().domain) mixed = true;
  }
  if (mixed) rng.shuffle(batches);
  return batches;
}

double dev_f1(const TaggerModel& model, const std::vector<LabeledItem>& dev) {
  EvalReport total;
  for (Domain d : {Domain::SOURCE, Domain::TARGET}) {
    std::vector<TaggedSentence> sents;
    for (const auto& it : dev)
      if (it.domain == d) sents.push_back(*it.sentence);
    if (!sents.empty()) total += evaluate(model, sents, d);
  }
  return total.f1;
}

double probe_accuracy(const TaggerModel& model, const std::vector<const TokenSequence*>& src,
                      const std::vector<const TokenSequence*>& tgt) {
  std::vector<TokenSequence> s, t;
  for (const auto* x : src) s.push_back(*x);
  for (const auto* x : tgt) t.push_back(*x);
  return domain_accuracy(model, s, t);
}

void check_finite(double v, const char* what, std::size_t epoch, std::size_t step, const TrainLog& log) {
  if (std::isfinite(v)) return;
  throw TrainingDiverged("non-finite " + std::string(what) + " at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step),
                         log);
}

}  // namespace

double domain_accuracy(const TaggerModel& model, std::span<const TokenSequence> source,
                       std::span<const TokenSequence> target) {
  if (!model.config().domain_head) throw ValidationError("model has no domain predictor");
  std::size_t correct = 0, total = 0;
  const auto ctx = model.feature_context();
  auto run = [&](std::span<const TokenSequence> seqs, int label) {
    for (std::size_t start = 0; start < seqs.size(); start += TaggerModel::kInferenceBatch) {
      const auto chunk = seqs.subspan(start, std::min(TaggerModel::kInferenceBatch, seqs.size() - start));
      const Batch batch = encode_batch(chunk, ctx);
      const auto pass = model.forward(batch, false, nullptr, Domain::SOURCE, false);
      const auto dp = model.domain_forward(pass);
      for (Eigen::Index b = 0; b < dp.logits.cols(); ++b) {
        const int pred = dp.logits(1, b) > dp.logits(0, b) ? 1 : 0;
        correct += pred == label;
        ++total;
      }
    }
  };
  run(source, 0);
  run(target, 1);
  return total ? static_cast<double>(correct) / static_cast<double>(total)
               : std::numeric_limits<double>::quiet_NaN();
}

TrainResult run_training(TaggerModel init, const TrainPlan& plan, const AdaConfig& cfg) {
  cfg.validate();
  if (plan.train.empty()) throw ValidationError("no labeled training sentences");
  if (plan.adversarial) {
    if (!init.config().domain_head) throw ValidationError("adversarial training needs a model with a domain head");
    if (plan.mix_source.empty() || plan.mix_target.empty())
      throw ValidationError("adversarial training needs source and target sentences for the mixed stream");
  }

  TaggerModel model = std::move(init);
  TrainResult result{model, model, {}, 0, {}, {}};
  if (plan.epochs == 0) {
    result.warnings.push_back("0 training epochs: returning the initialized model");
    return result;
  }

  const auto ctx = model.feature_context();
  const GradientReversal grl(cfg.lambda);
  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  Rng task_dropout(derive_seed(cfg.seed, "dropout.source"));
  Rng mix_dropout(derive_seed(cfg.seed, "dropout.mixed"));
  Stream mix_src(plan.mix_source, derive_seed(cfg.seed, "mixed.source"));
  Stream mix_tgt(plan.mix_target, derive_seed(cfg.seed, "mixed.target"));
  const std::size_t n_mix_src = std::max<std::size_t>(1, cfg.batch_size / 2);
  const std::size_t n_mix_tgt = std::max<std::size_t>(1, cfg.batch_size - n_mix_src);

  auto params = model.params();
  Adam adam(cfg);
  double best_f1 = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    double task_sum = 0.0, dom_sum = 0.0;
    std::size_t step = 0;

    for (const auto& tb : schedule(plan.train, cfg.batch_size, batch_rng)) {
      ++step;
      model.zero_grad();
      Batch batch = encode_batch(std::span<const TaggedSentence* const>(tb.sentences), ctx);
      batch.weights = tb.weights;
      (tb.domain == Domain::SOURCE ? result.audit.source_tag_reads : result.audit.target_tag_reads) +=
          tb.sentences.size();
      auto pass = model.forward(batch, true, &task_dropout, tb.domain);
      const auto targets = flat_targets(batch);
      LossAndGrad lg;
      if (plan.weighted) {
        const auto w = flat_weights(batch);
        lg = weighted_cross_entropy(pass.logits, targets, w);
      } else {
        lg = token_cross_entropy(pass.logits, targets);
      }
      check_finite(lg.loss, "task loss", epoch, step, result.log);
      task_sum += lg.loss;
      model.backward(pass, &lg.grad, nullptr);

      if (plan.adversarial) {
        std::vector<const TokenSequence*> mix;
        for (std::size_t i = 0; i < n_mix_src; ++i) mix.push_back(mix_src.next());
        for (std::size_t i = 0; i < n_mix_tgt; ++i) mix.push_back(mix_tgt.next());
        const Batch mb = encode_batch(std::span<const TokenSequence* const>(mix), ctx);
        auto mpass = model.forward(mb, true, &mix_dropout, Domain::SOURCE, false);
        const auto dp = model.domain_forward(mpass);
        std::vector<int> labels(mix.size(), 1);
        std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_mix_src), 0);
        const auto dl = token_cross_entropy(dp.logits, labels);
        check_finite(dl.loss, "domain loss", epoch, step, result.log);
        dom_sum += dl.loss;
        RowVec route = RowVec::Ones(static_cast<Eigen::Index>(mix.size()));
        if (cfg.routing == DomainRouting::SOURCE_ONLY)
          route.tail(static_cast<Eigen::Index>(n_mix_tgt)).setZero();
        const Seq dh = model.domain_backward(dp, dl.grad, grl, &route);
        model.backward(mpass, nullptr, &dh);
      }

      if (cfg.max_grad_norm > 0.0) clip_gradients(params, cfg.max_grad_norm);
      adam.step(params);
    }

    rec.task_loss = task_sum / static_cast<double>(step);
    if (plan.adversarial) rec.domain_loss = dom_sum / static_cast<double>(step);
    if (plan.adversarial && (!plan.probe_source.empty() || !plan.probe_target.empty()))
      rec.domain_accuracy = probe_accuracy(model, plan.probe_source, plan.probe_target);
    if (!plan.dev.empty()) rec.dev_f1 = dev_f1(model, plan.dev);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);
    if (cfg.verbose) std::cerr << to_json(rec).dump() << '\n';

    if (plan.early_stopping && !plan.dev.empty()) {
      if (rec.dev_f1 >= best_f1) {
        best_f1 = rec.dev_f1;
        since_best = 0;
        result.best = model;
        result.best_epoch = epoch;
        have_best = true;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }

  model.mark_trained();
  result.final_model = model;
  if (!have_best) {
    result.best = model;
    result.best_epoch = result.log.epochs.size();
  }
  result.best.mark_trained();
  return result;
}

namespace {

std::vector<LabeledItem> items_of(const std::vector<TaggedSentence>& sents, Domain d) {
  std::vector<LabeledItem> out;
  out.reserve(sents.size());
  for (const auto& s : sents) out.push_back({&s, d, 1.0});
  return out;
}

void require_splits(const Corpus& source) {
  for (const char* s : {"train", "dev"})
    if (!source.has_split(s)) throw ValidationError("source corpus '" + source.name + "' has no " + s + " split");
}

}  // namespace

TrainResult train_supervised(const ModelConfig& mcfg, std::shared_ptr<const FeatureResources> resources,
                             const Corpus& source, const AdaConfig& cfg) {
  require_splits(source);
  const auto train = source.split_sentences("train");
  const auto dev = source.split_sentences("dev");
  TrainPlan plan;
  plan.train = items_of(train, Domain::SOURCE);
  plan.dev = items_of(dev, Domain::SOURCE);
  plan.epochs = cfg.max_epochs;
  return run_training(TaggerModel(mcfg, std::move(resources), cfg.seed), plan, cfg);
}

TrainResult train_ada(const ModelConfig& mcfg, std::shared_ptr<const FeatureResources> resources,
                      const Corpus& source, std::span<const TokenSequence> target_unlabeled, const AdaConfig& cfg,
                      std::span<const TokenSequence> heldout_target) {
  require_splits(source);
  if (target_unlabeled.empty()) throw ValidationError("train_ada needs unlabeled target sentences");
  ModelConfig m = mcfg;
  m.domain_head = true;
  m.lambda = cfg.lambda;
  const auto train = source.split_sentences("train");
  const auto dev = source.split_sentences("dev");
  const auto train_seqs = strip_tags(train);
  const auto dev_seqs = strip_tags(dev);

  TrainPlan plan;
  plan.train = items_of(train, Domain::SOURCE);
  plan.dev = items_of(dev, Domain::SOURCE);
  plan.adversarial = true;
  for (const auto& s : train_seqs) plan.mix_source.push_back(&s);
  for (const auto& s : target_unlabeled) plan.mix_target.push_back(&s);
  for (const auto& s : dev_seqs) plan.probe_source.push_back(&s);
  const auto probe = heldout_target.empty() ? target_unlabeled.first(std::min<std::size_t>(200, target_unlabeled.size()))
                                            : heldout_target;
  for (const auto& s : probe) plan.probe_target.push_back(&s);
  plan.epochs = cfg.max_epochs;
  return run_training(TaggerModel(m, std::move(resources), cfg.seed), plan, cfg);
}

TrainResult train_feda(const ModelConfig& mcfg, std::shared_ptr<const FeatureResources> resources,
                       const Corpus& source, std::span<const TaggedSentence> target_train, const AdaConfig& cfg,
                       std::span<const TaggedSentence> target_dev) {
  require_splits(source);
  ModelConfig m = mcfg;
  m.feda = true;
  const auto train = source.split_sentences("train");
  const auto dev = source.split_sentences("dev");
  TrainPlan plan;
  plan.train = items_of(train, Domain::SOURCE);
  for (const auto& s : target_train) plan.train.push_back({&s, Domain::TARGET, 1.0});
  plan.dev = items_of(dev, Domain::SOURCE);
  for (const auto& s : target_dev) plan.dev.push_back({&s, Domain::TARGET, 1.0});
  plan.epochs = cfg.max_epochs;
  auto result = run_training(TaggerModel(m, std::move(resources), cfg.seed), plan, cfg);
  if (target_train.empty()) result.warnings.push_back("FEDA without target data: only the source and general extractors train");
  return result;
}

TaggerModel finetune(const TaggerModel& model, std::span<const TaggedSentence> labeled, const AdaConfig& cfg,
                     TrainLog* log) {
  if (!model.trained()) throw ValidationError("finetune needs a trained model");
  if (labeled.empty()) throw ValidationError("finetune needs labeled target sentences");
  if (cfg.finetune_epochs == 0) return model;
  const Domain gate = model.config().feda ? Domain::TARGET : Domain::SOURCE;
  TrainPlan plan;
  for (const auto& s : labeled) plan.train.push_back({&s, gate, 1.0});
  plan.epochs = cfg.finetune_epochs;
  plan.early_stopping = false;
  AdaConfig c = cfg;
  c.seed = derive_seed(cfg.seed, "finetune");
  auto result = run_training(model, plan, c);
  if (log) *log = result.log;
  return result.final_model;
}

nlohmann::json CurveReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array(), rs = nlohmann::json::array();
  for (const auto& p : points)
    pts.push_back({{"percent", p.percent}, {"mean_f1", p.mean_f1}, {"stdev_f1", p.stdev_f1}, {"runs", p.runs}});
  for (const auto& r : runs)
    rs.push_back({{"percent", r.percent}, {"seed", r.seed}, {"n_labeled", r.n_labeled}, {"report", trigada::to_json(r.report)}});
  return {{"points", pts}, {"runs", rs}, {"warnings", warnings}};
}

std::string CurveReport::to_tsv() const {
  std::ostringstream out;
  out << "percent\tmean_f1\tstdev_f1\truns\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.4f\t%.6f\t%.6f\t%zu\n", p.percent, p.mean_f1, p.stdev_f1, p.runs);
    out << buf;
  }
  return out.str();
}

CurveReport run_finetune_sweep(const TaggerModel& model, const Corpus& target, std::span<const double> percents,
                               std::span<const std::uint64_t> seeds, const AdaConfig& cfg,
                               const std::string& eval_split) {
  CurveReport report;
  for (double p : percents)
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("finetune percents must lie in (0, 1)");
  if (percents.empty() || seeds.empty()) {
    report.warnings.push_back(percents.empty() ? "empty percent list" : "empty seed list");
    return report;
  }
  if (!target.has_split(eval_split)) throw ValidationError("target corpus has no " + eval_split + " split");
  const auto eval_sents = target.split_sentences(eval_split);
  const Domain gate = model.config().feda ? Domain::TARGET : Domain::SOURCE;

  for (double p : percents) {
    std::vector<double> f1s;
    for (auto seed : seeds) {
      const auto sample = sample_labeled_fraction(target, p, seed);
      AdaConfig c = cfg;
      c.seed = seed;
      const auto tuned = finetune(model, sample.labeled.sentences, c);
      CurveRun run{p, seed, sample.labeled.sentences.size(),
                   evaluate(tuned, eval_sents, gate, target.name + "/" + eval_split, "finetune")};
      f1s.push_back(run.report.f1);
      report.runs.push_back(std::move(run));
    }
    CurvePoint pt;
    pt.percent = p;
    pt.runs = f1s.size();
    pt.mean_f1 = std::accumulate(f1s.begin(), f1s.end(), 0.0) / static_cast<double>(f1s.size());
    if (f1s.size() > 1) {
      double ss = 0.0;
      for (double f : f1s) ss += (f - pt.mean_f1) * (f - pt.mean_f1);
      pt.stdev_f1 = std::sqrt(ss / static_cast<double>(f1s.size() - 1));
    }
    report.points.push_back(pt);
  }
  return report;
}

}  // namespace trigada
