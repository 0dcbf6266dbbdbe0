#include "trigada/model.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "trigada/kv.hpp"

namespace trigada {

const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::LSTM: return "lstm";
    case LearnerKind::BILSTM: return "bilstm";
    case LearnerKind::POS: return "pos";
    case LearnerKind::CONTEXTUAL: return "contextual";
  }
  return "?";
}

LearnerKind parse_learner_kind(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "lstm") return LearnerKind::LSTM;
  if (v == "bilstm") return LearnerKind::BILSTM;
  if (v == "pos") return LearnerKind::POS;
  if (v == "contextual" || v == "bert") return LearnerKind::CONTEXTUAL;
  throw ConfigError("unknown learner kind '" + s + "'");
}

FeatureKind feature_kind_for(LearnerKind k) {
  switch (k) {
    case LearnerKind::LSTM:
    case LearnerKind::BILSTM: return FeatureKind::STATIC;
    case LearnerKind::POS: return FeatureKind::STATIC_POS;
    case LearnerKind::CONTEXTUAL: return FeatureKind::CONTEXTUAL;
  }
  return FeatureKind::STATIC;
}

void ModelConfig::validate() const {
  if (plan.kind != feature_kind_for(kind))
    throw ValidationError(std::string("learner '") + to_string(kind) + "' cannot consume a '" + to_string(plan.kind) +
                          "' feature plan");
  if (hidden == 0 || classifier_hidden == 0) throw ConfigError("hidden sizes must be positive");
  if (domain_head && (domain_hidden == 0 || domain_layers == 0)) throw ConfigError("domain predictor needs width and depth");
  if (input_dropout < 0.0 || input_dropout >= 1.0) throw ConfigError("input dropout must lie in [0, 1)");
  if (feda && domain_head) throw ConfigError("FEDA models carry no domain predictor");
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
}

ReprLearner::ReprLearner(const std::string& name, Eigen::Index in, Eigen::Index hidden, bool bidirectional)
    : fwd_(name + ".fwd", in, hidden), bidirectional_(bidirectional) {
  if (bidirectional_) bwd_ = Lstm(name + ".bwd", in, hidden);
}

Seq ReprLearner::forward(const Seq& x, const SeqMask& mask, Cache* cache) const {
  Seq hf = fwd_.forward(x, mask, false, cache ? &cache->forward : nullptr);
  if (!bidirectional_) return hf;
  const Seq hb = bwd_.forward(x, mask, true, cache ? &cache->backward : nullptr);
  const Eigen::Index hd = fwd_.hidden();
  Seq out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    out[t].resize(2 * hd, hf[t].cols());
    out[t].topRows(hd) = hf[t];
    out[t].bottomRows(hd) = hb[t];
  }
  return out;
}

Seq ReprLearner::backward(const Cache& cache, const Seq& dh) {
  if (!bidirectional_) return fwd_.backward(cache.forward, dh, false);
  const Eigen::Index hd = fwd_.hidden();
  Seq df(dh.size()), db(dh.size());
  for (std::size_t t = 0; t < dh.size(); ++t) {
    df[t] = dh[t].topRows(hd);
    db[t] = dh[t].bottomRows(hd);
  }
  Seq dx = fwd_.backward(cache.forward, df, false);
  const Seq dxb = bwd_.backward(cache.backward, db, true);
  for (std::size_t t = 0; t < dx.size(); ++t) dx[t] += dxb[t];
  return dx;
}

void ReprLearner::init(Rng& rng) {
  fwd_.init(rng);
  if (bidirectional_) bwd_.init(rng);
}

void ReprLearner::collect(std::vector<Param*>& out) {
  fwd_.collect(out);
  if (bidirectional_) bwd_.collect(out);
}

Tag argmax_tag(double logit_o, double logit_event) { return logit_event > logit_o ? Tag::EVENT : Tag::O; }

TaggerModel::TaggerModel(ModelConfig cfg, std::shared_ptr<const FeatureResources> resources, std::uint64_t seed)
    : cfg_(std::move(cfg)), resources_(std::move(resources)), pooler_(cfg_.pooling) {
  cfg_.validate();
  if (!resources_) throw ValidationError("model needs feature resources");
  const auto in_dim = static_cast<Eigen::Index>(cfg_.plan.input_dim());
  if (cfg_.plan.kind != FeatureKind::CONTEXTUAL && resources_->words.dim() != cfg_.plan.word_dim)
    throw ValidationError("word embeddings have dim " + std::to_string(resources_->words.dim()) +
                          ", plan expects " + std::to_string(cfg_.plan.word_dim));
  if (cfg_.plan.kind == FeatureKind::CONTEXTUAL && resources_->store &&
      resources_->store->dim() != cfg_.plan.contextual_dim)
    throw ValidationError("contextual store has dim " + std::to_string(resources_->store->dim()) +
                          ", plan expects " + std::to_string(cfg_.plan.contextual_dim));

  if (cfg_.plan.kind == FeatureKind::STATIC_POS) {
    const auto table = random_embeddings(resources_->pos_vocab.size(), cfg_.plan.pos_dim,
                                         derive_seed(seed, "init.pos"), true);
    pos_embed_ = Param("input.pos_embeddings", table.rows.rows(), table.rows.cols());
    pos_embed_.value = table.rows;
  }

  const auto hidden = static_cast<Eigen::Index>(cfg_.hidden);
  const std::vector<std::string> names =
      cfg_.feda ? std::vector<std::string>{"repr.general", "repr.source", "repr.target"} : std::vector<std::string>{"repr"};
  for (const auto& name : names) {
    extractors_.emplace_back(name, in_dim, hidden, cfg_.bidirectional());
    Rng rng(derive_seed(seed, "init." + name));
    extractors_.back().init(rng);
  }

  event_head_ = Mlp("event", static_cast<Eigen::Index>(cfg_.features_dim()),
                    {static_cast<Eigen::Index>(cfg_.classifier_hidden)}, 2);
  {
    Rng rng(derive_seed(seed, "init.event"));
    event_head_.init(rng);
  }
  if (cfg_.domain_head) {
    const std::vector<Eigen::Index> widths(cfg_.domain_layers, static_cast<Eigen::Index>(cfg_.domain_hidden));
    domain_head_ = Mlp("domain", static_cast<Eigen::Index>(cfg_.repr_dim()), widths, 2);
    Rng rng(derive_seed(seed, "init.domain"));
    domain_head_.init(rng);
  }
}

Seq TaggerModel::embed(const Batch& batch) const {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto in_dim = static_cast<Eigen::Index>(cfg_.plan.input_dim());
  const auto wd = static_cast<Eigen::Index>(cfg_.plan.word_dim);
  Seq x(batch.max_len, Mat::Zero(in_dim, B));
  for (std::size_t t = 0; t < batch.max_len; ++t) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      if (!batch.mask[bi][t]) continue;
      switch (cfg_.plan.kind) {
        case FeatureKind::STATIC:
          x[t].col(b) = resources_->words.rows.row(batch.word_ids[bi][t]).transpose();
          break;
        case FeatureKind::STATIC_POS:
          x[t].col(b).head(wd) = resources_->words.rows.row(batch.word_ids[bi][t]).transpose();
          x[t].col(b).tail(static_cast<Eigen::Index>(cfg_.plan.pos_dim)) =
              pos_embed_.value.row(batch.pos_ids[bi][t]).transpose();
          break;
        case FeatureKind::CONTEXTUAL:
          if (batch.contextual.size() != batch.size() || batch.contextual[bi].cols() != in_dim)
            throw ValidationError("batch lacks contextual features of dim " + std::to_string(in_dim));
          x[t].col(b) = batch.contextual[bi].row(static_cast<Eigen::Index>(t)).transpose();
          break;
      }
    }
  }
  return x;
}

TaggerModel::Pass TaggerModel::forward(const Batch& batch, bool train, Rng* dropout_rng, Domain gate,
                                       bool event_head) const {
  Pass p;
  p.batch = &batch;
  p.steps = batch.max_len;
  p.batch_size = static_cast<Eigen::Index>(batch.size());
  p.gate = gate;
  p.mask.resize(p.steps);
  for (std::size_t t = 0; t < p.steps; ++t) {
    p.mask[t].resize(p.batch_size);
    for (Eigen::Index b = 0; b < p.batch_size; ++b) p.mask[t](b) = batch.mask[static_cast<std::size_t>(b)][t];
  }
  p.inputs = embed(batch);
  if (train && cfg_.input_dropout > 0.0) {
    if (dropout_rng == nullptr) throw ValidationError("training-mode forward needs a dropout RNG");
    p.dropout.reserve(p.steps);
    for (std::size_t t = 0; t < p.steps; ++t) {
      p.dropout.push_back(dropout_mask(p.inputs[t].rows(), p.inputs[t].cols(), cfg_.input_dropout, *dropout_rng));
      p.inputs[t] = p.inputs[t].cwiseProduct(p.dropout.back());
    }
  }

  if (cfg_.feda)
    p.active = {static_cast<int>(ExtractorSlot::GENERAL),
                static_cast<int>(gate == Domain::SOURCE ? ExtractorSlot::SOURCE : ExtractorSlot::TARGET)};
  else
    p.active = {0};
  p.extractor_cache.resize(p.active.size());

  if (!cfg_.feda) {
    p.h = extractors_[0].forward(p.inputs, p.mask, &p.extractor_cache[0]);
  } else {
    const auto rd = static_cast<Eigen::Index>(cfg_.repr_dim());
    p.h.assign(p.steps, Mat::Zero(3 * rd, p.batch_size));
    for (std::size_t k = 0; k < p.active.size(); ++k) {
      const Seq hk = extractors_[static_cast<std::size_t>(p.active[k])].forward(p.inputs, p.mask, &p.extractor_cache[k]);
      const Eigen::Index offset = feda_offset(p.active[k]);
      for (std::size_t t = 0; t < p.steps; ++t) p.h[t].middleRows(offset, rd) = hk[t];
    }
  }

  if (event_head) {
    p.logits = event_head_.forward(stack_columns(p.h), &p.event_cache);
    p.has_logits = true;
  }
  return p;
}

Eigen::Index TaggerModel::feda_offset(int slot) const {
  const auto rd = static_cast<Eigen::Index>(cfg_.repr_dim());
  switch (static_cast<ExtractorSlot>(slot)) {
    case ExtractorSlot::SOURCE: return 0;
    case ExtractorSlot::TARGET: return rd;
    case ExtractorSlot::GENERAL: return 2 * rd;
  }
  return 0;
}

void TaggerModel::backward(Pass& pass, const Mat* dlogits, const Seq* dh_extra) {
  Seq dh;
  if (dlogits) {
    if (!pass.has_logits) throw ValidationError("backward through an event head that was not run");
    dh = unstack_columns(event_head_.backward(pass.event_cache, *dlogits), pass.steps);
  }
  if (dh_extra) {
    if (dh.empty())
      dh = *dh_extra;
    else
      for (std::size_t t = 0; t < dh.size(); ++t) dh[t] += (*dh_extra)[t];
  }
  if (dh.empty()) return;

  Seq dx;
  const auto rd = static_cast<Eigen::Index>(cfg_.repr_dim());
  for (std::size_t k = 0; k < pass.active.size(); ++k) {
    const int slot = pass.active[k];
    Seq dhk = dh;
    if (cfg_.feda)
      for (std::size_t t = 0; t < dh.size(); ++t) dhk[t] = dh[t].middleRows(feda_offset(slot), rd);
    Seq dxk = extractors_[static_cast<std::size_t>(slot)].backward(pass.extractor_cache[k], dhk);
    if (dx.empty())
      dx = std::move(dxk);
    else
      for (std::size_t t = 0; t < dx.size(); ++t) dx[t] += dxk[t];
  }

  if (cfg_.plan.kind != FeatureKind::STATIC_POS) return;
  const auto wd = static_cast<Eigen::Index>(cfg_.plan.word_dim);
  const auto pd = static_cast<Eigen::Index>(cfg_.plan.pos_dim);
  for (std::size_t t = 0; t < pass.steps; ++t) {
    if (!pass.dropout.empty()) dx[t] = dx[t].cwiseProduct(pass.dropout[t]);
    for (Eigen::Index b = 0; b < pass.batch_size; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      if (!pass.batch->mask[bi][t]) continue;
      pos_embed_.grad.row(pass.batch->pos_ids[bi][t]) += dx[t].block(wd, b, pd, 1).transpose();
    }
  }
}

TaggerModel::DomainPass TaggerModel::domain_forward(const Pass& pass) const {
  if (!cfg_.domain_head) throw ValidationError("model has no domain predictor");
  DomainPass dp;
  dp.pooled = pooler_.forward(pass.h, pass.mask, &dp.pool_cache);
  dp.logits = domain_head_.forward(dp.pooled, &dp.mlp_cache);
  return dp;
}

Seq TaggerModel::domain_backward(const DomainPass& dp, const Mat& dlogits, const GradientReversal& grl,
                                 const RowVec* route) {
  const Mat dpooled = domain_head_.backward(dp.mlp_cache, dlogits);
  Mat reversed = grl.backward(dpooled);
  if (route)
    for (Eigen::Index b = 0; b < reversed.cols(); ++b)
      if ((*route)(b) == 0.0) reversed.col(b).setZero();
  return pooler_.backward(dp.pool_cache, reversed);
}

std::vector<Param*> TaggerModel::repr_params() {
  std::vector<Param*> out;
  if (cfg_.plan.kind == FeatureKind::STATIC_POS) out.push_back(&pos_embed_);
  for (auto& e : extractors_) e.collect(out);
  return out;
}

std::vector<Param*> TaggerModel::event_params() {
  std::vector<Param*> out;
  event_head_.collect(out);
  return out;
}

std::vector<Param*> TaggerModel::domain_params() {
  std::vector<Param*> out;
  if (cfg_.domain_head) domain_head_.collect(out);
  return out;
}

std::vector<Param*> TaggerModel::params() {
  auto out = repr_params();
  for (auto* p : event_params()) out.push_back(p);
  for (auto* p : domain_params()) out.push_back(p);
  return out;
}

std::vector<const Param*> TaggerModel::all_params() const {
  auto ps = const_cast<TaggerModel*>(this)->params();
  return {ps.begin(), ps.end()};
}

void TaggerModel::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::size_t TaggerModel::parameter_count(const std::vector<Param*>& ps) const {
  std::size_t n = 0;
  for (const auto* p : ps) n += static_cast<std::size_t>(p->value.size());
  return n;
}

namespace {

template <typename Item>
std::vector<Mat> logits_impl(const TaggerModel& model, std::span<const Item> items, Domain gate) {
  std::vector<Mat> out;
  out.reserve(items.size());
  const auto ctx = model.feature_context();
  for (std::size_t start = 0; start < items.size(); start += TaggerModel::kInferenceBatch) {
    const auto chunk = items.subspan(start, std::min(TaggerModel::kInferenceBatch, items.size() - start));
    const Batch batch = encode_batch(chunk, ctx);
    const auto pass = model.forward(batch, false, nullptr, gate);
    const auto B = static_cast<Eigen::Index>(batch.size());
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto len = batch.lengths[static_cast<std::size_t>(b)];
      Mat m(2, static_cast<Eigen::Index>(len));
      for (std::size_t t = 0; t < len; ++t) m.col(static_cast<Eigen::Index>(t)) = pass.logits.col(static_cast<Eigen::Index>(t) * B + b);
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<std::vector<Tag>> argmax_all(const std::vector<Mat>& logits) {
  std::vector<std::vector<Tag>> out;
  out.reserve(logits.size());
  for (const auto& m : logits) {
    std::vector<Tag> tags(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index t = 0; t < m.cols(); ++t) tags[static_cast<std::size_t>(t)] = argmax_tag(m(0, t), m(1, t));
    out.push_back(std::move(tags));
  }
  return out;
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw ValidationError("params.bin is truncated");
  return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, 2);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<float> buf;
  buf.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) buf.push_back(static_cast<float>(m(i, j)));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::map<std::string, Mat> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::map<std::string, Mat> out;
  const auto n = read_u32(in);
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name(read_u32(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto ndim = read_u32(in);
    if (ndim != 2) throw ValidationError("tensor '" + name + "' has " + std::to_string(ndim) + " dims, expected 2");
    const auto rows = read_u32(in), cols = read_u32(in);
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw ValidationError("params.bin is truncated in '" + name + "'");
    Mat m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = buf[static_cast<std::size_t>(i) * cols + j];
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace

std::vector<Mat> TaggerModel::token_logits(std::span<const TokenSequence> seqs, Domain gate) const {
  return logits_impl(*this, seqs, gate);
}

std::vector<std::vector<Tag>> TaggerModel::predict(std::span<const TokenSequence> seqs, Domain gate) const {
  return argmax_all(logits_impl(*this, seqs, gate));
}

std::vector<std::vector<Tag>> TaggerModel::predict(std::span<const TaggedSentence> sents, Domain gate) const {
  return argmax_all(logits_impl(*this, sents, gate));
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"feature_kind", to_string(c.plan.kind)},
          {"word_dim", c.plan.word_dim},
          {"pos_dim", c.plan.pos_dim},
          {"contextual_dim", c.plan.contextual_dim},
          {"hidden", c.hidden},
          {"input_dropout", c.input_dropout},
          {"classifier_hidden", c.classifier_hidden},
          {"domain_hidden", c.domain_hidden},
          {"domain_layers", c.domain_layers},
          {"pooling", to_string(c.pooling)},
          {"domain_head", c.domain_head},
          {"feda", c.feda},
          {"lambda", c.lambda}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.kind = parse_learner_kind(j.at("kind").get<std::string>());
    c.plan.kind = parse_feature_kind(j.at("feature_kind").get<std::string>());
    c.plan.word_dim = j.at("word_dim").get<std::size_t>();
    c.plan.pos_dim = j.at("pos_dim").get<std::size_t>();
    c.plan.contextual_dim = j.at("contextual_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.input_dropout = j.at("input_dropout").get<double>();
    c.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
    c.domain_hidden = j.at("domain_hidden").get<std::size_t>();
    c.domain_layers = j.at("domain_layers").get<std::size_t>();
    c.pooling = parse_pool_mode(j.at("pooling").get<std::string>());
    c.domain_head = j.at("domain_head").get<bool>();
    c.feda = j.at("feda").get<bool>();
    c.lambda = j.at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model.json: ") + e.what());
  }
  return c;
}

void TaggerModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto j = to_json(cfg_);
  j["vocab_hash"] = resources_->vocab.digest();
  j["pos_vocab_hash"] = resources_->pos_vocab.digest();
  j["config_hash"] = config_hash;
  j["trained"] = trained_;
  j["format"] = 1;
  {
    std::ofstream out(dir / "model.json", std::ios::binary);
    out << j.dump(2) << '\n';
  }
  resources_->vocab.save(dir / "vocab.txt");
  resources_->pos_vocab.save(dir / "pos_vocab.txt");

  std::ofstream out(dir / "params.bin", std::ios::binary);
  const auto ps = all_params();
  write_u32(out, static_cast<std::uint32_t>(ps.size() + 1));
  write_tensor(out, "input.word_embeddings", resources_->words.rows);
  for (const auto* p : ps) write_tensor(out, p->name, p->value);
}

TaggerModel TaggerModel::load(const std::filesystem::path& dir, std::shared_ptr<const ContextualFeatureStore> store) {
  std::ifstream jf(dir / "model.json");
  if (!jf) throw ValidationError("no model.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(jf);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "model.json").string() + ": " + e.what());
  }
  const auto cfg = model_config_from_json(j);

  auto res = std::make_shared<FeatureResources>();
  res->vocab = Vocab::load(dir / "vocab.txt");
  res->pos_vocab = Vocab::load(dir / "pos_vocab.txt");
  if (res->vocab.digest() != j.value("vocab_hash", ""))
    throw ValidationError(dir.string() + ": vocab.txt does not match the recorded vocab hash");
  auto tensors = read_tensors(dir / "params.bin");
  const auto wit = tensors.find("input.word_embeddings");
  if (wit == tensors.end()) throw ValidationError("params.bin lacks input.word_embeddings");
  if (static_cast<std::size_t>(wit->second.rows()) != res->vocab.size())
    throw ValidationError("word embedding rows do not match the vocabulary size");
  res->words.rows = std::move(wit->second);
  res->words.trainable = false;
  tensors.erase(wit);
  res->store = std::move(store);

  TaggerModel model(cfg, res, 0);
  for (auto* p : model.params()) {
    const auto it = tensors.find(p->name);
    if (it == tensors.end()) throw ValidationError("params.bin lacks tensor '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw ValidationError("tensor '" + p->name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                            std::to_string(it->second.cols()) + ", architecture expects " +
                            std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
    p->value = it->second;
    tensors.erase(it);
  }
  if (!tensors.empty()) throw ValidationError("params.bin has unexpected tensor '" + tensors.begin()->first + "'");
  model.config_hash = j.value("config_hash", "");
  model.trained_ = j.value("trained", false);
  return model;
}

}  // namespace trigada
