#include "trigada/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "trigada/eval.hpp"
#include "trigada/kv.hpp"
#include "trigada/synthetic.hpp"

namespace trigada {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"schema_version", "1", "config schema version"},
      {"mode", "ada", "train mode: supervised | ada | feda"},
      {"seed", "13", "root seed for model init, batching and dropout"},
      {"seeds", "1,2,3,4,5", "seed list for sweep, finetune curves and repeated runs"},
      {"data_seed", "", "seed for synthetic generation and splits (empty: seed)"},
      {"run_name", "", "output subdirectory name (empty: derived)"},
      {"output_dir", "out", "output root, overridden by TRIGADA_OUTPUT_ROOT"},
      {"prepared_dir", "", "prepared data directory (empty: <output root>/prepared)"},
      {"source_tsv", "", "labeled source corpus"},
      {"target_tsv", "", "target corpus (tags used only for evaluation and labeled fractions)"},
      {"synthetic", "false", "prepare generates a synthetic pair instead of reading TSVs"},
      {"synthetic_spec", "", "synthetic spec file (empty: built-in defaults)"},
      {"split_fractions", "0.8,0.1,0.1", "document-level train,dev,test fractions"},
      {"realis_variant", "false", "prepare also writes realis-filtered corpora"},
      {"realis_policy", "", "realis policy file (empty: built-in policy)"},
      {"use_realis", "false", "train and evaluate on the realis-filtered target"},
      {"embeddings", "", "word2vec text file (empty: prepared or random vectors)"},
      {"min_count", "1", "vocabulary frequency cutoff"},
      {"lowercase", "false", "case-fold the vocabulary"},
      {"contextual_dir", "", "precomputed contextual feature artifact"},
      {"subtoken_rule", "mean", "subtoken collapse: first | mean"},
      {"learner", "bilstm", "lstm | bilstm | pos | contextual"},
      {"hidden", "100", "LSTM state size per direction"},
      {"input_dropout", "0.5", "dropout on input vectors"},
      {"classifier_hidden", "100", "event classifier hidden width"},
      {"domain_hidden", "100", "domain predictor hidden width"},
      {"domain_layers", "3", "domain predictor hidden layers"},
      {"pooling", "mean", "sequence pooling for the domain predictor: mean | max | last"},
      {"word_dim", "100", "static word vector size"},
      {"pos_dim", "50", "POS embedding size"},
      {"contextual_dim", "3072", "contextual feature size"},
      {"lambda", "1.0", "gradient reversal strength"},
      {"lambdas", "0.1,0.2,0.5,1.0,2.0,5.0", "sweep grid"},
      {"batch_size", "16", "sentences per batch"},
      {"max_epochs", "1000", "epoch cap"},
      {"patience", "25", "early-stopping patience in epochs"},
      {"learning_rate", "0.001", "Adam step size"},
      {"max_grad_norm", "0", "global gradient-norm clip (0: off)"},
      {"domain_routing", "both", "reversed gradient from: both | source_only"},
      {"finetune_epochs", "10", "finetuning epochs"},
      {"target_label_fraction", "0.05", "labeled target fraction for feda"},
      {"finetune_percents", "0.01,0.02,0.03,0.04,0.05", "labeled fractions for the finetune curve"},
      {"model_dir", "", "checkpoint used by finetune and selftrain"},
      {"labeled_fraction", "0.01", "self-training D^l fraction"},
      {"iterations", "1", "self-training rounds"},
      {"student_learner", "contextual", "self-training student learner"},
      {"student_epochs", "30", "self-training student epochs"},
      {"eval_models", "", "id:source|target:checkpoint entries, comma separated"},
      {"disagreement_baseline", "", "eval model id expected to miss triggers"},
      {"disagreement_improved", "", "eval model id expected to recover them"},
      {"disagreement_limit", "50", "cap on exported disagreements per corpus"},
      {"sweep_workers", "1", "concurrent sweep runs"},
      {"verbose", "false", "per-epoch progress on stderr"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& key) {
  for (const auto& k : config_schema())
    if (k.name == key) return &k;
  return nullptr;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(out))
    throw ConfigError(key + ": '" + v + "' is not a finite number");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

ExperimentConfig ExperimentConfig::parse(std::istream& in, const std::string& origin) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& e : parse_kv(in, origin)) {
    if (!find_key(e.key)) throw ParseError(origin, e.line, "unknown config key '" + e.key + "'");
    if (!seen.insert(e.key).second) throw ParseError(origin, e.line, "duplicate config key '" + e.key + "'");
    cfg.values_[e.key] = e.value;
  }
  if (cfg.values_.at("schema_version") != std::to_string(kConfigSchemaVersion))
    throw ConfigError(origin + ": unsupported schema_version " + cfg.values_.at("schema_version"));
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  return parse(in, path.string());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = trim(value);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double ExperimentConfig::real(const std::string& key) const { return parse_double(key, get(key)); }

std::size_t ExperimentConfig::count(const std::string& key) const {
  return static_cast<std::size_t>(parse_u64(key, get(key)));
}

std::uint64_t ExperimentConfig::u64(const std::string& key) const { return parse_u64(key, get(key)); }

bool ExperimentConfig::flag(const std::string& key) const {
  const auto v = to_lower(get(key));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": '" + get(key) + "' is not a boolean");
}

std::vector<double> ExperimentConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(get(key))) out.push_back(parse_double(key, s));
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::u64s(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(get(key))) out.push_back(parse_u64(key, s));
  return out;
}

std::vector<std::string> ExperimentConfig::strings(const std::string& key) const { return split_list(get(key)); }

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void ExperimentConfig::save(const fs::path& path) const {
  write_text(path, "# materialized config, hash " + hash() + "\n" + canonical());
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.kind = parse_learner_kind(get("learner"));
  m.plan.kind = feature_kind_for(m.kind);
  m.plan.word_dim = count("word_dim");
  m.plan.pos_dim = count("pos_dim");
  m.plan.contextual_dim = count("contextual_dim");
  m.hidden = count("hidden");
  m.input_dropout = real("input_dropout");
  m.classifier_hidden = count("classifier_hidden");
  m.domain_hidden = count("domain_hidden");
  m.domain_layers = count("domain_layers");
  m.pooling = parse_pool_mode(get("pooling"));
  m.lambda = real("lambda");
  m.validate();
  return m;
}

ModelConfig ExperimentConfig::student_config() const {
  ModelConfig m = model_config();
  m.kind = parse_learner_kind(get("student_learner"));
  m.plan.kind = feature_kind_for(m.kind);
  m.domain_head = false;
  m.feda = false;
  m.validate();
  return m;
}

AdaConfig ExperimentConfig::ada_config() const {
  AdaConfig c;
  c.lambda = real("lambda");
  c.batch_size = count("batch_size");
  c.max_epochs = count("max_epochs");
  c.finetune_epochs = count("finetune_epochs");
  c.patience = count("patience");
  c.learning_rate = real("learning_rate");
  c.max_grad_norm = real("max_grad_norm");
  c.routing = parse_domain_routing(get("domain_routing"));
  c.seed = u64("seed");
  c.verbose = flag("verbose");
  c.validate();
  return c;
}

SelfTrainSpec ExperimentConfig::selftrain_spec() const {
  SelfTrainSpec s;
  s.labeled_fraction = real("labeled_fraction");
  s.iterations = count("iterations");
  s.student = student_config();
  s.cfg = ada_config();
  s.student_epochs = count("student_epochs");
  s.sample_seed = u64("seed");
  s.validate();
  return s;
}

fs::path ExperimentConfig::output_root() const {
  if (const char* env = std::getenv("TRIGADA_OUTPUT_ROOT"); env && *env) return env;
  return get("output_dir");
}

fs::path ExperimentConfig::prepared_dir() const {
  return get("prepared_dir").empty() ? output_root() / "prepared" : fs::path(get("prepared_dir"));
}

void ExperimentConfig::validate() const {
  const auto mode = get("mode");
  if (mode != "supervised" && mode != "ada" && mode != "feda")
    throw ConfigError("mode: '" + mode + "' is not one of supervised | ada | feda");
  model_config();
  ada_config();
  u64s("seeds");
  if (!get("data_seed").empty()) u64("data_seed");
  const auto fr = reals("split_fractions");
  if (fr.size() != 3) throw ConfigError("split_fractions needs three values");
  for (const char* k : {"synthetic", "realis_variant", "use_realis", "lowercase", "verbose"}) flag(k);
  count("min_count");
  parse_subtoken_rule(get("subtoken_rule"));
  const double tf = real("target_label_fraction");
  if (!(tf >= 0.0 && tf < 1.0)) throw ConfigError("target_label_fraction must lie in [0, 1)");
  reals("lambdas");
  reals("finetune_percents");
  const double lf = real("labeled_fraction");
  if (!(lf > 0.0 && lf < 1.0)) throw ConfigError("labeled_fraction must lie in (0, 1)");
  if (count("iterations") < 1) throw ConfigError("iterations must be >= 1");
  parse_learner_kind(get("student_learner"));
  count("student_epochs");
  count("disagreement_limit");
  if (count("sweep_workers") < 1) throw ConfigError("sweep_workers must be >= 1");
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t data_seed(const ExperimentConfig& cfg) {
  return cfg.get("data_seed").empty() ? cfg.u64("seed") : cfg.u64("data_seed");
}

fs::path run_dir(const ExperimentConfig& cfg, const std::string& command, const std::string& fallback) {
  const auto name = cfg.get("run_name").empty() ? fallback : cfg.get("run_name");
  return cfg.output_root() / command / name;
}

fs::path start_run(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  cfg.save(dir / "config.kv");
  return dir;
}

bool has_standard_splits(const Corpus& c) { return c.has_split("train") && c.has_split("dev") && c.has_split("test"); }

json stats_json(const std::string& role, const Corpus& c) {
  const auto s = compute_stats(c);
  char pct[32];
  std::snprintf(pct, sizeof pct, "%.2f", 100.0 * s.density);
  return {{"role", role},          {"name", c.name},        {"n_docs", s.n_docs}, {"n_tokens", s.n_tokens},
          {"n_events", s.n_events}, {"density", s.density}, {"density_pct", pct}};
}

std::shared_ptr<const ContextualFeatureStore> load_store(const ExperimentConfig& cfg, const Corpus& a, const Corpus& b) {
  if (cfg.get("contextual_dir").empty()) throw ConfigError("contextual features requested but contextual_dir is empty");
  Corpus both;
  both.name = "combined";
  both.sentences = a.sentences;
  both.sentences.insert(both.sentences.end(), b.sentences.begin(), b.sentences.end());
  auto store = std::make_shared<ContextualFeatureStore>(
      import_contextual_features(cfg.get("contextual_dir"), both, parse_subtoken_rule(cfg.get("subtoken_rule"))));
  if (store->dim() != cfg.count("contextual_dim"))
    throw ValidationError("contextual features have dim " + std::to_string(store->dim()) + ", config says " +
                          cfg.get("contextual_dim"));
  return store;
}

bool is_contextual(const std::string& learner) { return parse_learner_kind(learner) == LearnerKind::CONTEXTUAL; }

bool checkpoint_is_contextual(const fs::path& dir) {
  const auto j = read_json(dir / "model.json");
  return model_config_from_json(j).kind == LearnerKind::CONTEXTUAL;
}

TaggerModel load_checkpoint(const ExperimentConfig& cfg, const fs::path& dir, const PreparedData& data) {
  if (!fs::exists(dir / "model.json")) throw ValidationError("no checkpoint at " + dir.string());
  std::shared_ptr<const ContextualFeatureStore> store;
  if (checkpoint_is_contextual(dir))
    store = data.resources->store ? data.resources->store : load_store(cfg, data.source, data.target);
  return TaggerModel::load(dir, store);
}

Domain ood_gate(const TaggerModel& m) { return m.config().feda ? Domain::TARGET : Domain::SOURCE; }

json transfer_metrics(const TaggerModel& m, const PreparedData& data) {
  const auto sdev = data.source.split_sentences("dev");
  const auto stest = data.source.split_sentences("test");
  const auto ttest = data.target.split_sentences("test");
  const Domain g = ood_gate(m);
  return {{"source_dev", to_json(evaluate(m, sdev, Domain::SOURCE, data.source.name + "/dev"))},
          {"in_domain", to_json(evaluate(m, stest, Domain::SOURCE, data.source.name + "/test"))},
          {"out_of_domain", to_json(evaluate(m, data.target.sentences, g, data.target.name + "/all"))},
          {"target_test", to_json(evaluate(m, ttest, g, data.target.name + "/test"))}};
}

struct TrainOutcome {
  TrainResult result;
  json summary;
};

TrainOutcome run_train(const ExperimentConfig& cfg, const PreparedData& data, const fs::path& dir,
                       const std::string& mode, const AdaConfig& ada) {
  ModelConfig m = cfg.model_config();
  m.lambda = ada.lambda;
  const auto ttrain = data.target.split_sentences("train");
  const auto tdev = data.target.split_sentences("dev");
  std::vector<TaggedSentence> feda_labels;

  auto attempt = [&]() -> TrainResult {
    if (mode == "supervised") return train_supervised(m, data.resources, data.source, ada);
    if (mode == "ada") {
      const auto unlabeled = strip_tags(ttrain);
      const auto heldout = strip_tags(tdev);
      return train_ada(m, data.resources, data.source, unlabeled, ada, heldout);
    }
    const double frac = cfg.real("target_label_fraction");
    if (frac > 0.0)
      feda_labels = sample_labeled_fraction(data.target, frac, derive_seed(ada.seed, "feda.sample")).labeled.sentences;
    return train_feda(m, data.resources, data.source, feda_labels, ada, tdev);
  };

  TrainResult r = [&] {
    try {
      return attempt();
    } catch (const TrainingDiverged& e) {
      e.log().write_jsonl(dir / "trainlog.jsonl");
      throw;
    }
  }();

  r.log.write_jsonl(dir / "trainlog.jsonl");
  r.best.config_hash = cfg.hash();
  r.final_model.config_hash = cfg.hash();
  r.best.save(dir / "best.ckpt");
  r.final_model.save(dir / "final.ckpt");

  json summary = {{"config_hash", cfg.hash()},
                  {"mode", mode},
                  {"learner", cfg.get("learner")},
                  {"lambda", ada.lambda},
                  {"seed", ada.seed},
                  {"best_epoch", r.best_epoch},
                  {"epochs_run", r.log.epochs.size()},
                  {"warnings", r.warnings},
                  {"metrics", transfer_metrics(r.best, data)}};
  if (mode == "ada" && r.best_epoch > 0) {
    const double acc = r.log.epochs[r.best_epoch - 1].domain_accuracy;
    summary["domain_accuracy"] = std::isfinite(acc) ? json(acc) : json(nullptr);
  }
  if (mode == "feda") summary["target_labeled"] = feda_labels.size();
  summary["target_tag_reads"] = r.audit.target_tag_reads;
  write_json(dir / "result.json", summary);
  return {std::move(r), std::move(summary)};
}

}  // namespace

PreparedData load_prepared(const ExperimentConfig& cfg, bool need_contextual) {
  const fs::path dir = cfg.prepared_dir();
  if (!fs::exists(dir / "manifest.json"))
    throw ValidationError("no prepared data in " + dir.string() + " (run `prepare` first)");
  const auto manifest = read_json(dir / "manifest.json");
  PreparedData d;
  d.source = load_corpus(dir / "source" / "corpus.tsv");
  const bool realis = cfg.flag("use_realis");
  if (realis && !fs::exists(dir / "target.realis"))
    throw ValidationError("use_realis is set but " + dir.string() + " has no realis variant");
  d.target = load_corpus(dir / (realis ? "target.realis" : "target") / "corpus.tsv");
  for (const Corpus* c : {&d.source, &d.target})
    if (!has_standard_splits(*c)) throw ValidationError("prepared corpus '" + c->name + "' lacks train/dev/test splits");

  auto res = std::make_shared<FeatureResources>();
  res->vocab = Vocab::load(dir / "vocab.txt");
  res->pos_vocab = Vocab::load(dir / "pos_vocab.txt");
  const auto word_dim = cfg.count("word_dim");
  const auto oov_seed = derive_seed(cfg.u64("seed"), "embeddings");
  if (!cfg.get("embeddings").empty()) {
    res->words = load_pretrained_embeddings(cfg.get("embeddings"), res->vocab, word_dim, oov_seed);
  } else if (manifest.contains("embeddings") && manifest["embeddings"].is_string()) {
    res->words = load_pretrained_embeddings(dir / manifest["embeddings"].get<std::string>(), res->vocab, word_dim, oov_seed);
  } else {
    res->words = random_embeddings(res->vocab.size(), word_dim, oov_seed, false);
  }
  if (need_contextual) res->store = load_store(cfg, d.source, d.target);
  d.resources = std::move(res);
  return d;
}

std::string format_stats_table(const std::vector<std::pair<std::string, CorpusStats>>& rows) {
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %10s %8s %9s\n", static_cast<int>(w), "Dataset", "Docs", "Tokens", "Events",
                "Density");
  out << buf;
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %8zu %10zu %8zu %8.2f%%\n", static_cast<int>(w), name.c_str(), s.n_docs,
                  s.n_tokens, s.n_events, 100.0 * s.density);
    out << buf;
  }
  return out.str();
}

fs::path cmd_synth(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto spec = cfg.get("synthetic_spec").empty() ? SyntheticSpec{} : SyntheticSpec::load(cfg.get("synthetic_spec"));
  const auto pair = make_synthetic_pair(spec, data_seed(cfg));
  const fs::path dir = start_run(cfg, cfg.output_root() / "synth");
  write_corpus(pair.source, dir / "source");
  write_corpus(pair.target, dir / "target");
  write_word2vec(dir / "embeddings.w2v", pair.embeddings);
  json stats = json::array({stats_json("source", pair.source), stats_json("target", pair.target)});
  write_json(dir / "stats.json", stats);
  return dir;
}

fs::path cmd_prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  Corpus source, target;
  std::vector<WordVector> vectors;
  if (!cfg.get("source_tsv").empty() || !cfg.get("target_tsv").empty()) {
    if (cfg.get("source_tsv").empty() || cfg.get("target_tsv").empty())
      throw ConfigError("set both source_tsv and target_tsv");
    source = load_corpus(cfg.get("source_tsv"));
    target = load_corpus(cfg.get("target_tsv"));
  } else if (cfg.flag("synthetic")) {
    const auto spec =
        cfg.get("synthetic_spec").empty() ? SyntheticSpec{} : SyntheticSpec::load(cfg.get("synthetic_spec"));
    auto pair = make_synthetic_pair(spec, data_seed(cfg));
    source = std::move(pair.source);
    target = std::move(pair.target);
    vectors = std::move(pair.embeddings);
  } else {
    throw ConfigError("nothing to prepare: set source_tsv and target_tsv, or synthetic = true");
  }
  if (source.name == target.name) throw ValidationError("source and target corpora share the name '" + source.name + "'");

  const auto fr = cfg.reals("split_fractions");
  const std::array<double, 3> fractions{fr[0], fr[1], fr[2]};
  for (Corpus* c : {&source, &target})
    if (!has_standard_splits(*c)) *c = split_corpus(*c, fractions, derive_seed(data_seed(cfg), "split." + c->name));

  const fs::path dir = start_run(cfg, cfg.prepared_dir());
  write_corpus(source, dir / "source");
  write_corpus(target, dir / "target");

  std::vector<std::pair<std::string, CorpusStats>> rows{{source.name, compute_stats(source)},
                                                        {target.name, compute_stats(target)}};
  json stats = json::array({stats_json("source", source), stats_json("target", target)});
  if (cfg.flag("realis_variant")) {
    const auto policy = cfg.get("realis_policy").empty() ? RealisPolicy{} : RealisPolicy::load(cfg.get("realis_policy"));
    for (const auto& [role, c] : {std::pair<std::string, const Corpus*>{"source", &source}, {"target", &target}}) {
      const auto filtered = filter_unrealized_events(*c, policy);
      write_corpus(filtered, dir / (role + ".realis"));
      rows.push_back({filtered.name + " (realis)", compute_stats(filtered)});
      stats.push_back(stats_json(role + ".realis", filtered));
    }
  }

  const Corpus* both[] = {&source, &target};
  build_vocab(both, cfg.count("min_count"), cfg.flag("lowercase")).save(dir / "vocab.txt");
  build_pos_vocab(both).save(dir / "pos_vocab.txt");

  json manifest = {{"source_name", source.name}, {"target_name", target.name}, {"embeddings", nullptr}};
  if (!vectors.empty()) {
    write_word2vec(dir / "embeddings.w2v", vectors);
    manifest["embeddings"] = "embeddings.w2v";
  }
  write_json(dir / "stats.json", stats);
  write_text(dir / "stats.txt", format_stats_table(rows));
  write_json(dir / "manifest.json", manifest);
  return dir;
}

fs::path cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto mode = cfg.get("mode");
  const auto data = load_prepared(cfg, is_contextual(cfg.get("learner")));
  const auto ada = cfg.ada_config();
  std::string fallback = mode + "-" + cfg.get("learner") + "-s" + cfg.get("seed");
  if (mode == "ada") fallback += "-l" + fmt_real(ada.lambda);
  const auto dir = start_run(cfg, run_dir(cfg, "runs", fallback));
  run_train(cfg, data, dir, mode, ada);
  return dir;
}

std::size_t select_best_lambda(const std::vector<SweepRow>& rows, double tolerance) {
  if (rows.empty()) throw ValidationError("no sweep rows to choose from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double d = rows[i].mean_dev_f1 - rows[best].mean_dev_f1;
    if (d > tolerance) {
      best = i;
    } else if (std::abs(d) <= tolerance &&
               std::abs(rows[i].mean_domain_accuracy - 0.5) < std::abs(rows[best].mean_domain_accuracy - 0.5)) {
      best = i;
    }
  }
  return best;
}

fs::path cmd_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto lambdas = cfg.reals("lambdas");
  if (lambdas.empty()) throw ConfigError("lambdas is empty");
  for (double l : lambdas)
    if (l < 0.0) throw ConfigError("lambdas must be >= 0");
  const auto seeds = cfg.u64s("seeds");
  if (seeds.empty()) throw ConfigError("seeds is empty");
  const auto data = load_prepared(cfg, is_contextual(cfg.get("learner")));
  const auto dir = start_run(cfg, run_dir(cfg, "sweeps", "sweep-" + cfg.get("learner")));

  struct Job {
    std::size_t row;
    double lambda;
    std::uint64_t seed;
    json summary;
    std::exception_ptr error;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    for (auto s : seeds) jobs.push_back({i, lambdas[i], s, {}, nullptr});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      auto& job = jobs[k];
      try {
        AdaConfig ada = cfg.ada_config();
        ada.lambda = job.lambda;
        ada.seed = job.seed;
        const auto sub = dir / ("lambda-" + fmt_real(job.lambda) + "-seed-" + std::to_string(job.seed));
        fs::create_directories(sub);
        job.summary = run_train(cfg, data, sub, "ada", ada).summary;
      } catch (...) {
        job.error = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(cfg.count("sweep_workers"), jobs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }
  for (const auto& job : jobs)
    if (job.error) std::rethrow_exception(job.error);

  std::vector<SweepRow> rows(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) rows[i].lambda = lambdas[i];
  for (const auto& job : jobs) {
    auto& row = rows[job.row];
    row.dev_f1.push_back(job.summary["metrics"]["source_dev"]["f1"].get<double>());
    row.target_f1.push_back(job.summary["metrics"]["out_of_domain"]["f1"].get<double>());
    const auto& acc = job.summary["domain_accuracy"];
    row.domain_accuracy.push_back(acc.is_number() ? acc.get<double>() : std::nan(""));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  for (auto& r : rows) {
    r.mean_dev_f1 = mean(r.dev_f1);
    r.mean_domain_accuracy = mean(r.domain_accuracy);
    r.mean_target_f1 = mean(r.target_f1);
  }
  const auto best = select_best_lambda(rows);

  json out = json::array();
  std::ostringstream tsv;
  tsv << "lambda\tmean_dev_f1\tmean_domain_accuracy\tmean_out_of_domain_f1\truns\tselected\n";
  char buf[256];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out.push_back({{"lambda", r.lambda},
                   {"dev_f1", r.dev_f1},
                   {"domain_accuracy", r.domain_accuracy},
                   {"out_of_domain_f1", r.target_f1},
                   {"mean_dev_f1", r.mean_dev_f1},
                   {"mean_domain_accuracy", r.mean_domain_accuracy},
                   {"mean_out_of_domain_f1", r.mean_target_f1},
                   {"selected", i == best}});
    std::snprintf(buf, sizeof buf, "%g\t%.6f\t%.6f\t%.6f\t%zu\t%s\n", r.lambda, r.mean_dev_f1, r.mean_domain_accuracy,
                  r.mean_target_f1, r.dev_f1.size(), i == best ? "*" : "");
    tsv << buf;
  }
  write_json(dir / "sweep.json", {{"config_hash", cfg.hash()}, {"best_lambda", rows[best].lambda}, {"rows", out}});
  write_text(dir / "sweep.tsv", tsv.str());
  return dir;
}

fs::path cmd_finetune(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.get("model_dir").empty()) throw ConfigError("finetune needs model_dir");
  const auto data = load_prepared(cfg, false);
  const auto model = load_checkpoint(cfg, cfg.get("model_dir"), data);
  const auto dir = start_run(cfg, run_dir(cfg, "finetune", "curve"));
  const auto percents = cfg.reals("finetune_percents");
  const auto seeds = cfg.u64s("seeds");
  const auto curve = run_finetune_sweep(model, data.target, percents, seeds, cfg.ada_config());
  auto j = curve.to_json();
  j["config_hash"] = cfg.hash();
  j["before_finetune"] = to_json(evaluate(model, data.target.split_sentences("test"), ood_gate(model)));
  write_json(dir / "curve.json", j);
  write_text(dir / "curve.tsv", curve.to_tsv());
  for (const auto& w : curve.warnings) std::cerr << "warning: " << w << '\n';
  return dir;
}

fs::path cmd_selftrain(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.get("model_dir").empty()) throw ConfigError("selftrain needs model_dir");
  const auto spec = cfg.selftrain_spec();
  const auto data = load_prepared(cfg, is_contextual(cfg.get("student_learner")));
  const auto teacher = load_checkpoint(cfg, cfg.get("model_dir"), data);
  if (spec.student.kind == LearnerKind::CONTEXTUAL && !teacher.resources().store)
    throw ValidationError("a contextual student needs a contextual teacher sharing its feature store");
  const auto dir = start_run(cfg, run_dir(cfg, "selftrain", "selftrain-" + cfg.get("student_learner")));
  const auto r = self_train(spec, teacher, data.target);

  std::ofstream pseudo(dir / "pseudo_labels.tsv", std::ios::binary);
  write_tsv(pseudo, r.pseudo_labeled);
  pseudo.close();
  auto report = r.to_json();
  report["config_hash"] = cfg.hash();
  write_json(dir / "selftrain_report.json", report);
  r.teacher.save(dir / "teacher.ckpt");
  r.student.save(dir / "student.ckpt");
  return dir;
}

fs::path cmd_eval(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto entries = cfg.strings("eval_models");
  if (entries.empty()) throw ConfigError("eval_models is empty");
  const auto data = load_prepared(cfg, false);

  std::vector<std::string> ids;
  std::vector<std::string> roles;
  std::vector<TaggerModel> models;
  for (const auto& e : entries) {
    const auto a = e.find(':');
    const auto b = a == std::string::npos ? a : e.find(':', a + 1);
    if (b == std::string::npos) throw ConfigError("eval_models entry '" + e + "' is not id:source|target:path");
    const auto role = e.substr(a + 1, b - a - 1);
    if (role != "source" && role != "target") throw ConfigError("eval_models role must be source or target, got '" + role + "'");
    ids.push_back(e.substr(0, a));
    roles.push_back(role == "source" ? data.source.name : data.target.name);
    models.push_back(load_checkpoint(cfg, e.substr(b + 1), data));
  }
  std::vector<ModelEntry> table;
  for (std::size_t i = 0; i < models.size(); ++i) table.push_back({ids[i], roles[i], &models[i]});
  const std::map<std::string, const Corpus*> corpora{{data.source.name, &data.source}, {data.target.name, &data.target}};
  const auto matrix = build_transfer_matrix(table, corpora);

  const auto dir = start_run(cfg, run_dir(cfg, "eval", "matrix"));
  auto j = matrix.to_json();
  j["config_hash"] = cfg.hash();
  write_json(dir / "matrix.json", j);
  write_text(dir / "matrix.txt", matrix.to_table());

  const auto base = cfg.get("disagreement_baseline"), improved = cfg.get("disagreement_improved");
  if (!base.empty() || !improved.empty()) {
    auto find = [&](const std::string& id) -> const TaggerModel& {
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return models[i];
      throw ConfigError("disagreement model '" + id + "' is not among eval_models");
    };
    const auto& ma = find(base);
    const auto& mb = find(improved);
    for (const auto& [name, corpus] : corpora)
      write_disagreements_tsv(dir / ("disagreements_" + name + ".tsv"),
                              export_disagreements(ma, mb, corpus->sentences, cfg.count("disagreement_limit")));
  }
  return dir;
}

}  // namespace trigada
