// Python bindings over the core library. Sentences cross the boundary as
// plain lists of token strings; reports and logs come back as dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "trigada/common.hpp"
#include "trigada/corpus.hpp"
#include "trigada/eval.hpp"
#include "trigada/experiment.hpp"
#include "trigada/features.hpp"
#include "trigada/model.hpp"
#include "trigada/selftrain.hpp"
#include "trigada/synthetic.hpp"
#include "trigada/training.hpp"

namespace py = pybind11;
using namespace trigada;

namespace {

py::object to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null:
      return py::none();
    case nlohmann::json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
      return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned:
      return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float:
      return py::float_(j.get<double>());
    case nlohmann::json::value_t::string:
      return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& v : j) out.append(to_py(v));
      return out;
    }
    default: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return out;
    }
  }
}

py::dict report_dict(const EvalReport& r) { return to_py(to_json(r)); }

py::list log_list(const TrainLog& log) {
  py::list out;
  for (const auto& e : log.epochs) out.append(to_py(to_json(e)));
  return out;
}

Domain parse_gate(const std::string& s) {
  if (s == "source") return Domain::SOURCE;
  if (s == "target") return Domain::TARGET;
  throw ValidationError("gate must be 'source' or 'target', got '" + s + "'");
}

std::vector<Tag> parse_tags(const std::vector<std::string>& tags) {
  std::vector<Tag> out;
  for (const auto& t : tags) out.push_back(parse_tag(t));
  return out;
}

std::vector<std::string> tag_names(const std::vector<Tag>& tags) {
  std::vector<std::string> out;
  for (auto t : tags) out.emplace_back(to_string(t));
  return out;
}

std::vector<TokenSequence> sequences_from(const std::vector<std::vector<std::string>>& words,
                                          const std::optional<std::vector<std::vector<std::string>>>& pos) {
  if (pos && pos->size() != words.size()) throw ValidationError("pos must have one list per sentence");
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    TokenSequence s{"py", i, {}};
    if (pos && (*pos)[i].size() != words[i].size())
      throw ValidationError("sentence " + std::to_string(i) + ": pos and word counts differ");
    for (std::size_t t = 0; t < words[i].size(); ++t)
      s.tokens.push_back({words[i][t], pos ? std::optional<std::string>((*pos)[i][t]) : std::nullopt, {}});
    out.push_back(std::move(s));
  }
  return out;
}

py::dict sentence_dict(const TaggedSentence& s) {
  py::dict d;
  d["doc_id"] = s.doc_id;
  d["sent_index"] = s.sent_index;
  std::vector<std::string> words, pos;
  for (const auto& t : s.tokens) {
    words.push_back(t.surface);
    pos.push_back(t.pos.value_or("_"));
  }
  d["tokens"] = words;
  d["pos"] = pos;
  d["tags"] = tag_names(s.tags);
  return d;
}

std::vector<WordVector> vectors_from(const std::map<std::string, std::vector<double>>& m) {
  std::vector<WordVector> out;
  for (const auto& [w, v] : m) out.push_back({w, v});
  return out;
}

std::shared_ptr<FeatureResources> make_resources(const Corpus& source, const Corpus& target, Vocab vocab,
                                                 EmbeddingTable words) {
  auto res = std::make_shared<FeatureResources>();
  res->vocab = std::move(vocab);
  const Corpus* both[] = {&source, &target};
  res->pos_vocab = build_pos_vocab(both);
  res->words = std::move(words);
  return res;
}

py::dict train_result_dict(const TrainResult& r) {
  py::dict d;
  d["best"] = r.best;
  d["final"] = r.final_model;
  d["best_epoch"] = r.best_epoch;
  d["log"] = log_list(r.log);
  d["warnings"] = r.warnings;
  d["source_tag_reads"] = r.audit.source_tag_reads;
  d["target_tag_reads"] = r.audit.target_tag_reads;
  return d;
}

}  // namespace

PYBIND11_MODULE(_trigada, m) {
  m.doc() = "Event-trigger tagging with adversarial domain adaptation";
  m.attr("__version__") = kVersion;
  m.attr("CONFIG_SCHEMA_VERSION") = kConfigSchemaVersion;

  // ConfigError and ParseError derive from ValidationError and map onto it.
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

  // ---- corpus
  py::class_<Corpus>(m, "Corpus")
      .def_readonly("name", &Corpus::name)
      .def_readonly("splits", &Corpus::splits)
      .def("doc_ids", &Corpus::doc_ids)
      .def("__len__", [](const Corpus& c) { return c.sentences.size(); })
      .def(
          "sentences",
          [](const Corpus& c, const std::optional<std::string>& split) {
            py::list out;
            for (const auto& s : split ? c.split_sentences(*split) : c.sentences) out.append(sentence_dict(s));
            return out;
          },
          py::arg("split") = py::none())
      .def("__repr__", [](const Corpus& c) {
        return "<Corpus '" + c.name + "' " + std::to_string(c.sentences.size()) + " sentences>";
      });

  m.def("load_corpus", &load_corpus, py::arg("path"));
  m.def("write_corpus", &write_corpus, py::arg("corpus"), py::arg("dir"));
  m.def(
      "make_corpus",
      [](const std::string& name, const std::vector<py::dict>& sentences, const std::string& split) {
        std::vector<TaggedSentence> out;
        for (const auto& d : sentences) {
          TaggedSentence s;
          s.doc_id = d["doc_id"].cast<std::string>();
          s.sent_index = d.contains("sent_index") ? d["sent_index"].cast<std::size_t>() : 0;
          const auto words = d["tokens"].cast<std::vector<std::string>>();
          s.tags = parse_tags(d["tags"].cast<std::vector<std::string>>());
          std::optional<std::vector<std::string>> pos;
          if (d.contains("pos")) pos = d["pos"].cast<std::vector<std::string>>();
          for (std::size_t t = 0; t < words.size(); ++t)
            s.tokens.push_back({words[t], pos && t < pos->size() ? std::optional((*pos)[t]) : std::nullopt, {}});
          out.push_back(std::move(s));
        }
        return make_corpus(name, std::move(out), split);
      },
      py::arg("name"), py::arg("sentences"), py::arg("split") = "train",
      "Sentences are dicts with doc_id, tokens, tags and optionally sent_index and pos.");
  m.def(
      "compute_stats",
      [](const Corpus& c) {
        const auto s = compute_stats(c);
        py::dict d;
        d["docs"] = s.n_docs;
        d["tokens"] = s.n_tokens;
        d["events"] = s.n_events;
        d["density"] = s.density;
        return d;
      },
      py::arg("corpus"));
  m.def(
      "filter_unrealized_events",
      [](const Corpus& c, const std::optional<std::filesystem::path>& policy) {
        return filter_unrealized_events(c, policy ? RealisPolicy::load(*policy) : RealisPolicy{});
      },
      py::arg("corpus"), py::arg("policy") = py::none());
  m.def(
      "split_corpus",
      [](const Corpus& c, std::array<double, 3> fractions, std::uint64_t seed) {
        return split_corpus(c, fractions, seed);
      },
      py::arg("corpus"), py::arg("fractions") = std::array<double, 3>{0.8, 0.1, 0.1}, py::arg("seed") = 13);
  m.def(
      "sample_labeled_fraction",
      [](const Corpus& c, double percent, std::uint64_t seed) {
        auto s = sample_labeled_fraction(c, percent, seed);
        return py::make_tuple(std::move(s.labeled), std::move(s.remainder));
      },
      py::arg("corpus"), py::arg("percent"), py::arg("seed"));

  // ---- synthetic data
  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_static("load", &SyntheticSpec::load, py::arg("path"))
      .def_readwrite("n_templates", &SyntheticSpec::n_templates)
      .def_readwrite("content_words", &SyntheticSpec::content_words)
      .def_readwrite("function_words", &SyntheticSpec::function_words)
      .def_readwrite("trigger_fraction", &SyntheticSpec::trigger_fraction)
      .def_readwrite("names", &SyntheticSpec::names)
      .def_readwrite("density", &SyntheticSpec::density)
      .def_readwrite("sentences", &SyntheticSpec::sentences)
      .def_readwrite("sentences_per_doc", &SyntheticSpec::sentences_per_doc)
      .def_readwrite("embedding_dim", &SyntheticSpec::embedding_dim)
      .def_readwrite("shared_event_scale", &SyntheticSpec::shared_event_scale)
      .def_readwrite("domain_event_scale", &SyntheticSpec::domain_event_scale)
      .def_readwrite("domain_offset_scale", &SyntheticSpec::domain_offset_scale)
      .def_readwrite("noise_scale", &SyntheticSpec::noise_scale)
      .def_readwrite("target_event_shift", &SyntheticSpec::target_event_shift);

  m.def(
      "make_synthetic_pair",
      [](const SyntheticSpec& spec, std::uint64_t seed) {
        auto p = make_synthetic_pair(spec, seed);
        std::map<std::string, std::vector<double>> vecs;
        for (auto& v : p.embeddings) vecs[v.word] = std::move(v.values);
        return py::make_tuple(std::move(p.source), std::move(p.target), vecs);
      },
      py::arg("spec"), py::arg("seed"), "Returns (source, target, {word: vector}).");

  // ---- features
  py::class_<FeatureResources, std::shared_ptr<FeatureResources>>(m, "Resources")
      .def_property_readonly("vocab_size", [](const FeatureResources& r) { return r.vocab.size(); })
      .def_property_readonly("word_dim", [](const FeatureResources& r) { return r.words.dim(); });

  m.def(
      "resources_from_vectors",
      [](const Corpus& source, const Corpus& target, const std::map<std::string, std::vector<double>>& vectors,
         std::uint64_t seed, std::size_t min_count) {
        if (vectors.empty()) throw ValidationError("no word vectors given");
        const std::size_t dim = vectors.begin()->second.size();
        auto vocab = build_vocab(source, target, min_count);
        auto words = embeddings_from_vectors(vectors_from(vectors), vocab, dim, seed);
        return make_resources(source, target, std::move(vocab), std::move(words));
      },
      py::arg("source"), py::arg("target"), py::arg("vectors"), py::arg("seed") = 13, py::arg("min_count") = 1);
  m.def(
      "resources_from_word2vec",
      [](const Corpus& source, const Corpus& target, const std::filesystem::path& path, std::uint64_t seed,
         std::size_t min_count) {
        auto vocab = build_vocab(source, target, min_count);
        auto words = load_pretrained_embeddings(path, vocab, 0, seed);
        return make_resources(source, target, std::move(vocab), std::move(words));
      },
      py::arg("source"), py::arg("target"), py::arg("path"), py::arg("seed") = 13, py::arg("min_count") = 1);

  // ---- model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_property(
          "learner", [](const ModelConfig& c) { return std::string(to_string(c.kind)); },
          [](ModelConfig& c, const std::string& s) {
            c.kind = parse_learner_kind(s);
            c.plan.kind = feature_kind_for(c.kind);
          })
      .def_property(
          "pooling", [](const ModelConfig& c) { return std::string(to_string(c.pooling)); },
          [](ModelConfig& c, const std::string& s) { c.pooling = parse_pool_mode(s); })
      .def_property(
          "word_dim", [](const ModelConfig& c) { return c.plan.word_dim; },
          [](ModelConfig& c, std::size_t v) { c.plan.word_dim = v; })
      .def_property(
          "pos_dim", [](const ModelConfig& c) { return c.plan.pos_dim; },
          [](ModelConfig& c, std::size_t v) { c.plan.pos_dim = v; })
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("input_dropout", &ModelConfig::input_dropout)
      .def_readwrite("classifier_hidden", &ModelConfig::classifier_hidden)
      .def_readwrite("domain_hidden", &ModelConfig::domain_hidden)
      .def_readwrite("domain_layers", &ModelConfig::domain_layers);

  py::class_<TaggerModel>(m, "TaggerModel")
      .def_static("load", [](const std::filesystem::path& dir) { return TaggerModel::load(dir); }, py::arg("dir"))
      .def("save", &TaggerModel::save, py::arg("dir"))
      .def_property_readonly("trained", &TaggerModel::trained)
      .def_property_readonly("feda", [](const TaggerModel& t) { return t.config().feda; })
      .def_property_readonly("has_domain_head", [](const TaggerModel& t) { return t.config().domain_head; })
      .def_property_readonly("parameter_count",
                             [](TaggerModel& t) { return t.parameter_count(t.params()); })
      .def(
          "predict",
          [](const TaggerModel& t, const std::vector<std::vector<std::string>>& sentences,
             const std::optional<std::vector<std::vector<std::string>>>& pos, const std::string& gate) {
            const auto seqs = sequences_from(sentences, pos);
            std::vector<std::vector<std::string>> out;
            for (const auto& tags : t.predict(std::span<const TokenSequence>(seqs), parse_gate(gate)))
              out.push_back(tag_names(tags));
            return out;
          },
          py::arg("sentences"), py::arg("pos") = py::none(), py::arg("gate") = "source");

  // ---- training
  py::class_<AdaConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &AdaConfig::lambda)
      .def_readwrite("batch_size", &AdaConfig::batch_size)
      .def_readwrite("max_epochs", &AdaConfig::max_epochs)
      .def_readwrite("finetune_epochs", &AdaConfig::finetune_epochs)
      .def_readwrite("patience", &AdaConfig::patience)
      .def_readwrite("learning_rate", &AdaConfig::learning_rate)
      .def_readwrite("max_grad_norm", &AdaConfig::max_grad_norm)
      .def_readwrite("seed", &AdaConfig::seed)
      .def_readwrite("verbose", &AdaConfig::verbose)
      .def_property(
          "routing", [](const AdaConfig& c) { return std::string(to_string(c.routing)); },
          [](AdaConfig& c, const std::string& s) { c.routing = parse_domain_routing(s); });

  m.def(
      "train_supervised",
      [](const ModelConfig& mc, std::shared_ptr<FeatureResources> res, const Corpus& source, const AdaConfig& cfg) {
        py::gil_scoped_release nogil;
        auto r = train_supervised(mc, res, source, cfg);
        py::gil_scoped_acquire gil;
        return train_result_dict(r);
      },
      py::arg("model_config"), py::arg("resources"), py::arg("source"), py::arg("config"));
  m.def(
      "train_ada",
      [](const ModelConfig& mc, std::shared_ptr<FeatureResources> res, const Corpus& source, const Corpus& target,
         const AdaConfig& cfg) {
        const auto unl = strip_tags(target.split_sentences("train"));
        const auto held = target.has_split("dev") ? strip_tags(target.split_sentences("dev")) : std::vector<TokenSequence>{};
        py::gil_scoped_release nogil;
        auto r = train_ada(mc, res, source, unl, cfg, held);
        py::gil_scoped_acquire gil;
        return train_result_dict(r);
      },
      py::arg("model_config"), py::arg("resources"), py::arg("source"), py::arg("target"), py::arg("config"),
      "Adversarial training. Only the tokens of the target train split are read; its dev split feeds the "
      "logged domain accuracy.");
  m.def(
      "train_feda",
      [](const ModelConfig& mc, std::shared_ptr<FeatureResources> res, const Corpus& source,
         const Corpus& target_labeled, const AdaConfig& cfg, const std::optional<Corpus>& target_dev) {
        const auto dev = target_dev ? target_dev->sentences : std::vector<TaggedSentence>{};
        py::gil_scoped_release nogil;
        auto r = train_feda(mc, res, source, target_labeled.sentences, cfg, dev);
        py::gil_scoped_acquire gil;
        return train_result_dict(r);
      },
      py::arg("model_config"), py::arg("resources"), py::arg("source"), py::arg("target_labeled"), py::arg("config"),
      py::arg("target_dev") = py::none());
  m.def(
      "finetune",
      [](const TaggerModel& model, const Corpus& labeled, const AdaConfig& cfg) {
        py::gil_scoped_release nogil;
        return finetune(model, labeled.sentences, cfg);
      },
      py::arg("model"), py::arg("labeled"), py::arg("config"));
  m.def(
      "finetune_curve",
      [](const TaggerModel& model, const Corpus& target, const std::vector<double>& percents,
         const std::vector<std::uint64_t>& seeds, const AdaConfig& cfg) {
        CurveReport r;
        {
          py::gil_scoped_release nogil;
          r = run_finetune_sweep(model, target, percents, seeds, cfg);
        }
        return to_py(r.to_json());
      },
      py::arg("model"), py::arg("target"), py::arg("percents"), py::arg("seeds"), py::arg("config"));
  m.def(
      "domain_accuracy",
      [](const TaggerModel& model, const Corpus& source, const Corpus& target, const std::string& split) {
        return domain_accuracy(model, strip_tags(source.split_sentences(split)),
                               strip_tags(target.split_sentences(split)));
      },
      py::arg("model"), py::arg("source"), py::arg("target"), py::arg("split") = "test");

  m.def(
      "self_train",
      [](const TaggerModel& teacher, const Corpus& target, const ModelConfig& student, const AdaConfig& cfg,
         double labeled_fraction, std::size_t iterations, std::size_t student_epochs, std::uint64_t sample_seed) {
        SelfTrainSpec spec;
        spec.student = student;
        spec.cfg = cfg;
        spec.labeled_fraction = labeled_fraction;
        spec.iterations = iterations;
        spec.student_epochs = student_epochs;
        spec.sample_seed = sample_seed;
        std::optional<SelfTrainResult> r;
        {
          py::gil_scoped_release nogil;
          r = self_train(spec, teacher, target);
        }
        py::dict d = to_py(r->to_json());
        d["teacher_model"] = r->teacher;
        d["student_model"] = r->student;
        return d;
      },
      py::arg("teacher"), py::arg("target"), py::arg("student_config"), py::arg("config"),
      py::arg("labeled_fraction") = 0.01, py::arg("iterations") = 1, py::arg("student_epochs") = 30,
      py::arg("sample_seed") = 13);

  // ---- evaluation
  m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));
  m.def("display_pct", &display_pct, py::arg("fraction"));
  m.def(
      "score",
      [](const std::vector<std::vector<std::string>>& pred, const std::vector<std::vector<std::string>>& gold) {
        TagSeqs p, g;
        for (const auto& s : pred) p.push_back(parse_tags(s));
        for (const auto& s : gold) g.push_back(parse_tags(s));
        return report_dict(score(p, g));
      },
      py::arg("pred"), py::arg("gold"));
  m.def(
      "evaluate",
      [](const TaggerModel& model, const Corpus& corpus, const std::optional<std::string>& split,
         const std::string& gate) {
        const auto sents = split ? corpus.split_sentences(*split) : corpus.sentences;
        return report_dict(evaluate(model, sents, parse_gate(gate), corpus.name + "/" + split.value_or("all")));
      },
      py::arg("model"), py::arg("corpus"), py::arg("split") = "test", py::arg("gate") = "source");

  // ---- config-driven commands
  m.def("config_schema", [] {
    py::list out;
    for (const auto& k : config_schema()) out.append(py::make_tuple(k.name, k.default_value, k.help));
    return out;
  });
  m.def(
      "run_command",
      [](const std::string& command, const std::optional<std::filesystem::path>& config,
         const std::vector<std::string>& overrides) {
        auto cfg = config ? ExperimentConfig::load(*config) : ExperimentConfig{};
        for (const auto& o : overrides) cfg.apply_override(o);
        static const std::map<std::string, std::filesystem::path (*)(const ExperimentConfig&)> commands{
            {"prepare", cmd_prepare},   {"train", cmd_train},         {"sweep", cmd_sweep}, {"finetune", cmd_finetune},
            {"selftrain", cmd_selftrain}, {"eval", cmd_eval},         {"synth", cmd_synth}};
        const auto it = commands.find(command);
        if (it == commands.end()) throw ValidationError("unknown command '" + command + "'");
        py::gil_scoped_release nogil;
        return it->second(cfg);
      },
      py::arg("command"), py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
      "Runs one CLI subcommand in-process and returns its output directory.");
}
