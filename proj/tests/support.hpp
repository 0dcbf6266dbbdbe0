#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "trigada/corpus.hpp"
#include "trigada/features.hpp"
#include "trigada/model.hpp"
#include "trigada/synthetic.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(TRIGADA_FIXTURES) / name; }

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("trigada-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

inline trigada::TaggedSentence sentence(const std::string& doc, std::size_t idx, const std::vector<std::string>& words,
                                        const std::vector<int>& events = {}) {
  trigada::TaggedSentence s;
  s.doc_id = doc;
  s.sent_index = idx;
  for (const auto& w : words) s.tokens.push_back({w, std::nullopt, {}});
  s.tags.assign(words.size(), trigada::Tag::O);
  for (int e : events) s.tags[static_cast<std::size_t>(e)] = trigada::Tag::EVENT;
  return s;
}

// Small split synthetic pair with matching resources.
struct Toy {
  trigada::Corpus source;
  trigada::Corpus target;
  std::shared_ptr<trigada::FeatureResources> res;
  trigada::ModelConfig mcfg;
};

inline Toy make_toy(std::uint64_t seed = 5, std::size_t sentences = 60, std::size_t hidden = 6) {
  trigada::SyntheticSpec spec;
  spec.n_templates = 12;
  spec.content_words = 24;
  spec.function_words = 12;
  spec.sentences = {sentences, sentences};
  spec.sentences_per_doc = 4;
  spec.embedding_dim = 8;
  const auto pair = trigada::make_synthetic_pair(spec, seed);

  Toy t;
  t.source = trigada::split_corpus(pair.source, {0.6, 0.2, 0.2}, seed + 1);
  t.target = trigada::split_corpus(pair.target, {0.6, 0.2, 0.2}, seed + 2);
  t.res = std::make_shared<trigada::FeatureResources>();
  t.res->vocab = trigada::build_vocab(t.source, t.target, 1);
  const trigada::Corpus* both[] = {&t.source, &t.target};
  t.res->pos_vocab = trigada::build_pos_vocab(both);
  t.res->words = trigada::embeddings_from_vectors(pair.embeddings, t.res->vocab, spec.embedding_dim, seed);

  t.mcfg.plan.word_dim = spec.embedding_dim;
  t.mcfg.plan.pos_dim = 4;
  t.mcfg.hidden = hidden;
  t.mcfg.classifier_hidden = hidden;
  // Narrower three-layer domain heads can start with a fully dead ReLU layer.
  t.mcfg.domain_hidden = 16;
  return t;
}

}  // namespace testing
