#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trigada/corpus.hpp"

namespace trigada {

// Declarative description of a two-domain synthetic tagging problem. Each
// domain owns a disjoint content vocabulary (split into trigger and plain
// words); both domains share function words and sentence templates. A template
// is a space-separated list of function words and slots: `{E}` may hold a
// trigger, `{W}` always holds a plain content word.
//
// The matching word vectors place every trigger on a shared "event" direction
// plus a domain-specific one, and every content word on a domain offset, so
// a tagger trained on one domain can lean on features that do not transfer.
// Target content words are also shifted along the shared event direction, so a
// tagger calibrated on the source over-fires on the target.
struct SyntheticSpec {
  std::size_t n_templates = 50;
  std::size_t content_words = 200;
  double trigger_fraction = 0.4;
  std::size_t function_words = 60;
  std::array<std::string, 2> names{"source", "target"};
  std::array<double, 2> density{0.05, 0.10};
  std::array<std::size_t, 2> sentences{500, 500};
  std::size_t sentences_per_doc = 10;

  std::vector<std::string> templates;
  std::vector<std::string> function_vocab;
  std::array<std::vector<std::string>, 2> content_vocab;

  std::size_t embedding_dim = 50;
  double shared_event_scale = 1.5;
  double domain_event_scale = 0.0;
  double domain_offset_scale = 1.0;
  double noise_scale = 0.2;
  double target_event_shift = 1.2;

  static SyntheticSpec load(const std::filesystem::path& path);
  void validate() const;
};

struct WordVector {
  std::string word;
  std::vector<double> values;
};

struct SyntheticPair {
  Corpus source;
  Corpus target;
  /// Function words, then source then target content words.
  std::vector<WordVector> embeddings;
  std::vector<std::string> templates;
};

SyntheticPair make_synthetic_pair(const SyntheticSpec& spec, std::uint64_t seed);

/// word2vec text format: header `n d`, then `word v1 ... vd`.
void write_word2vec(const std::filesystem::path& path, const std::vector<WordVector>& vectors);

}  // namespace trigada
