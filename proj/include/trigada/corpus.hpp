#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace trigada {

enum class Tag : std::uint8_t { O = 0, EVENT = 1 };
enum class Domain : std::uint8_t { SOURCE = 0, TARGET = 1 };

const char* to_string(Tag t);
Tag parse_tag(const std::string& s);

struct Token {
  std::string surface;
  std::optional<std::string> pos;
  std::map<std::string, std::string> attrs;
};

struct TaggedSentence {
  std::string doc_id;
  std::size_t sent_index = 0;
  std::vector<Token> tokens;
  std::vector<Tag> tags;

  std::size_t size() const { return tokens.size(); }
  std::size_t n_events() const;
};

// Tokens only; this is what unlabeled data looks like to the trainers.
struct TokenSequence {
  std::string doc_id;
  std::size_t sent_index = 0;
  std::vector<Token> tokens;
};

struct DomainExample {
  TokenSequence sequence;
  Domain domain = Domain::SOURCE;
};

TokenSequence strip_tags(const TaggedSentence& s);
std::vector<TokenSequence> strip_tags(const std::vector<TaggedSentence>& s);

struct Corpus {
  std::string name;
  std::vector<TaggedSentence> sentences;
  std::map<std::string, std::vector<std::string>> splits;

  /// Document ids in first-appearance order.
  std::vector<std::string> doc_ids() const;
  bool has_split(const std::string& split) const { return splits.count(split) > 0; }
  /// Sentences of the named split in corpus order; throws if the split is absent.
  std::vector<TaggedSentence> split_sentences(const std::string& split) const;
  /// Checks the Token, TaggedSentence and split invariants.
  void validate() const;
};

struct CorpusStats {
  std::size_t n_docs = 0;
  std::size_t n_tokens = 0;
  std::size_t n_events = 0;
  double density = 0.0;
};

// Which realis attributes mark an annotated event as not having happened.
// Attribute values are compared case-insensitively.
struct RealisPolicy {
  std::set<std::string> drop_tense{"FUTURE"};
  std::set<std::string> assertion_modality{"NONE", "ASSERTED", "ASSERTION"};
  std::set<std::string> drop_polarity{"NEG"};

  bool drops(const Token& t) const;
  static RealisPolicy load(const std::filesystem::path& path);
};

// TSV token format: doc_id, sent_index, token, tag, pos, attrs
Corpus read_tsv(std::istream& in, const std::string& origin);
void write_tsv(std::ostream& out, const std::vector<TaggedSentence>& sentences);

/// Loads a TSV corpus. A `corpus.meta.json` next to the file supplies the
/// name and split assignment; without it every document lands in split "all".
Corpus load_corpus(const std::filesystem::path& path);
/// Writes `corpus.tsv` and `corpus.meta.json` into `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

Corpus filter_unrealized_events(const Corpus& corpus, const RealisPolicy& policy = {});
CorpusStats compute_stats(const Corpus& corpus);
CorpusStats compute_stats(const std::vector<TaggedSentence>& sentences);

/// Document-level train/dev/test split, deterministic per seed.
Corpus split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed);

struct LabeledSample {
  Corpus labeled;
  Corpus remainder;
};

/// Sentence-level sample of `round(percent * n)` (half-up, at least one)
/// sentences from the train split (or the whole corpus when it has none).
LabeledSample sample_labeled_fraction(const Corpus& corpus, double percent, std::uint64_t seed);

/// Builds a corpus from loose sentences, with every document in `split`.
Corpus make_corpus(std::string name, std::vector<TaggedSentence> sentences,
                   const std::string& split = "train");

}  // namespace trigada
