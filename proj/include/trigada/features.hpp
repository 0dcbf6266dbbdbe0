#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trigada/corpus.hpp"
#include "trigada/synthetic.hpp"

namespace trigada {

using Mat = Eigen::MatrixXd;

class Vocab {
 public:
  static constexpr int PAD = 0;
  static constexpr int UNK = 1;

  Vocab() : Vocab(false) {}
  explicit Vocab(bool lowercase);

  int add(const std::string& word);
  int lookup(const std::string& surface) const;
  const std::string& word(int index) const { return words_.at(static_cast<std::size_t>(index)); }
  std::size_t size() const { return words_.size(); }
  bool lowercase() const { return lowercase_; }
  const std::vector<std::string>& words() const { return words_; }
  std::string normalize(const std::string& surface) const;
  /// Digest over the ordered word list and the case-folding flag.
  std::string digest() const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const {
    return lowercase_ == other.lowercase_ && words_ == other.words_;
  }

 private:
  bool lowercase_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Union vocabulary, ordered by descending frequency then lexicographically.
Vocab build_vocab(const Corpus& source, const Corpus& target, std::size_t min_count, bool lowercase = false);
Vocab build_vocab(std::span<const Corpus* const> corpora, std::size_t min_count, bool lowercase = false);
/// POS-tag inventory of the given corpora (never case-folded, min count 1).
Vocab build_pos_vocab(std::span<const Corpus* const> corpora);

struct EmbeddingTable {
  Mat rows;  // |V| x dim
  bool trainable = false;

  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
};

inline constexpr double kOovInitBound = 0.05;

/// word2vec text file. Rows for words missing from the file are drawn from
/// uniform(-0.05, 0.05); the PAD row is zero. `expected_dim` of 0 skips the check.
EmbeddingTable load_pretrained_embeddings(const std::filesystem::path& path, const Vocab& vocab,
                                          std::size_t expected_dim, std::uint64_t seed);
EmbeddingTable embeddings_from_vectors(const std::vector<WordVector>& vectors, const Vocab& vocab,
                                       std::size_t expected_dim, std::uint64_t seed);
EmbeddingTable random_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed, bool trainable);

enum class FeatureKind { STATIC, STATIC_POS, CONTEXTUAL };

const char* to_string(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& s);

struct FeaturePlan {
  FeatureKind kind = FeatureKind::STATIC;
  std::size_t word_dim = 100;
  std::size_t pos_dim = 50;
  std::size_t contextual_dim = 3072;

  std::size_t input_dim() const;
};

enum class SubtokenRule { FIRST_SUBTOKEN, MEAN_SUBTOKENS };

SubtokenRule parse_subtoken_rule(const std::string& s);

// Token-level contextual vectors keyed by (doc_id, sent_index).
class ContextualFeatureStore {
 public:
  explicit ContextualFeatureStore(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  void insert(const std::string& doc_id, std::size_t sent_index, Mat token_rows);
  /// nullptr when absent.
  const Mat* find(const std::string& doc_id, std::size_t sent_index) const;

 private:
  std::size_t dim_;
  std::map<std::pair<std::string, std::size_t>, Mat> rows_;
};

/// Collapses subtoken rows into one row per token.
Mat collapse_subtokens(const Mat& subtoken_rows, const std::vector<int>& alignment, std::size_t n_tokens,
                       SubtokenRule rule);

/// Reads the offline extraction artifact: `<dir>/index.json` plus the
/// float32 row-major array files it references.
ContextualFeatureStore import_contextual_features(const std::filesystem::path& dir, const Corpus& corpus,
                                                  SubtokenRule rule = SubtokenRule::MEAN_SUBTOKENS);

struct SubtokenMatrix {
  std::string doc_id;
  std::size_t sent_index = 0;
  Mat rows;                 // n_subtokens x dim
  std::vector<int> alignment;  // token index per subtoken, -1 for special pieces
};

/// Writes the same artifact layout, one array file per document.
void write_contextual_features(const std::filesystem::path& dir, const std::vector<SubtokenMatrix>& items);

// Padded, time-aligned view of a batch of sentences. Rows are sentences,
// columns are positions; padding carries PAD ids, mask 0 and tag -1.
struct Batch {
  std::size_t max_len = 0;
  std::vector<std::size_t> lengths;
  std::vector<std::vector<int>> word_ids;
  std::vector<std::vector<int>> pos_ids;
  std::vector<Mat> contextual;  // per sentence, n_tokens x dim
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<std::vector<int>> tags;
  std::vector<double> weights;   // per-sentence loss weight
  std::vector<Domain> domains;   // domain label per sentence

  std::size_t size() const { return lengths.size(); }
};

struct FeatureContext {
  const Vocab* vocab = nullptr;
  const Vocab* pos_vocab = nullptr;
  FeaturePlan plan;
  const ContextualFeatureStore* store = nullptr;
};

Batch encode_batch(std::span<const TaggedSentence> sentences, const FeatureContext& ctx);
Batch encode_batch(std::span<const TokenSequence> sequences, const FeatureContext& ctx);
Batch encode_batch(std::span<const TaggedSentence* const> sentences, const FeatureContext& ctx);
Batch encode_batch(std::span<const TokenSequence* const> sequences, const FeatureContext& ctx);

}  // namespace trigada
