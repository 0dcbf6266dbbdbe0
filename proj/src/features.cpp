#include "trigada/features.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trigada/common.hpp"
#include "trigada/kv.hpp"

namespace trigada {

static_assert(std::endian::native == std::endian::little, "feature and checkpoint files assume little-endian hosts");

Vocab::Vocab(bool lowercase) : lowercase_(lowercase) {
  add("<pad>");
  add("<unk>");
}

std::string Vocab::normalize(const std::string& surface) const { return lowercase_ ? to_lower(surface) : surface; }

int Vocab::add(const std::string& word) {
  const auto [it, fresh] = index_.emplace(word, static_cast<int>(words_.size()));
  if (fresh) words_.push_back(word);
  return it->second;
}

int Vocab::lookup(const std::string& surface) const {
  const auto it = index_.find(normalize(surface));
  return it == index_.end() ? UNK : it->second;
}

std::string Vocab::digest() const {
  std::uint64_t h = fnv1a(lowercase_ ? "lc:1" : "lc:0");
  for (const auto& w : words_) h = fnv1a(w + '\n', h);
  return hex64(h);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  out << "#lowercase=" << (lowercase_ ? 1 : 0) << '\n';
  for (std::size_t i = 2; i < words_.size(); ++i) out << words_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocab " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "#lowercase=0" && line != "#lowercase=1") throw ParseError(path.string(), 1, "bad vocab header");
  Vocab v(line.back() == '1');
  while (std::getline(in, line))
    if (!line.empty()) v.add(line);
  return v;
}

namespace {

Vocab vocab_from_counts(const std::map<std::string, std::size_t>& counts, std::size_t min_count, bool lowercase) {
  std::vector<std::pair<std::string, std::size_t>> items;
  for (const auto& [w, c] : counts)
    if (c >= min_count) items.emplace_back(w, c);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v(lowercase);
  for (const auto& [w, c] : items) v.add(w);
  return v;
}

template <typename Seq>
const std::vector<Token>& tokens_of(const Seq& s) {
  return s.tokens;
}

template <typename Seq>
Batch encode_impl(std::span<const Seq* const> items, const FeatureContext& ctx) {
  if (items.empty()) throw ValidationError("cannot encode an empty batch");
  if (ctx.vocab == nullptr) throw ValidationError("encode_batch needs a vocabulary");
  const bool contextual = ctx.plan.kind == FeatureKind::CONTEXTUAL;
  const bool with_pos = ctx.plan.kind == FeatureKind::STATIC_POS;
  if (contextual && ctx.store == nullptr) throw ValidationError("contextual plan needs a feature store");
  if (with_pos && ctx.pos_vocab == nullptr) throw ValidationError("POS plan needs a POS vocabulary");

  Batch b;
  for (const auto* s : items) b.max_len = std::max(b.max_len, tokens_of(*s).size());
  for (const auto* s : items) {
    const auto& toks = tokens_of(*s);
    if (toks.empty()) throw ValidationError("cannot encode an empty sentence");
    b.lengths.push_back(toks.size());
    std::vector<int> ids(b.max_len, Vocab::PAD), pos(b.max_len, Vocab::PAD), tags(b.max_len, -1);
    std::vector<std::uint8_t> mask(b.max_len, 0);
    for (std::size_t t = 0; t < toks.size(); ++t) {
      ids[t] = ctx.vocab->lookup(toks[t].surface);
      if (with_pos) pos[t] = toks[t].pos ? ctx.pos_vocab->lookup(*toks[t].pos) : Vocab::UNK;
      mask[t] = 1;
    }
    if constexpr (std::is_same_v<Seq, TaggedSentence>) {
      for (std::size_t t = 0; t < toks.size(); ++t) tags[t] = static_cast<int>(s->tags[t]);
    }
    if (contextual) {
      const Mat* rows = ctx.store->find(s->doc_id, s->sent_index);
      if (rows == nullptr)
        throw ValidationError("no contextual features for (" + s->doc_id + ", " + std::to_string(s->sent_index) + ")");
      if (static_cast<std::size_t>(rows->rows()) != toks.size())
        throw ValidationError("contextual features for (" + s->doc_id + ", " + std::to_string(s->sent_index) +
                              ") have the wrong row count");
      b.contextual.push_back(*rows);
    }
    b.word_ids.push_back(std::move(ids));
    b.pos_ids.push_back(std::move(pos));
    b.mask.push_back(std::move(mask));
    b.tags.push_back(std::move(tags));
    b.weights.push_back(1.0);
    b.domains.push_back(Domain::SOURCE);
  }
  return b;
}

template <typename Seq>
std::vector<const Seq*> pointers(std::span<const Seq> items) {
  std::vector<const Seq*> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(&s);
  return out;
}

}  // namespace

Vocab build_vocab(std::span<const Corpus* const> corpora, std::size_t min_count, bool lowercase) {
  std::map<std::string, std::size_t> counts;
  const Vocab norm(lowercase);
  for (const auto* c : corpora) {
    if (c->sentences.empty()) throw ValidationError("build_vocab: corpus '" + c->name + "' is empty");
    for (const auto& s : c->sentences)
      for (const auto& t : s.tokens) ++counts[norm.normalize(t.surface)];
  }
  return vocab_from_counts(counts, std::max<std::size_t>(min_count, 1), lowercase);
}

Vocab build_vocab(const Corpus& source, const Corpus& target, std::size_t min_count, bool lowercase) {
  const Corpus* both[] = {&source, &target};
  return build_vocab(both, min_count, lowercase);
}

Vocab build_pos_vocab(std::span<const Corpus* const> corpora) {
  std::map<std::string, std::size_t> counts;
  for (const auto* c : corpora)
    for (const auto& s : c->sentences)
      for (const auto& t : s.tokens)
        if (t.pos) ++counts[*t.pos];
  return vocab_from_counts(counts, 1, false);
}

EmbeddingTable random_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed, bool trainable) {
  EmbeddingTable t;
  t.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < t.rows.rows(); ++i)
    for (Eigen::Index j = 0; j < t.rows.cols(); ++j) t.rows(i, j) = rng.uniform(-kOovInitBound, kOovInitBound);
  if (rows > 0) t.rows.row(Vocab::PAD).setZero();
  t.trainable = trainable;
  return t;
}

EmbeddingTable embeddings_from_vectors(const std::vector<WordVector>& vectors, const Vocab& vocab,
                                       std::size_t expected_dim, std::uint64_t seed) {
  const std::size_t dim = vectors.empty() ? expected_dim : vectors.front().values.size();
  if (expected_dim != 0 && dim != expected_dim)
    throw ValidationError("embedding dimension " + std::to_string(dim) + " does not match plan word_dim " +
                          std::to_string(expected_dim));
  EmbeddingTable t = random_embeddings(vocab.size(), dim, seed, false);
  for (const auto& wv : vectors) {
    if (wv.values.size() != dim) throw ValidationError("ragged embedding row for '" + wv.word + "'");
    const int idx = vocab.lookup(wv.word);
    if (idx <= Vocab::UNK) continue;
    for (std::size_t j = 0; j < dim; ++j) t.rows(idx, static_cast<Eigen::Index>(j)) = wv.values[j];
  }
  t.rows.row(Vocab::PAD).setZero();
  return t;
}

EmbeddingTable load_pretrained_embeddings(const std::filesystem::path& path, const Vocab& vocab,
                                          std::size_t expected_dim, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open embeddings " + path.string());
  std::string line;
  std::size_t n = 0, dim = 0;
  if (!std::getline(in, line) || !(std::istringstream(line) >> n >> dim) || dim == 0)
    throw ParseError(path.string(), 1, "expected word2vec header `count dim`");
  if (expected_dim != 0 && dim != expected_dim)
    throw ValidationError(path.string() + ": embedding dimension " + std::to_string(dim) +
                          " does not match plan word_dim " + std::to_string(expected_dim));

  std::vector<WordVector> vectors;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream is(line);
    WordVector wv;
    is >> wv.word;
    double x;
    while (is >> x) wv.values.push_back(x);
    if (wv.values.size() != dim)
      throw ParseError(path.string(), lineno, "expected " + std::to_string(dim) + " values");
    // Only keep rows we need; full GloVe files are large.
    if (vocab.lookup(wv.word) > Vocab::UNK) vectors.push_back(std::move(wv));
  }
  (void)n;
  return embeddings_from_vectors(vectors, vocab, dim, seed);
}

const char* to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::STATIC: return "static";
    case FeatureKind::STATIC_POS: return "static_pos";
    case FeatureKind::CONTEXTUAL: return "contextual";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "static") return FeatureKind::STATIC;
  if (v == "static_pos") return FeatureKind::STATIC_POS;
  if (v == "contextual") return FeatureKind::CONTEXTUAL;
  throw ConfigError("unknown feature kind '" + s + "'");
}

std::size_t FeaturePlan::input_dim() const {
  switch (kind) {
    case FeatureKind::STATIC: return word_dim;
    case FeatureKind::STATIC_POS: return word_dim + pos_dim;
    case FeatureKind::CONTEXTUAL: return contextual_dim;
  }
  return 0;
}

SubtokenRule parse_subtoken_rule(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "first_subtoken" || v == "first") return SubtokenRule::FIRST_SUBTOKEN;
  if (v == "mean_subtokens" || v == "mean") return SubtokenRule::MEAN_SUBTOKENS;
  throw ConfigError("unknown subtoken alignment rule '" + s + "'");
}

void ContextualFeatureStore::insert(const std::string& doc_id, std::size_t sent_index, Mat token_rows) {
  if (static_cast<std::size_t>(token_rows.cols()) != dim_)
    throw ValidationError("contextual rows have dim " + std::to_string(token_rows.cols()) + ", store expects " +
                          std::to_string(dim_));
  rows_[{doc_id, sent_index}] = std::move(token_rows);
}

const Mat* ContextualFeatureStore::find(const std::string& doc_id, std::size_t sent_index) const {
  const auto it = rows_.find({doc_id, sent_index});
  return it == rows_.end() ? nullptr : &it->second;
}

Mat collapse_subtokens(const Mat& subtoken_rows, const std::vector<int>& alignment, std::size_t n_tokens,
                       SubtokenRule rule) {
  if (alignment.size() != static_cast<std::size_t>(subtoken_rows.rows()))
    throw ValidationError("alignment has " + std::to_string(alignment.size()) + " entries for " +
                          std::to_string(subtoken_rows.rows()) + " subtokens");
  Mat out = Mat::Zero(static_cast<Eigen::Index>(n_tokens), subtoken_rows.cols());
  std::vector<std::size_t> count(n_tokens, 0);
  for (std::size_t k = 0; k < alignment.size(); ++k) {
    const int tok = alignment[k];
    if (tok < 0) continue;
    if (static_cast<std::size_t>(tok) >= n_tokens)
      throw ValidationError("alignment points at token " + std::to_string(tok) + " of a " +
                            std::to_string(n_tokens) + "-token sentence");
    auto& c = count[static_cast<std::size_t>(tok)];
    if (rule == SubtokenRule::FIRST_SUBTOKEN && c > 0) continue;
    out.row(tok) += subtoken_rows.row(static_cast<Eigen::Index>(k));
    ++c;
  }
  for (std::size_t t = 0; t < n_tokens; ++t) {
    if (count[t] == 0) throw ValidationError("token " + std::to_string(t) + " has no subtokens");
    if (rule == SubtokenRule::MEAN_SUBTOKENS) out.row(static_cast<Eigen::Index>(t)) /= static_cast<double>(count[t]);
  }
  return out;
}

ContextualFeatureStore import_contextual_features(const std::filesystem::path& dir, const Corpus& corpus,
                                                  SubtokenRule rule) {
  const auto index_path = dir / "index.json";
  std::ifstream in(index_path);
  if (!in) throw ValidationError("cannot open " + index_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(index_path.string() + ": " + e.what());
  }

  std::map<std::pair<std::string, std::size_t>, std::size_t> lengths;
  for (const auto& s : corpus.sentences) lengths[{s.doc_id, s.sent_index}] = s.size();

  const auto dim = index.at("dim").get<std::size_t>();
  ContextualFeatureStore store(dim);
  std::map<std::string, std::ifstream> files;
  for (const auto& e : index.at("entries")) {
    const auto doc = e.at("doc_id").get<std::string>();
    const auto sent = e.at("sent_index").get<std::size_t>();
    const auto it = lengths.find({doc, sent});
    if (it == lengths.end()) continue;
    const auto n_sub = e.at("n_subtokens").get<std::size_t>();
    const auto alignment = e.at("alignment").get<std::vector<int>>();
    const std::string key = "(" + doc + ", " + std::to_string(sent) + ")";
    if (alignment.size() != n_sub)
      throw ValidationError(key + ": alignment length " + std::to_string(alignment.size()) +
                            " != n_subtokens " + std::to_string(n_sub));

    const auto file = e.at("file").get<std::string>();
    auto& f = files[file];
    if (!f.is_open()) {
      f.open(dir / file, std::ios::binary);
      if (!f) throw ValidationError("cannot open feature array " + (dir / file).string());
    }
    std::vector<float> buf(n_sub * dim);
    f.seekg(static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw ValidationError(key + ": feature array " + file + " is truncated");

    Mat sub(static_cast<Eigen::Index>(n_sub), static_cast<Eigen::Index>(dim));
    for (std::size_t r = 0; r < n_sub; ++r)
      for (std::size_t c = 0; c < dim; ++c)
        sub(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buf[r * dim + c];
    try {
      store.insert(doc, sent, collapse_subtokens(sub, alignment, it->second, rule));
    } catch (const ValidationError& err) {
      throw ValidationError(key + ": " + err.what());
    }
  }
  return store;
}

void write_contextual_features(const std::filesystem::path& dir, const std::vector<SubtokenMatrix>& items) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  std::map<std::string, std::uint64_t> offsets;
  std::size_t dim = items.empty() ? 0 : static_cast<std::size_t>(items.front().rows.cols());
  for (const auto& it : items) {
    std::string file;
    for (char c : it.doc_id) file += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    file += ".bin";
    const bool fresh = !offsets.count(file);
    std::ofstream out(dir / file, std::ios::binary | (fresh ? std::ios::trunc : std::ios::app));
    auto& off = offsets[file];
    std::vector<float> buf;
    for (Eigen::Index r = 0; r < it.rows.rows(); ++r)
      for (Eigen::Index c = 0; c < it.rows.cols(); ++c) buf.push_back(static_cast<float>(it.rows(r, c)));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    entries.push_back({{"doc_id", it.doc_id},
                       {"sent_index", it.sent_index},
                       {"file", file},
                       {"offset", off},
                       {"n_subtokens", it.rows.rows()},
                       {"alignment", it.alignment}});
    off += buf.size() * sizeof(float);
  }
  std::ofstream idx(dir / "index.json", std::ios::binary);
  idx << nlohmann::json{{"dim", dim}, {"entries", entries}}.dump(1) << '\n';
}

Batch encode_batch(std::span<const TaggedSentence* const> sentences, const FeatureContext& ctx) {
  return encode_impl<TaggedSentence>(sentences, ctx);
}

Batch encode_batch(std::span<const TokenSequence* const> sequences, const FeatureContext& ctx) {
  return encode_impl<TokenSequence>(sequences, ctx);
}

Batch encode_batch(std::span<const TaggedSentence> sentences, const FeatureContext& ctx) {
  const auto p = pointers(sentences);
  return encode_impl<TaggedSentence>(std::span<const TaggedSentence* const>(p), ctx);
}

Batch encode_batch(std::span<const TokenSequence> sequences, const FeatureContext& ctx) {
  const auto p = pointers(sequences);
  return encode_impl<TokenSequence>(std::span<const TokenSequence* const>(p), ctx);
}

}  // namespace trigada
