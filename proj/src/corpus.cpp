#include "trigada/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "trigada/common.hpp"
#include "trigada/kv.hpp"

namespace trigada {

namespace {

bool is_lower_identifier(const std::string& k) {
  if (k.empty() || !(std::islower(static_cast<unsigned char>(k[0])) || k[0] == '_')) return false;
  return std::all_of(k.begin(), k.end(), [](unsigned char c) {
    return std::islower(c) || std::isdigit(c) || c == '_';
  });
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    cols.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cols;
}

std::string attrs_to_string(const std::map<std::string, std::string>& attrs) {
  if (attrs.empty()) return "_";
  std::string out;
  for (const auto& [k, v] : attrs) {
    if (!out.empty()) out += ';';
    out += k + '=' + v;
  }
  return out;
}

}  // namespace

const char* to_string(Tag t) { return t == Tag::EVENT ? "EVENT" : "O"; }

Tag parse_tag(const std::string& s) {
  if (s == "EVENT") return Tag::EVENT;
  if (s == "O") return Tag::O;
  throw ValidationError("unknown tag '" + s + "'");
}

std::size_t TaggedSentence::n_events() const {
  return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), Tag::EVENT));
}

TokenSequence strip_tags(const TaggedSentence& s) { return {s.doc_id, s.sent_index, s.tokens}; }

std::vector<TokenSequence> strip_tags(const std::vector<TaggedSentence>& s) {
  std::vector<TokenSequence> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(strip_tags(x));
  return out;
}

std::vector<std::string> Corpus::doc_ids() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : sentences)
    if (seen.insert(s.doc_id).second) out.push_back(s.doc_id);
  return out;
}

std::vector<TaggedSentence> Corpus::split_sentences(const std::string& split) const {
  const auto it = splits.find(split);
  if (it == splits.end()) throw ValidationError("corpus '" + name + "' has no '" + split + "' split");
  const std::unordered_set<std::string> docs(it->second.begin(), it->second.end());
  std::vector<TaggedSentence> out;
  for (const auto& s : sentences)
    if (docs.count(s.doc_id)) out.push_back(s);
  return out;
}

void Corpus::validate() const {
  for (const auto& s : sentences) {
    const std::string where = "sentence (" + s.doc_id + ", " + std::to_string(s.sent_index) + ")";
    if (s.tokens.empty()) throw ValidationError(where + " has no tokens");
    if (s.tokens.size() != s.tags.size()) throw ValidationError(where + " has mismatched tags");
    for (const auto& t : s.tokens) {
      if (t.surface.empty()) throw ValidationError(where + " has an empty token");
      for (const auto& [k, v] : t.attrs)
        if (!is_lower_identifier(k)) throw ValidationError(where + " has bad attr key '" + k + "'");
    }
  }
  const auto docs = doc_ids();
  const std::unordered_set<std::string> all(docs.begin(), docs.end());
  std::unordered_set<std::string> assigned;
  for (const auto& [split, ids] : splits) {
    for (const auto& id : ids) {
      if (!all.count(id)) throw ValidationError("split '" + split + "' names unknown doc '" + id + "'");
      if (!assigned.insert(id).second) throw ValidationError("doc '" + id + "' is in more than one split");
    }
  }
  if (!splits.empty() && assigned.size() != all.size())
    throw ValidationError("corpus '" + name + "': splits do not cover every document");
}

bool RealisPolicy::drops(const Token& t) const {
  if (const auto it = t.attrs.find("tense"); it != t.attrs.end() && drop_tense.count(to_upper(it->second)))
    return true;
  if (const auto it = t.attrs.find("modality");
      it != t.attrs.end() && !assertion_modality.count(to_upper(it->second)))
    return true;
  if (const auto it = t.attrs.find("polarity");
      it != t.attrs.end() && drop_polarity.count(to_upper(it->second)))
    return true;
  return false;
}

RealisPolicy RealisPolicy::load(const std::filesystem::path& path) {
  RealisPolicy p;
  auto to_set = [](const std::string& v) {
    std::set<std::string> out;
    for (const auto& x : split_list(v)) out.insert(to_upper(x));
    return out;
  };
  for (const auto& e : parse_kv_file(path)) {
    if (e.key == "drop_tense")
      p.drop_tense = to_set(e.value);
    else if (e.key == "assertion_modality")
      p.assertion_modality = to_set(e.value);
    else if (e.key == "drop_polarity")
      p.drop_polarity = to_set(e.value);
    else
      throw ParseError(path.string(), e.line, "unknown realis policy key '" + e.key + "'");
  }
  return p;
}

Corpus read_tsv(std::istream& in, const std::string& origin) {
  Corpus corpus;
  TaggedSentence current;
  auto flush = [&] {
    if (!current.tokens.empty()) corpus.sentences.push_back(std::move(current));
    current = TaggedSentence{};
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto cols = split_tabs(line);
    if (cols.size() != 6)
      throw ParseError(origin, lineno, "expected 6 tab-separated columns, found " + std::to_string(cols.size()));

    std::size_t sent_index = 0;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(cols[1], &used);
      if (used != cols[1].size() || v < 0) throw std::invalid_argument("range");
      sent_index = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ParseError(origin, lineno, "sent_index '" + cols[1] + "' is not a non-negative integer");
    }
    if (cols[2].empty()) throw ParseError(origin, lineno, "empty token");

    Tag tag;
    try {
      tag = parse_tag(cols[3]);
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }

    Token tok{cols[2], std::nullopt, {}};
    if (cols[4] != "_") tok.pos = cols[4];
    if (cols[5] != "_") {
      for (const auto& kv : split_list(cols[5], ';')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError(origin, lineno, "attr '" + kv + "' is not key=val");
        const auto key = kv.substr(0, eq);
        if (!is_lower_identifier(key))
          throw ParseError(origin, lineno, "attr key '" + key + "' is not a lowercase identifier");
        tok.attrs[key] = kv.substr(eq + 1);
      }
    }

    if (!current.tokens.empty() && (current.doc_id != cols[0] || current.sent_index != sent_index)) flush();
    if (current.tokens.empty()) {
      current.doc_id = cols[0];
      current.sent_index = sent_index;
    }
    current.tokens.push_back(std::move(tok));
    current.tags.push_back(tag);
  }
  flush();
  if (corpus.sentences.empty()) throw ValidationError(origin + ": no sentences");
  return corpus;
}

void write_tsv(std::ostream& out, const std::vector<TaggedSentence>& sentences) {
  bool first = true;
  for (const auto& s : sentences) {
    if (!first) out << '\n';
    first = false;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const auto& t = s.tokens[i];
      out << s.doc_id << '\t' << s.sent_index << '\t' << t.surface << '\t' << to_string(s.tags[i]) << '\t'
          << (t.pos ? *t.pos : "_") << '\t' << attrs_to_string(t.attrs) << '\n';
    }
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus " + path.string());
  Corpus corpus = read_tsv(in, path.string());

  const auto meta_path = path.parent_path() / "corpus.meta.json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream mf(meta_path);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(mf);
      corpus.name = meta.at("name").get<std::string>();
      corpus.splits = meta.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(meta_path.string() + ": " + e.what());
    }
  } else {
    corpus.name = path.stem().string();
    corpus.splits["all"] = corpus.doc_ids();
  }
  corpus.validate();
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "corpus.tsv", std::ios::binary);
    write_tsv(out, corpus.sentences);
  }
  nlohmann::json meta{{"name", corpus.name}, {"splits", corpus.splits}};
  std::ofstream mf(dir / "corpus.meta.json", std::ios::binary);
  mf << meta.dump(2) << '\n';
}

Corpus filter_unrealized_events(const Corpus& corpus, const RealisPolicy& policy) {
  Corpus out = corpus;
  for (auto& s : out.sentences)
    for (std::size_t i = 0; i < s.tokens.size(); ++i)
      if (s.tags[i] == Tag::EVENT && policy.drops(s.tokens[i])) s.tags[i] = Tag::O;
  return out;
}

CorpusStats compute_stats(const std::vector<TaggedSentence>& sentences) {
  CorpusStats st;
  std::unordered_set<std::string> docs;
  for (const auto& s : sentences) {
    docs.insert(s.doc_id);
    st.n_tokens += s.size();
    st.n_events += s.n_events();
  }
  if (st.n_tokens == 0) throw ValidationError("cannot compute stats of an empty corpus");
  st.n_docs = docs.size();
  st.density = static_cast<double>(st.n_events) / static_cast<double>(st.n_tokens);
  return st;
}

CorpusStats compute_stats(const Corpus& corpus) { return compute_stats(corpus.sentences); }

Corpus split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0; }))
    throw ValidationError("split fractions must be non-negative and sum to 1");
  auto docs = corpus.doc_ids();
  const std::size_t n = docs.size();
  if (n < 3) throw ValidationError("split_corpus needs at least 3 documents, got " + std::to_string(n));

  std::array<std::size_t, 3> counts{};
  counts[1] = static_cast<std::size_t>(std::floor(fractions[1] * n + 0.5));
  counts[2] = static_cast<std::size_t>(std::floor(fractions[2] * n + 0.5));
  for (int k : {1, 2})
    if (fractions[k] > 0 && counts[k] == 0) counts[k] = 1;
  if (counts[1] + counts[2] >= n) throw ValidationError("split leaves no training documents");
  counts[0] = n - counts[1] - counts[2];

  std::unordered_map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) order[docs[i]] = i;
  Rng rng(seed);
  rng.shuffle(docs);

  Corpus out = corpus;
  out.splits.clear();
  const char* names[3] = {"train", "dev", "test"};
  std::size_t at = 0;
  for (int k = 0; k < 3; ++k) {
    std::vector<std::string> part(docs.begin() + static_cast<std::ptrdiff_t>(at),
                                  docs.begin() + static_cast<std::ptrdiff_t>(at + counts[k]));
    at += counts[k];
    std::sort(part.begin(), part.end(), [&](const auto& a, const auto& b) { return order[a] < order[b]; });
    out.splits[names[k]] = std::move(part);
  }
  return out;
}

Corpus make_corpus(std::string name, std::vector<TaggedSentence> sentences, const std::string& split) {
  Corpus c;
  c.name = std::move(name);
  c.sentences = std::move(sentences);
  c.splits[split] = c.doc_ids();
  return c;
}

LabeledSample sample_labeled_fraction(const Corpus& corpus, double percent, std::uint64_t seed) {
  if (!(percent > 0.0 && percent < 1.0)) throw ValidationError("labeled fraction must lie in (0, 1)");
  const auto pool = corpus.has_split("train") ? corpus.split_sentences("train") : corpus.sentences;
  const std::size_t n = pool.size();
  if (n == 0) throw ValidationError("cannot sample from an empty split");
  std::size_t k = static_cast<std::size_t>(std::floor(percent * static_cast<double>(n) + 0.5 + 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<bool> chosen(n, false);
  for (std::size_t i = 0; i < k; ++i) chosen[idx[i]] = true;

  std::vector<TaggedSentence> lab, rest;
  for (std::size_t i = 0; i < n; ++i) (chosen[i] ? lab : rest).push_back(pool[i]);
  return {make_corpus(corpus.name + ".labeled", std::move(lab)),
          make_corpus(corpus.name + ".unlabeled", std::move(rest))};
}

}  // namespace trigada
