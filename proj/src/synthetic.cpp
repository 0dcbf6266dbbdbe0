#include "trigada/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "trigada/common.hpp"
#include "trigada/kv.hpp"

namespace trigada {

namespace {

std::string numbered(const std::string& prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, i);
  return prefix + buf;
}

struct TemplateItem {
  enum Kind { FUNCTION, EVENT_SLOT, WORD_SLOT } kind;
  std::string word;
};

std::vector<TemplateItem> parse_template(const std::string& t) {
  std::vector<TemplateItem> items;
  std::string tok;
  std::istringstream is(t);
  while (is >> tok) {
    if (tok == "{E}")
      items.push_back({TemplateItem::EVENT_SLOT, {}});
    else if (tok == "{W}")
      items.push_back({TemplateItem::WORD_SLOT, {}});
    else
      items.push_back({TemplateItem::FUNCTION, tok});
  }
  return items;
}

std::vector<double> random_direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::size_t parse_count(const KvEntry& e, const std::string& origin) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(e.value, &used);
    if (used != e.value.size() || v < 0) throw std::invalid_argument("neg");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError(origin, e.line, "'" + e.key + "' expects a non-negative integer");
  }
}

double parse_real(const KvEntry& e, const std::string& origin) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(origin, e.line, "'" + e.key + "' expects a number");
  }
}

}  // namespace

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) {
  SyntheticSpec s;
  const auto origin = path.string();
  for (const auto& e : parse_kv_file(path)) {
    const auto& k = e.key;
    if (k == "templates") s.n_templates = parse_count(e, origin);
    else if (k == "content_words") s.content_words = parse_count(e, origin);
    else if (k == "trigger_fraction") s.trigger_fraction = parse_real(e, origin);
    else if (k == "function_words") s.function_words = parse_count(e, origin);
    else if (k == "source_name") s.names[0] = e.value;
    else if (k == "target_name") s.names[1] = e.value;
    else if (k == "source_density") s.density[0] = parse_real(e, origin);
    else if (k == "target_density") s.density[1] = parse_real(e, origin);
    else if (k == "source_sentences") s.sentences[0] = parse_count(e, origin);
    else if (k == "target_sentences") s.sentences[1] = parse_count(e, origin);
    else if (k == "sentences_per_doc") s.sentences_per_doc = parse_count(e, origin);
    else if (k == "template") s.templates.push_back(e.value);
    else if (k == "function_vocab") s.function_vocab = split_list(e.value);
    else if (k == "source_vocab") s.content_vocab[0] = split_list(e.value);
    else if (k == "target_vocab") s.content_vocab[1] = split_list(e.value);
    else if (k == "embedding_dim") s.embedding_dim = parse_count(e, origin);
    else if (k == "shared_event_scale") s.shared_event_scale = parse_real(e, origin);
    else if (k == "domain_event_scale") s.domain_event_scale = parse_real(e, origin);
    else if (k == "domain_offset_scale") s.domain_offset_scale = parse_real(e, origin);
    else if (k == "noise_scale") s.noise_scale = parse_real(e, origin);
    else if (k == "target_event_shift") s.target_event_shift = parse_real(e, origin);
    else throw ParseError(origin, e.line, "unknown synthetic spec key '" + k + "'");
  }
  s.validate();
  return s;
}

void SyntheticSpec::validate() const {
  if (templates.empty() && n_templates == 0) throw ValidationError("synthetic spec needs at least one template");
  if (trigger_fraction <= 0.0 || trigger_fraction >= 1.0)
    throw ValidationError("trigger_fraction must lie in (0, 1)");
  if (sentences_per_doc == 0) throw ValidationError("sentences_per_doc must be positive");
  for (int d = 0; d < 2; ++d) {
    if (density[d] <= 0.0 || density[d] >= 1.0) throw ValidationError("densities must lie in (0, 1)");
    if (content_vocab[d].empty() && content_words < 2)
      throw ValidationError("each domain needs at least two content words");
  }
  if (names[0] == names[1]) throw ValidationError("domain names must differ");
  if (embedding_dim == 0) throw ValidationError("embedding_dim must be positive");
  for (double v : {shared_event_scale, domain_event_scale, domain_offset_scale, noise_scale})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("embedding scales must be finite and >= 0");
  if (!std::isfinite(target_event_shift)) throw ValidationError("target_event_shift must be finite");

  std::set<std::string> seen;
  auto claim = [&](const std::string& w, const char* what) {
    if (!seen.insert(w).second)
      throw ValidationError(std::string("vocabulary overlap: '") + w + "' appears again in " + what);
  };
  for (const auto& w : function_vocab) claim(w, "function vocabulary");
  for (const auto& t : templates)
    for (const auto& it : parse_template(t))
      if (it.kind == TemplateItem::FUNCTION && !std::count(function_vocab.begin(), function_vocab.end(), it.word))
        seen.insert(it.word);
  for (const auto& w : content_vocab[0]) claim(w, "source content vocabulary");
  for (const auto& w : content_vocab[1]) claim(w, "target content vocabulary");
}

SyntheticPair make_synthetic_pair(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticPair out;

  std::vector<std::string> function_vocab = spec.function_vocab;
  if (function_vocab.empty())
    for (std::size_t i = 0; i < spec.function_words; ++i) function_vocab.push_back(numbered("f", i, 3));

  std::array<std::vector<std::string>, 2> content = spec.content_vocab;
  for (int d = 0; d < 2; ++d)
    if (content[d].empty())
      for (std::size_t i = 0; i < spec.content_words; ++i) content[d].push_back(numbered(spec.names[d] + "_w", i, 3));

  std::array<std::size_t, 2> n_triggers{};
  for (int d = 0; d < 2; ++d) {
    n_triggers[d] = static_cast<std::size_t>(std::floor(spec.trigger_fraction * content[d].size() + 0.5));
    n_triggers[d] = std::clamp<std::size_t>(n_triggers[d], 1, content[d].size() - 1);
  }

  out.templates = spec.templates;
  if (out.templates.empty()) {
    if (function_vocab.empty()) throw ValidationError("generated templates need function words");
    Rng rng(derive_seed(seed, "synthetic.templates"));
    for (std::size_t i = 0; i < spec.n_templates; ++i) {
      const std::size_t len = 6 + rng.below(9);
      std::vector<std::string> items(len);
      for (auto& it : items) it = function_vocab[rng.below(function_vocab.size())];
      const std::size_t n_event = 1 + rng.below(2);
      const std::size_t n_word = 1 + rng.below(3);
      std::vector<std::size_t> pos(len);
      std::iota(pos.begin(), pos.end(), 0);
      rng.shuffle(pos);
      for (std::size_t k = 0; k < n_event; ++k) items[pos[k]] = "{E}";
      for (std::size_t k = n_event; k < n_event + n_word; ++k) items[pos[k]] = "{W}";
      std::string t;
      for (const auto& it : items) t += (t.empty() ? "" : " ") + it;
      out.templates.push_back(t);
    }
  }

  std::vector<std::vector<TemplateItem>> parsed;
  double mean_len = 0, mean_slots = 0;
  for (const auto& t : out.templates) {
    parsed.push_back(parse_template(t));
    if (parsed.back().empty()) throw ValidationError("empty template");
    mean_len += static_cast<double>(parsed.back().size());
    for (const auto& it : parsed.back()) mean_slots += it.kind == TemplateItem::EVENT_SLOT;
  }
  mean_len /= static_cast<double>(parsed.size());
  mean_slots /= static_cast<double>(parsed.size());
  if (mean_slots == 0) throw ValidationError("templates contain no {E} slots");

  // Fixed POS per word: triggers lean VB, plain content words lean NN.
  Rng pos_rng(derive_seed(seed, "synthetic.pos"));
  std::array<std::vector<std::string>, 2> pos_of;
  for (int d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < content[d].size(); ++i) {
      const bool trig = i < n_triggers[d];
      pos_of[d].push_back(pos_rng.bernoulli(0.7) == trig ? "VB" : "NN");
    }

  for (int d = 0; d < 2; ++d) {
    const double fill = spec.density[d] * mean_len / mean_slots;
    if (fill > 1.0)
      throw ValidationError("density " + std::to_string(spec.density[d]) + " is unreachable with these templates");
    Rng rng(derive_seed(seed, d == 0 ? "synthetic.source" : "synthetic.target"));
    const auto& words = content[d];
    const std::size_t nt = n_triggers[d];
    std::vector<TaggedSentence> sents;
    for (std::size_t j = 0; j < spec.sentences[d]; ++j) {
      TaggedSentence s;
      s.doc_id = numbered(spec.names[d] + "_d", j / spec.sentences_per_doc, 4);
      s.sent_index = j % spec.sentences_per_doc;
      for (const auto& it : parsed[rng.below(parsed.size())]) {
        std::size_t w = 0;
        bool trigger = false;
        switch (it.kind) {
          case TemplateItem::FUNCTION:
            s.tokens.push_back({it.word, std::string("FW"), {}});
            s.tags.push_back(Tag::O);
            continue;
          case TemplateItem::EVENT_SLOT:
            trigger = rng.bernoulli(fill);
            w = trigger ? rng.below(nt) : nt + rng.below(words.size() - nt);
            break;
          case TemplateItem::WORD_SLOT:
            w = nt + rng.below(words.size() - nt);
            break;
        }
        s.tokens.push_back({words[w], pos_of[d][w], {}});
        s.tags.push_back(trigger ? Tag::EVENT : Tag::O);
      }
      sents.push_back(std::move(s));
    }
    (d == 0 ? out.source : out.target) = make_corpus(spec.names[d], std::move(sents), "all");
  }

  Rng erng(derive_seed(seed, "synthetic.embeddings"));
  const std::size_t dim = spec.embedding_dim;
  const auto shared_event = random_direction(erng, dim);
  std::array<std::vector<double>, 2> domain_event{random_direction(erng, dim), random_direction(erng, dim)};
  std::array<std::vector<double>, 2> domain_offset{random_direction(erng, dim), random_direction(erng, dim)};
  auto noise_vec = [&] {
    std::vector<double> v(dim);
    for (auto& x : v) x = spec.noise_scale * erng.normal();
    return v;
  };
  for (const auto& w : function_vocab) out.embeddings.push_back({w, noise_vec()});
  for (const auto& t : out.templates)
    for (const auto& it : parse_template(t))
      if (it.kind == TemplateItem::FUNCTION &&
          std::none_of(out.embeddings.begin(), out.embeddings.end(), [&](const auto& e) { return e.word == it.word; }))
        out.embeddings.push_back({it.word, noise_vec()});
  for (int d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < content[d].size(); ++i) {
      auto v = noise_vec();
      for (std::size_t k = 0; k < dim; ++k) {
        v[k] += spec.domain_offset_scale * domain_offset[d][k];
        if (i < n_triggers[d])
          v[k] += spec.shared_event_scale * shared_event[k] + spec.domain_event_scale * domain_event[d][k];
        // Every target content word sits further along the event direction.
        if (d == 1) v[k] += spec.target_event_shift * shared_event[k];
      }
      out.embeddings.push_back({content[d][i], std::move(v)});
    }
  return out;
}

void write_word2vec(const std::filesystem::path& path, const std::vector<WordVector>& vectors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  const std::size_t dim = vectors.empty() ? 0 : vectors.front().values.size();
  out << vectors.size() << ' ' << dim << '\n';
  char buf[32];
  for (const auto& wv : vectors) {
    out << wv.word;
    for (double x : wv.values) {
      std::snprintf(buf, sizeof buf, " %.6f", x);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace trigada
