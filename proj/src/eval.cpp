#include "trigada/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace trigada {

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

EvalReport EvalReport::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  EvalReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

EvalReport& EvalReport::operator+=(const EvalReport& other) {
  auto merged = from_counts(tp + other.tp, fp + other.fp, fn + other.fn);
  merged.dataset = dataset;
  merged.model_id = model_id;
  return *this = merged;
}

std::string display_pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * fraction);
  return buf;
}

EvalReport score(const TagSeqs& pred, const TagSeqs& gold, const MaskSeqs* masks) {
  if (pred.size() != gold.size())
    throw ValidationError("score: " + std::to_string(pred.size()) + " predicted vs " + std::to_string(gold.size()) +
                          " gold sequences");
  if (masks && masks->size() != gold.size()) throw ValidationError("score: mask count differs from gold");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (pred[i].size() != gold[i].size() || (masks && (*masks)[i].size() != gold[i].size()))
      throw ValidationError("score: length mismatch in sequence " + std::to_string(i));
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      if (masks && !(*masks)[i][t]) continue;
      const bool p = pred[i][t] == Tag::EVENT;
      const bool g = gold[i][t] == Tag::EVENT;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  }
  return EvalReport::from_counts(tp, fp, fn);
}

EvalReport evaluate(const TaggerModel& model, std::span<const TaggedSentence> sentences, Domain gate,
                    std::string dataset, std::string model_id) {
  const auto pred = model.predict(sentences, gate);
  TagSeqs gold;
  gold.reserve(sentences.size());
  for (const auto& s : sentences) gold.push_back(s.tags);
  auto r = score(pred, gold);
  r.dataset = std::move(dataset);
  r.model_id = std::move(model_id);
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"tp", r.tp},           {"fp", r.fp},         {"fn", r.fn},
          {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
          {"dataset", r.dataset}, {"model_id", r.model_id}};
}

const TransferCell& TransferMatrix::at(const std::string& model_id, const std::string& eval_domain) const {
  for (const auto& c : cells)
    if (c.model_id == model_id && c.eval_domain == eval_domain) return c;
  throw ValidationError("no transfer cell for (" + model_id + ", " + eval_domain + ")");
}

nlohmann::json TransferMatrix::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cells)
    cs.push_back({{"model", c.model_id},
                  {"train_domain", c.train_domain},
                  {"eval_domain", c.eval_domain},
                  {"in_domain", c.in_domain},
                  {"report", trigada::to_json(c.report)}});
  return {{"domains", domains}, {"cells", cs}};
}

std::string TransferMatrix::to_table() const {
  std::vector<std::string> models;
  for (const auto& c : cells)
    if (std::find(models.begin(), models.end(), c.model_id) == models.end()) models.push_back(c.model_id);
  std::size_t w = 5;
  for (const auto& m : models) w = std::max(w, m.size());

  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-10s  %6s %6s %6s  %6s %6s %6s\n", static_cast<int>(w), "Model", "Train",
                "P", "R", "F1", "P", "R", "F1");
  out << std::string(w + 14, ' ') << "      In-Domain          Out-of-Domain\n" << buf;
  for (const auto& m : models) {
    const TransferCell* in = nullptr;
    std::vector<const TransferCell*> outs;
    for (const auto& c : cells) {
      if (c.model_id != m) continue;
      if (c.in_domain)
        in = &c;
      else
        outs.push_back(&c);
    }
    auto cell = [](const TransferCell* c, int k) -> std::string {
      if (!c) return "-";
      return display_pct(k == 0 ? c->report.precision : k == 1 ? c->report.recall : c->report.f1);
    };
    const TransferCell* o = outs.empty() ? nullptr : outs.front();
    std::snprintf(buf, sizeof buf, "%-*s  %-10s  %6s %6s %6s  %6s %6s %6s\n", static_cast<int>(w), m.c_str(),
                  in ? in->train_domain.c_str() : (o ? o->train_domain.c_str() : "-"), cell(in, 0).c_str(),
                  cell(in, 1).c_str(), cell(in, 2).c_str(), cell(o, 0).c_str(), cell(o, 1).c_str(),
                  cell(o, 2).c_str());
    out << buf;
  }
  return out.str();
}

TransferMatrix build_transfer_matrix(std::span<const ModelEntry> models,
                                     const std::map<std::string, const Corpus*>& corpora) {
  TransferMatrix m;
  for (const auto& [name, c] : corpora) m.domains.push_back(name);
  for (const auto& entry : models) {
    if (!corpora.count(entry.train_domain))
      throw ValidationError("model '" + entry.id + "' declares unknown train domain '" + entry.train_domain + "'");
    for (const auto& [name, corpus] : corpora) {
      TransferCell cell{entry.id, entry.train_domain, name, name == entry.train_domain, {}};
      if (cell.in_domain) {
        if (!corpus->has_split("test")) throw ValidationError("corpus '" + name + "' has no test split");
        const auto test = corpus->split_sentences("test");
        cell.report = evaluate(*entry.model, test, Domain::SOURCE, name + "/test", entry.id);
      } else {
        const Domain gate = entry.model->config().feda ? Domain::TARGET : Domain::SOURCE;
        cell.report = evaluate(*entry.model, corpus->sentences, gate, name + "/all", entry.id);
      }
      m.cells.push_back(std::move(cell));
    }
  }
  return m;
}

std::vector<Disagreement> find_disagreements(std::span<const TaggedSentence> sentences, const TagSeqs& baseline,
                                             const TagSeqs& improved, std::size_t limit) {
  std::vector<Disagreement> out;
  for (std::size_t i = 0; i < sentences.size() && out.size() < limit; ++i) {
    const auto& s = sentences[i];
    Disagreement d{s.doc_id, s.sent_index, {}, {}};
    for (std::size_t t = 0; t < s.size(); ++t) {
      const bool hit = s.tags[t] == Tag::EVENT && baseline[i][t] == Tag::O && improved[i][t] == Tag::EVENT;
      if (hit) d.positions.push_back(t);
      if (t > 0) d.text += ' ';
      d.text += hit ? "**" + s.tokens[t].surface + "**" : s.tokens[t].surface;
    }
    if (!d.positions.empty()) out.push_back(std::move(d));
  }
  return out;
}

std::vector<Disagreement> export_disagreements(const TaggerModel& baseline, const TaggerModel& improved,
                                               std::span<const TaggedSentence> sentences, std::size_t limit) {
  return find_disagreements(sentences, baseline.predict(sentences), improved.predict(sentences), limit);
}

void write_disagreements_tsv(const std::filesystem::path& path, const std::vector<Disagreement>& items) {
  std::ofstream out(path, std::ios::binary);
  out << "doc_id\tsent_index\tpositions\ttext\n";
  for (const auto& d : items) {
    std::string pos;
    for (auto p : d.positions) pos += (pos.empty() ? "" : ",") + std::to_string(p);
    out << d.doc_id << '\t' << d.sent_index << '\t' << pos << '\t' << d.text << '\n';
  }
}

}  // namespace trigada
