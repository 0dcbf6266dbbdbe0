#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trigada/corpus.hpp"
#include "trigada/model.hpp"

namespace trigada {

struct EvalReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::string dataset;
  std::string model_id;

  /// Fills the ratios from the counts; undefined ratios are 0.
  static EvalReport from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  EvalReport& operator+=(const EvalReport& other);
};

/// Harmonic mean with 0 when p + r = 0.
double f1_score(double precision, double recall);
/// Percentage with one decimal, e.g. 0.4958 -> "49.6".
std::string display_pct(double fraction);

using TagSeqs = std::vector<std::vector<Tag>>;
using MaskSeqs = std::vector<std::vector<std::uint8_t>>;

/// Token-level P/R/F1 with EVENT as the positive class. Positions with mask 0
/// are skipped; without masks every position counts.
EvalReport score(const TagSeqs& pred, const TagSeqs& gold, const MaskSeqs* masks = nullptr);

EvalReport evaluate(const TaggerModel& model, std::span<const TaggedSentence> sentences,
                    Domain gate = Domain::SOURCE, std::string dataset = {}, std::string model_id = {});

nlohmann::json to_json(const EvalReport& r);

// Rows are models (with the domain each was trained on); columns are
// evaluation domains. The in-domain column uses the train domain's test
// split, every other column uses the full corpus of that domain.
struct TransferCell {
  std::string model_id;
  std::string train_domain;
  std::string eval_domain;
  bool in_domain = false;
  EvalReport report;
};

struct TransferMatrix {
  std::vector<std::string> domains;
  std::vector<TransferCell> cells;

  const TransferCell& at(const std::string& model_id, const std::string& eval_domain) const;
  nlohmann::json to_json() const;
  /// Aligned text table with In-Domain and Out-of-Domain P/R/F1 blocks.
  std::string to_table() const;
};

struct ModelEntry {
  std::string id;
  std::string train_domain;
  const TaggerModel* model = nullptr;
};

TransferMatrix build_transfer_matrix(std::span<const ModelEntry> models,
                                     const std::map<std::string, const Corpus*>& corpora);

struct Disagreement {
  std::string doc_id;
  std::size_t sent_index = 0;
  std::vector<std::size_t> positions;
  std::string text;  // tokens joined by spaces, recovered triggers wrapped as **token**
};

/// Sentences containing a gold EVENT that `baseline` tags O and `improved`
/// tags EVENT, in corpus order, at most `limit` of them.
std::vector<Disagreement> export_disagreements(const TaggerModel& baseline, const TaggerModel& improved,
                                               std::span<const TaggedSentence> sentences, std::size_t limit);
std::vector<Disagreement> find_disagreements(std::span<const TaggedSentence> sentences, const TagSeqs& baseline,
                                             const TagSeqs& improved, std::size_t limit);
void write_disagreements_tsv(const std::filesystem::path& path, const std::vector<Disagreement>& items);

inline constexpr std::size_t kDisagreementLimit = 50;

}  // namespace trigada
