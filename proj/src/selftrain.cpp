#include "trigada/selftrain.hpp"

#include <cmath>

namespace trigada {

void SelfTrainSpec::validate() const {
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0))
    throw ConfigError("labeled_fraction must lie in (0, 1)");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  student.validate();
  cfg.validate();
}

nlohmann::json SelfTrainResult::to_json() const {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& it : iterations)
    its.push_back({{"iteration", it.iteration},
                   {"labeler", trigada::to_json(it.labeler)},
                   {"student", trigada::to_json(it.student)},
                   {"pseudo_events", it.pseudo_events}});
  return {{"n_labeled", n_labeled},
          {"n_unlabeled", n_unlabeled},
          {"pseudo_label_passes", pseudo_label_passes},
          {"teacher_before_finetune", trigada::to_json(teacher_before)},
          {"teacher", trigada::to_json(teacher_report)},
          {"student", trigada::to_json(student_report)},
          {"iterations", its}};
}

std::vector<TaggedSentence> pseudo_label(const TaggerModel& model, std::span<const TokenSequence> sequences,
                                         Domain gate) {
  const auto tags = model.predict(sequences, gate);
  std::vector<TaggedSentence> out;
  out.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i)
    out.push_back({sequences[i].doc_id, sequences[i].sent_index, sequences[i].tokens, tags[i]});
  return out;
}

double selftrain_objective(const TaggerModel& model, std::span<const TaggedSentence> labeled,
                           std::span<const TaggedSentence> pseudo) {
  auto term = [&](std::span<const TaggedSentence> sents) {
    if (sents.empty()) return 0.0;
    std::vector<TokenSequence> seqs;
    for (const auto& s : sents) seqs.push_back(strip_tags(s));
    const auto logits = model.token_logits(seqs);
    double total = 0.0;
    for (std::size_t i = 0; i < sents.size(); ++i) {
      const Mat lp = log_softmax(logits[i]);
      for (std::size_t t = 0; t < sents[i].size(); ++t)
        total -= lp(static_cast<int>(sents[i].tags[t]), static_cast<Eigen::Index>(t));
    }
    return total / static_cast<double>(sents.size());
  };
  return term(labeled) + term(pseudo);
}

SelfTrainResult self_train(const SelfTrainSpec& spec, const TaggerModel& teacher, const Corpus& target,
                           const std::string& eval_split) {
  spec.validate();
  if (!teacher.trained()) throw ValidationError("self-training needs a trained teacher");
  if (!target.has_split("train")) throw ValidationError("target corpus '" + target.name + "' has no train split");
  if (!target.has_split(eval_split)) throw ValidationError("target corpus has no " + eval_split + " split");
  const auto pool = target.split_sentences("train");
  const double want = spec.labeled_fraction * static_cast<double>(pool.size());
  if (std::floor(want + 0.5 + 1e-9) < 1.0)
    throw ValidationError("labeled_fraction " + std::to_string(spec.labeled_fraction) + " of " +
                          std::to_string(pool.size()) + " sentences leaves D^l empty");

  const auto sample = sample_labeled_fraction(target, spec.labeled_fraction, spec.sample_seed);
  const auto& dl = sample.labeled.sentences;
  if (sample.remainder.sentences.empty()) throw ValidationError("D^u is empty");
  // D^u tags are dropped here; nothing downstream can reach them.
  const auto du = strip_tags(sample.remainder.sentences);
  const auto eval_sents = target.split_sentences(eval_split);
  const Domain gate = teacher.config().feda ? Domain::TARGET : Domain::SOURCE;
  const std::string ds = target.name + "/" + eval_split;

  AdaConfig tcfg = spec.cfg;
  tcfg.seed = derive_seed(spec.cfg.seed, "selftrain.teacher");
  TaggerModel tuned = finetune(teacher, dl, tcfg);

  SelfTrainResult result{tuned, tuned, {}, {}, {}, {}, 0, dl.size(), du.size(), {}, 0};
  result.teacher_before = evaluate(teacher, eval_sents, gate, ds, "teacher");
  result.teacher_report = evaluate(tuned, eval_sents, gate, ds, "teacher+finetune");

  const TaggerModel* labeler = &result.teacher;
  Domain labeler_gate = gate;
  EvalReport labeler_report = result.teacher_report;
  const double wl = 1.0 / static_cast<double>(dl.size());
  const double wu = 1.0 / static_cast<double>(du.size());

  for (std::size_t it = 1; it <= spec.iterations; ++it) {
    result.pseudo_labeled = pseudo_label(*labeler, du, labeler_gate);
    ++result.pseudo_label_passes;

    TrainPlan plan;
    plan.weighted = true;
    plan.early_stopping = false;
    plan.epochs = spec.student_epochs;
    for (const auto& s : dl) plan.train.push_back({&s, Domain::SOURCE, wl});
    for (const auto& s : result.pseudo_labeled) plan.train.push_back({&s, Domain::SOURCE, wu});
    result.student_gold_reads += dl.size();

    AdaConfig scfg = spec.cfg;
    scfg.seed = derive_seed(spec.cfg.seed, "selftrain.student." + std::to_string(it));
    ModelConfig smcfg = spec.student;
    smcfg.domain_head = false;
    smcfg.feda = false;
    auto trained = run_training(TaggerModel(smcfg, teacher.shared_resources(), scfg.seed), plan, scfg);
    result.student = std::move(trained.final_model);

    SelfTrainIteration rec;
    rec.iteration = it;
    rec.labeler = labeler_report;
    rec.student = evaluate(result.student, eval_sents, Domain::SOURCE, ds, "student");
    for (const auto& s : result.pseudo_labeled) rec.pseudo_events += s.n_events();
    result.iterations.push_back(rec);

    labeler = &result.student;
    labeler_gate = Domain::SOURCE;
    labeler_report = rec.student;
  }
  result.student_report = result.iterations.back().student;
  return result;
}

}  // namespace trigada
