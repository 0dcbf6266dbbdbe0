#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trigada/corpus.hpp"
#include "trigada/eval.hpp"
#include "trigada/model.hpp"
#include "trigada/training.hpp"

namespace trigada {

struct SelfTrainSpec {
  double labeled_fraction = 0.01;
  std::size_t iterations = 1;
  ModelConfig student;
  AdaConfig cfg;
  // No target dev data is consulted, so the student trains for a fixed
  // number of epochs and keeps the last one.
  std::size_t student_epochs = 30;
  std::uint64_t sample_seed = 13;

  void validate() const;
};

struct SelfTrainIteration {
  std::size_t iteration = 0;
  EvalReport labeler;  // the model that produced this round's pseudo-labels
  EvalReport student;
  std::size_t pseudo_events = 0;
};

struct SelfTrainResult {
  TaggerModel teacher;  // after finetuning on D^l
  TaggerModel student;
  EvalReport teacher_before;
  EvalReport teacher_report;
  EvalReport student_report;
  std::vector<SelfTrainIteration> iterations;
  std::size_t pseudo_label_passes = 0;
  std::size_t n_labeled = 0;
  std::size_t n_unlabeled = 0;
  /// Pseudo-labeled D^u from the last pass.
  std::vector<TaggedSentence> pseudo_labeled;
  /// Gold-tagged sentences the student saw; never includes D^u.
  std::size_t student_gold_reads = 0;

  nlohmann::json to_json() const;
};

/// Argmax tags from `model`; exact ties go to O.
std::vector<TaggedSentence> pseudo_label(const TaggerModel& model, std::span<const TokenSequence> sequences,
                                         Domain gate = Domain::SOURCE);

/// (1/m) sum_i L(x^l_i) + (1/n) sum_j L(x^u_j), where L sums token NLL over a
/// sentence. Evaluation mode.
double selftrain_objective(const TaggerModel& model, std::span<const TaggedSentence> labeled,
                           std::span<const TaggedSentence> pseudo);

/// Finetunes the teacher on D^l, pseudo-labels D^u, trains a fresh student
/// on both with per-dataset normalization, and repeats with the student as
/// labeler for later iterations. D^l and D^u partition the target train split.
SelfTrainResult self_train(const SelfTrainSpec& spec, const TaggerModel& teacher, const Corpus& target,
                           const std::string& eval_split = "test");

}  // namespace trigada
