#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "trigada/common.hpp"
#include "trigada/selftrain.hpp"

using namespace trigada;

namespace {

SelfTrainSpec small_spec(const ModelConfig& student) {
  SelfTrainSpec spec;
  spec.labeled_fraction = 0.1;
  spec.student = student;
  spec.student_epochs = 2;
  spec.cfg.batch_size = 8;
  spec.cfg.finetune_epochs = 2;
  spec.cfg.seed = 4;
  spec.sample_seed = 9;
  return spec;
}

TaggerModel trained_teacher(const testing::Toy& toy) {
  TaggerModel t(toy.mcfg, toy.res, 2);
  t.mark_trained();
  return t;
}

}  // namespace

TEST_SUITE("selftrain") {

TEST_CASE("objective normalizes each dataset by its own size") {
  auto toy = testing::make_toy(1, 40, 4);
  TaggerModel model(toy.mcfg, toy.res, 1);
  for (auto* p : model.event_params()) p->value.setZero();
  const std::vector<TaggedSentence> labeled{testing::sentence("l", 0, {"a", "b", "c"}, {1})};
  const std::vector<TaggedSentence> pseudo{testing::sentence("u", 0, {"a", "b", "c", "d"}, {0}),
                                           testing::sentence("u", 1, {"a", "b"})};
  // Uniform logits: 3 ln2 for D^l (m = 1) plus (4 + 2) ln2 / 2 for D^u (n = 2).
  CHECK(selftrain_objective(model, labeled, pseudo) == doctest::Approx(6 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("pseudo labels are argmax tags with ties to O") {
  auto toy = testing::make_toy(1, 40, 4);
  TaggerModel model(toy.mcfg, toy.res, 1);
  for (auto* p : model.event_params()) p->value.setZero();
  const auto seqs = strip_tags(toy.target.sentences);
  const auto tied = pseudo_label(model, seqs);
  REQUIRE(tied.size() == seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    CHECK(tied[i].tags.size() == seqs[i].tokens.size());
    CHECK(tied[i].n_events() == 0);
  }
  // Bias the output layer towards EVENT.
  for (auto* p : model.event_params())
    if (p->name == "event.out.bias") p->value(1, 0) = 1.0;
  for (const auto& s : pseudo_label(model, seqs)) CHECK(s.n_events() == s.size());
}

TEST_CASE("preconditions") {
  auto toy = testing::make_toy(2, 40, 4);
  const auto teacher = trained_teacher(toy);
  auto spec = small_spec(toy.mcfg);

  const TaggerModel untrained(toy.mcfg, toy.res, 1);
  CHECK_THROWS_AS(self_train(spec, untrained, toy.target), ValidationError);

  spec.labeled_fraction = 0.01;  // 0.24 of 24 sentences rounds to zero
  CHECK_THROWS_WITH_AS(self_train(spec, teacher, toy.target), doctest::Contains("D^l"), ValidationError);

  spec.labeled_fraction = 0.99;
  CHECK_THROWS_WITH_AS(self_train(spec, teacher, toy.target), doctest::Contains("D^u"), ValidationError);

  spec.labeled_fraction = 0.1;
  spec.iterations = 0;
  CHECK_THROWS_AS(self_train(spec, teacher, toy.target), ConfigError);
}

TEST_CASE("D^l and D^u partition the train split and D^u gold tags are never used") {
  auto toy = testing::make_toy(3, 60, 4);
  const auto teacher = trained_teacher(toy);
  const auto spec = small_spec(toy.mcfg);
  const auto r = self_train(spec, teacher, toy.target);

  const auto train = toy.target.split_sentences("train");
  CHECK(r.n_labeled + r.n_unlabeled == train.size());
  CHECK(r.n_labeled == static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(train.size()) + 0.5)));
  CHECK(r.pseudo_labeled.size() == r.n_unlabeled);
  CHECK(r.student_gold_reads == r.n_labeled);

  const auto sample = sample_labeled_fraction(toy.target, spec.labeled_fraction, spec.sample_seed);
  std::set<std::pair<std::string, std::size_t>> dl, du;
  for (const auto& s : sample.labeled.sentences) dl.insert({s.doc_id, s.sent_index});
  for (const auto& s : r.pseudo_labeled) du.insert({s.doc_id, s.sent_index});
  for (const auto& k : dl) CHECK_FALSE(du.count(k));
  CHECK(dl.size() + du.size() == train.size());

  // Rewrite the gold tags of D^u; nothing the student learns may change.
  Corpus poisoned = toy.target;
  for (auto& s : poisoned.sentences)
    if (du.count({s.doc_id, s.sent_index})) std::fill(s.tags.begin(), s.tags.end(), Tag::EVENT);
  const auto p = self_train(spec, teacher, poisoned);
  const auto a = r.student.all_params();
  const auto b = p.student.all_params();
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k]->value == b[k]->value);
}

TEST_CASE("k iterations make exactly k labeling passes") {
  auto toy = testing::make_toy(4, 40, 4);
  const auto teacher = trained_teacher(toy);
  auto spec = small_spec(toy.mcfg);
  spec.iterations = 3;
  spec.student_epochs = 1;
  const auto r = self_train(spec, teacher, toy.target);
  CHECK(r.pseudo_label_passes == 3);
  CHECK(r.iterations.size() == 3);
  CHECK(r.student_gold_reads == 3 * r.n_labeled);
  CHECK(r.iterations[1].labeler.f1 == r.iterations[0].student.f1);
  CHECK(r.to_json()["iterations"].size() == 3);
  CHECK_FALSE(r.student.config().domain_head);
}

}  // TEST_SUITE
