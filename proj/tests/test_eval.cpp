#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "trigada/common.hpp"
#include "trigada/eval.hpp"
#include "trigada/training.hpp"

using namespace trigada;

namespace {

std::vector<Tag> tags(std::initializer_list<int> v) {
  std::vector<Tag> out;
  for (int x : v) out.push_back(x ? Tag::EVENT : Tag::O);
  return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("hand-counted example") {
  const auto r = score({tags({0, 1, 1, 0})}, {tags({0, 1, 0, 1})});
  CHECK(r.tp == 1);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
}

TEST_CASE("zero-denominator convention") {
  const auto r = score({tags({0, 0, 0})}, {tags({1, 0, 1})});
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(score({tags({0})}, {tags({0})}).f1 == 0.0);
  CHECK(f1_score(0.0, 0.0) == 0.0);
}

TEST_CASE("published F1 consistency after display rounding") {
  CHECK(display_pct(f1_score(0.85, 0.35)) == "49.6");
  CHECK(2 * 85.0 * 35.0 / 120.0 == doctest::Approx(49.5833).epsilon(1e-4));
}

TEST_CASE("length mismatch is rejected") {
  CHECK_THROWS_AS(score({tags({0, 1})}, {tags({0})}), ValidationError);
  CHECK_THROWS_AS(score({tags({0})}, {tags({0}), tags({1})}), ValidationError);
}

TEST_CASE("score matches a brute-force counter on 1000 random cases") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    TagSeqs pred, gold;
    MaskSeqs masks;
    std::size_t tp = 0, fp = 0, fn = 0;
    const std::size_t n = 1 + rng.below(5);
    const bool use_mask = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = 1 + rng.below(10);
      std::vector<Tag> p, g;
      std::vector<std::uint8_t> m;
      for (std::size_t t = 0; t < len; ++t) {
        p.push_back(rng.bernoulli(0.3) ? Tag::EVENT : Tag::O);
        g.push_back(rng.bernoulli(0.3) ? Tag::EVENT : Tag::O);
        m.push_back(use_mask ? static_cast<std::uint8_t>(rng.bernoulli(0.8)) : 1);
        if (!m.back()) continue;
        if (p.back() == Tag::EVENT && g.back() == Tag::EVENT) ++tp;
        if (p.back() == Tag::EVENT && g.back() == Tag::O) ++fp;
        if (p.back() == Tag::O && g.back() == Tag::EVENT) ++fn;
      }
      pred.push_back(p);
      gold.push_back(g);
      masks.push_back(m);
    }
    const auto r = use_mask ? score(pred, gold, &masks) : score(pred, gold);
    CHECK(r.tp == tp);
    CHECK(r.fp == fp);
    CHECK(r.fn == fn);
    const double P = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double R = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    const double F = P + R > 0 ? 2 * P * R / (P + R) : 0.0;
    CHECK(std::abs(r.precision - P) <= 1e-9);
    CHECK(std::abs(r.recall - R) <= 1e-9);
    CHECK(std::abs(r.f1 - F) <= 1e-9);
    CHECK(r.f1 >= 0.0);
    CHECK(r.f1 <= 1.0);
    CHECK(r.f1 <= (r.precision + r.recall) / 2 + 1e-12);
    CHECK((r.f1 == 0.0) == (r.tp == 0));
  }
}

TEST_CASE("masked padding never changes a count") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    TagSeqs pred, gold, pred_pad, gold_pad;
    MaskSeqs masks;
    for (int i = 0; i < 3; ++i) {
      const std::size_t len = 1 + rng.below(6);
      std::vector<Tag> p, g;
      for (std::size_t t = 0; t < len; ++t) {
        p.push_back(rng.bernoulli(0.4) ? Tag::EVENT : Tag::O);
        g.push_back(rng.bernoulli(0.4) ? Tag::EVENT : Tag::O);
      }
      pred.push_back(p);
      gold.push_back(g);
      std::vector<std::uint8_t> m(len, 1);
      const std::size_t pad = rng.below(5);
      for (std::size_t k = 0; k < pad; ++k) {
        p.push_back(rng.bernoulli(0.5) ? Tag::EVENT : Tag::O);
        g.push_back(rng.bernoulli(0.5) ? Tag::EVENT : Tag::O);
        m.push_back(0);
      }
      pred_pad.push_back(p);
      gold_pad.push_back(g);
      masks.push_back(m);
    }
    const auto a = score(pred, gold);
    const auto b = score(pred_pad, gold_pad, &masks);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.fn == b.fn);
  }
}

TEST_CASE("report accumulation recomputes ratios from pooled counts") {
  auto a = EvalReport::from_counts(3, 1, 0);
  a += EvalReport::from_counts(1, 0, 4);
  CHECK(a.tp == 4);
  CHECK(a.precision == 0.8);
  CHECK(a.recall == 0.5);
}

TEST_CASE("transfer matrix and disagreements on trained toy models") {
  auto toy = testing::make_toy(7, 60, 5);
  AdaConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 8;
  const auto base = train_supervised(toy.mcfg, toy.res, toy.source, cfg).best;
  const auto fed = train_feda(toy.mcfg, toy.res, toy.source, toy.target.split_sentences("train"), cfg).best;

  const std::vector<ModelEntry> models{{"base", toy.source.name, &base}, {"feda", toy.source.name, &fed}};
  const std::map<std::string, const Corpus*> corpora{{toy.source.name, &toy.source}, {toy.target.name, &toy.target}};
  const auto m = build_transfer_matrix(models, corpora);
  CHECK(m.cells.size() == 4);
  const auto& in = m.at("base", toy.source.name);
  CHECK(in.in_domain);
  CHECK(in.report.dataset == toy.source.name + "/test");
  const auto test = toy.source.split_sentences("test");
  CHECK(in.report.tp == evaluate(base, test).tp);
  const auto& out = m.at("feda", toy.target.name);
  CHECK_FALSE(out.in_domain);
  CHECK(out.report.tp == evaluate(fed, toy.target.sentences, Domain::TARGET).tp);
  const auto again = build_transfer_matrix(models, corpora);
  for (std::size_t i = 0; i < 4; ++i) CHECK(again.cells[i].report.f1 == m.cells[i].report.f1);
  CHECK(m.to_table().find("In-Domain") != std::string::npos);
  CHECK(m.to_table().find("Out-of-Domain") != std::string::npos);
  CHECK(m.to_json()["cells"].size() == 4);

  Corpus no_test = toy.target;
  no_test.splits.erase("test");
  const std::vector<ModelEntry> on_target{{"t", toy.target.name, &base}};
  const std::map<std::string, const Corpus*> broken{{toy.target.name, &no_test}};
  CHECK_THROWS_AS(build_transfer_matrix(on_target, broken), ValidationError);

  CHECK(export_disagreements(base, base, toy.target.sentences, 50).empty());
}

TEST_CASE("planted disagreement is found, bolded and capped") {
  std::vector<TaggedSentence> sents{testing::sentence("a", 0, {"he", "ran", "home"}, {1}),
                                    testing::sentence("a", 1, {"it", "rained"}, {1}),
                                    testing::sentence("b", 0, {"x", "y"}, {0})};
  const TagSeqs baseline{tags({0, 0, 0}), tags({0, 1}), tags({0, 0})};
  const TagSeqs improved{tags({0, 1, 0}), tags({0, 1}), tags({0, 0})};
  const auto d = find_disagreements(sents, baseline, improved, 50);
  REQUIRE(d.size() == 1);
  CHECK(d[0].doc_id == "a");
  CHECK(d[0].sent_index == 0);
  CHECK(d[0].positions == std::vector<std::size_t>{1});
  CHECK(d[0].text == "he **ran** home");

  std::vector<TaggedSentence> many(80, sents[0]);
  const TagSeqs b(80, baseline[0]), i(80, improved[0]);
  CHECK(find_disagreements(many, b, i, kDisagreementLimit).size() == 50);

  testing::TempDir tmp("dis");
  write_disagreements_tsv(tmp.path / "d.tsv", d);
  std::ifstream in(tmp.path / "d.tsv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "doc_id\tsent_index\tpositions\ttext\na\t0\t1\the **ran** home\n");
}

}  // TEST_SUITE
