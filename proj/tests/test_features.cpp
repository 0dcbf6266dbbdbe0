#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "support.hpp"
#include "trigada/common.hpp"
#include "trigada/features.hpp"
#include "trigada/model.hpp"

using namespace trigada;
using testing::fixture;
using testing::sentence;

TEST_SUITE("features") {

TEST_CASE("vocab reserves PAD and UNK and orders by frequency") {
  const auto src = make_corpus("s", {sentence("d", 0, {"a", "b"})});
  const auto tgt = make_corpus("t", {sentence("e", 0, {"b", "c"})});
  const auto v = build_vocab(src, tgt, 1);
  CHECK(v.words() == std::vector<std::string>{"<pad>", "<unk>", "b", "a", "c"});
  CHECK(v.lookup("zzz") == Vocab::UNK);
  CHECK(v.lookup("a") == 3);

  const auto singles = build_vocab(make_corpus("s", {sentence("d", 0, {"a", "b"})}),
                                   make_corpus("t", {sentence("e", 0, {"c"})}), 2);
  CHECK(singles.size() == 2);
  CHECK(build_vocab(src, tgt, 1) == v);

  const auto lc = build_vocab(make_corpus("s", {sentence("d", 0, {"The", "the"})}), tgt, 1, true);
  CHECK(lc.lookup("THE") == lc.lookup("the"));
  CHECK(lc.lookup("the") != Vocab::UNK);
}

TEST_CASE("vocab is independent of input order") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TaggedSentence> a, b;
    for (int i = 0; i < 30; ++i) {
      std::vector<std::string> words;
      for (int k = 0; k < 4; ++k) words.push_back("w" + std::to_string(rng.below(15)));
      (rng.bernoulli(0.5) ? a : b).push_back(sentence("d" + std::to_string(i), 0, words));
    }
    if (a.empty() || b.empty()) continue;
    const auto v1 = build_vocab(make_corpus("a", a), make_corpus("b", b), 1);
    rng.shuffle(a);
    rng.shuffle(b);
    const auto v2 = build_vocab(make_corpus("b", b), make_corpus("a", a), 1);
    CHECK(v1 == v2);
    CHECK(v1.digest() == v2.digest());
  }
}

TEST_CASE("vocab save and load round-trip") {
  testing::TempDir tmp("vocab");
  const auto v = build_vocab(make_corpus("s", {sentence("d", 0, {"x", "y", "x"})}),
                             make_corpus("t", {sentence("e", 0, {"z"})}), 1, true);
  v.save(tmp.path / "v.txt");
  CHECK(Vocab::load(tmp.path / "v.txt") == v);
}

TEST_CASE("pretrained embeddings copy known rows and bound the rest") {
  const auto src = make_corpus("s", {sentence("d", 0, {"cat", "storm", "unseen"})});
  const auto tgt = make_corpus("t", {sentence("e", 0, {"hit", "The"})});
  const auto v = build_vocab(src, tgt, 1);
  const auto t = load_pretrained_embeddings(fixture("vectors.w2v"), v, 3, 1);
  CHECK_FALSE(t.trainable);
  CHECK(t.rows.rows() == static_cast<Eigen::Index>(v.size()));
  CHECK(t.rows.row(Vocab::PAD).isZero(0));
  CHECK(t.rows(v.lookup("cat"), 0) == 0.5);
  CHECK(t.rows(v.lookup("cat"), 1) == -0.25);
  CHECK(t.rows(v.lookup("cat"), 2) == 1.0);
  const auto unseen = t.rows.row(v.lookup("unseen"));
  CHECK(unseen.cwiseAbs().maxCoeff() < kOovInitBound);
  CHECK(unseen.cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(load_pretrained_embeddings(fixture("vectors.w2v"), v, 100, 1), ValidationError);
}

TEST_CASE("encode_batch pads, masks and maps unknown words") {
  const auto vocab = build_vocab(make_corpus("s", {sentence("d", 0, {"a", "b", "c"})}),
                                 make_corpus("t", {sentence("e", 0, {"d"})}), 1);
  const std::vector<TaggedSentence> sents{sentence("d", 0, {"a", "b", "c"}, {1}),
                                          sentence("d", 1, {"a", "q", "c", "d", "a"})};
  FeatureContext ctx{&vocab, nullptr, {}, nullptr};
  const auto b = encode_batch(std::span<const TaggedSentence>(sents), ctx);
  CHECK(b.max_len == 5);
  CHECK(b.mask[0] == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
  CHECK(b.mask[1] == std::vector<std::uint8_t>{1, 1, 1, 1, 1});
  CHECK(b.word_ids[0][3] == Vocab::PAD);
  CHECK(b.word_ids[1][1] == Vocab::UNK);
  CHECK(b.tags[0] == std::vector<int>{0, 1, 0, -1, -1});
  CHECK_THROWS_AS(encode_batch(std::span<const TaggedSentence>(), ctx), ValidationError);
}

TEST_CASE("contextual plan needs every sentence in the store") {
  const auto vocab = Vocab();
  ContextualFeatureStore store(2);
  store.insert("d", 0, Mat::Ones(2, 2));
  FeatureContext ctx{&vocab, nullptr, {FeatureKind::CONTEXTUAL, 0, 0, 2}, &store};
  const std::vector<TaggedSentence> ok{sentence("d", 0, {"a", "b"})};
  CHECK(encode_batch(std::span<const TaggedSentence>(ok), ctx).contextual.size() == 1);
  const std::vector<TaggedSentence> missing{sentence("d", 0, {"a", "b"}), sentence("doc9", 4, {"x"})};
  try {
    encode_batch(std::span<const TaggedSentence>(missing), ctx);
    FAIL("expected a missing-key error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("(doc9, 4)") != std::string::npos);
  }
}

TEST_CASE("subtoken collapse rules") {
  Mat sub(3, 2);
  sub << 2, 2, 4, 4, 7, 1;
  CHECK(collapse_subtokens(sub, {0, 0, 1}, 2, SubtokenRule::MEAN_SUBTOKENS).row(0) == RowVec::Constant(2, 3.0));
  CHECK(collapse_subtokens(sub, {0, 0, 1}, 2, SubtokenRule::FIRST_SUBTOKEN).row(0) == RowVec::Constant(2, 2.0));
  CHECK(collapse_subtokens(sub, {-1, 0, 1}, 2, SubtokenRule::MEAN_SUBTOKENS).row(0) == RowVec::Constant(2, 4.0));
  CHECK_THROWS_AS(collapse_subtokens(sub, {0, 1, 5}, 2, SubtokenRule::MEAN_SUBTOKENS), ValidationError);
  CHECK_THROWS_AS(collapse_subtokens(sub, {0, 0}, 2, SubtokenRule::MEAN_SUBTOKENS), ValidationError);

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(6));
    Mat rows(n, 3);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.uniform(-1, 1);
    std::vector<int> one_to_one(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) one_to_one[static_cast<std::size_t>(i)] = static_cast<int>(i);
    CHECK(collapse_subtokens(rows, one_to_one, static_cast<std::size_t>(n), SubtokenRule::MEAN_SUBTOKENS) ==
          collapse_subtokens(rows, one_to_one, static_cast<std::size_t>(n), SubtokenRule::FIRST_SUBTOKEN));
  }
}

TEST_CASE("contextual artifact import round-trips and checks alignment") {
  testing::TempDir tmp("ctx");
  const auto corpus = make_corpus("c", {sentence("doc", 0, {"un", "fold"}), sentence("doc", 1, {"x"})});
  Mat a(3, 2);
  a << 2, 2, 4, 4, 1, 0;
  Mat b(1, 2);
  b << 5, 6;
  write_contextual_features(tmp.path, {{"doc", 0, a, {0, 0, 1}}, {"doc", 1, b, {0}}});
  const auto store = import_contextual_features(tmp.path, corpus);
  CHECK(store.dim() == 2);
  REQUIRE(store.find("doc", 0) != nullptr);
  CHECK((*store.find("doc", 0))(0, 0) == 3.0);
  CHECK((*store.find("doc", 1))(0, 1) == 6.0);

  testing::TempDir bad("ctxbad");
  write_contextual_features(bad.path, {{"doc", 0, a, {0, 1, 2}}});
  CHECK_THROWS_AS(import_contextual_features(bad.path, corpus), ValidationError);
}

TEST_CASE("feature plan input widths") {
  FeaturePlan p{FeatureKind::STATIC, 100, 50, 3072};
  CHECK(p.input_dim() == 100);
  p.kind = FeatureKind::STATIC_POS;
  CHECK(p.input_dim() == 150);
  p.kind = FeatureKind::CONTEXTUAL;
  CHECK(p.input_dim() == 3072);
}

TEST_CASE("padding never reaches the representation") {
  auto toy = testing::make_toy();
  for (auto kind : {LearnerKind::LSTM, LearnerKind::BILSTM, LearnerKind::POS}) {
    auto mcfg = toy.mcfg;
    mcfg.kind = kind;
    mcfg.plan.kind = feature_kind_for(kind);
    const TaggerModel model(mcfg, toy.res, 1);
    const auto& s = toy.source.sentences[0];
    const std::vector<TaggedSentence> alone{s};
    std::vector<TaggedSentence> padded{s, s};
    for (int k = 0; k < 6; ++k) {
      padded[1].tokens.push_back(s.tokens[0]);
      padded[1].tags.push_back(Tag::O);
    }

    const auto ctx = model.feature_context();
    const auto b1 = encode_batch(std::span<const TaggedSentence>(alone), ctx);
    const auto b2 = encode_batch(std::span<const TaggedSentence>(padded), ctx);
    const auto e2 = model.embed(b2);
    REQUIRE(e2.size() == b2.max_len);
    CHECK(e2[0].rows() == static_cast<Eigen::Index>(mcfg.plan.input_dim()));
    CHECK(e2[0].cols() == 2);
    for (std::size_t t = s.size(); t < b2.max_len; ++t) CHECK(e2[t].col(0).isZero(0));

    const auto p1 = model.forward(b1, false, nullptr);
    const auto p2 = model.forward(b2, false, nullptr);
    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto c1 = p1.logits.col(static_cast<Eigen::Index>(t));
      const auto c2 = p2.logits.col(static_cast<Eigen::Index>(t * 2));
      CHECK((c1 - c2).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

}  // TEST_SUITE
