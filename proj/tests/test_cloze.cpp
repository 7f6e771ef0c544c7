#include <cmath>
#include <random>

#include "doctest.h"
#include "emo/cloze.hpp"
#include "testutil.hpp"

using namespace emo;

namespace {

EmotionLexicon table2_lexicon() {
  EmotionLexicon lex;
  lex.set_words(EmotionLabel::Anger, {"angry", "angrier"});
  lex.set_words(EmotionLabel::Joy, {"happy", "happier"});
  lex.set_words(EmotionLabel::Surprise, {"surprise", "surprised"});
  return lex;
}

TableLM table2_lm() {
  return TableLM({
      {"i 'm happy than you .", -24.38},
      {"i 'm happier than you .", -19.7},
      {"i 'm angry than you .", -26.8},
      {"i 'm angrier than you .", -21.9},
      {"i 'm surprise than you .", -27.6},
      {"i 'm surprised than you .", -31.5},
  });
}

Tweet table2_tweet() {
  return testutil::make_tweet("t2", "I'm [#TRIGGERWORD#] than you.");
}

}  // namespace

TEST_CASE("normalize_log_probs") {
  SUBCASE("two-way conditional example") {
    const auto p = normalize_log_probs({-25.76, -27.86});
    CHECK(p[0] == doctest::Approx(0.89).epsilon(5e-3));
    CHECK(p[0] + p[1] == doctest::Approx(1.0));
    CHECK(p[0] == doctest::Approx(0.8909).epsilon(1e-3));
  }
  SUBCASE("three-way final probabilities") {
    const auto p = normalize_log_probs({-19.7, -21.9, -27.6});
    CHECK(std::abs(p[0] - 0.89995) < 1e-4);
    CHECK(std::abs(p[1] - 0.09972) < 1e-4);
    CHECK(std::abs(p[2] - 0.00033) < 1e-4);
  }
  SUBCASE("constant vector of six gives uniform") {
    const auto p = normalize_log_probs({-7, -7, -7, -7, -7, -7});
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 6.0));
  }
  SUBCASE("non-finite input is rejected") {
    CHECK_THROWS_WITH_AS(
        normalize_log_probs({-1.0, std::numeric_limits<double>::infinity()}),
        doctest::Contains("NonFinite"), Error);
    CHECK_THROWS_AS(normalize_log_probs({std::nan("")}), Error);
  }
}

TEST_CASE("generate_candidates") {
  SUBCASE("default lexicon yields 44 candidates") {
    const auto cands = generate_candidates(table2_tweet(),
                                           EmotionLexicon::builtin());
    CHECK(cands.size() == 44);
  }
  SUBCASE("substituted sentences match the expected surface forms") {
    const auto cands = generate_candidates(table2_tweet(), table2_lexicon());
    bool happy = false, happier = false;
    for (const auto& c : cands) {
      const std::vector<std::string> exp_happy = {"i", "'m", "happy",
                                                  "than", "you", "."};
      const std::vector<std::string> exp_happier = {"i", "'m", "happier",
    "than", "you", "."};
      if (c.tokens == exp_happy) happy = true;
      if (c.tokens == exp_happier) happier = true;
    }
    CHECK(happy);
    CHECK(happier);
  }
  SUBCASE("glued prefix merges into one token") {
    Tweet tw = testutil::make_tweet("p", "I was un[#TRIGGERWORD#] today");
    const auto cands = generate_candidates(tw, table2_lexicon());
    bool unhappy = false;
    for (const auto& c : cands)
      for (const auto& t : c.tokens)
        if (t == "unhappy") unhappy = true;
    CHECK(unhappy);
  }
  SUBCASE("no trigger is rejected") {
    Tweet tw = testutil::make_tweet("n", "plain text");
    CHECK_THROWS_WITH_AS(generate_candidates(tw, table2_lexicon()),
                         doctest::Contains("NoTrigger"), Error);
  }
}

TEST_CASE("classify: reference three-emotion scenario") {
  const TableLM lm = table2_lm();
  const EmotionLexicon lex = table2_lexicon();
  const ClozeResult r = classify(table2_tweet(), lm, lex);

  REQUIRE(r.emotions == std::vector<EmotionLabel>{EmotionLabel::Anger,
                                                  EmotionLabel::Joy,
                                                  EmotionLabel::Surprise});
  CHECK(r.per_emotion_max[0] == doctest::Approx(-21.9));
  CHECK(r.per_emotion_max[1] == doctest::Approx(-19.7));
  CHECK(r.per_emotion_max[2] == doctest::Approx(-27.6));
  CHECK(r.complexity == -19.7);  // exact: the max is the stored double
  CHECK(std::abs(r.prob_of(EmotionLabel::Joy) - 0.89995) < 1e-4);
  CHECK(std::abs(r.prob_of(EmotionLabel::Anger) - 0.09972) < 1e-4);
  CHECK(std::abs(r.prob_of(EmotionLabel::Surprise) - 0.00033) < 1e-4);
  CHECK(r.candidate("happier").shifted == 0.0);
  CHECK(std::abs(r.candidate("angrier").shifted - (-2.2)) < 1e-12);
  CHECK(std::abs(r.candidate("surprise").shifted - (-7.9)) < 1e-12);
  CHECK(predict_label(r) == EmotionLabel::Joy);

  double sum = 0;
  for (double p : r.probs) {
    CHECK(p > 0);
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("predict_label tie-breaking") {
  ClozeResult r;
  r.emotions = {EmotionLabel::Anger, EmotionLabel::Disgust, EmotionLabel::Fear,
                EmotionLabel::Joy, EmotionLabel::Sadness,
                EmotionLabel::Surprise};
  r.probs = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
  CHECK(predict_label(r) == EmotionLabel::Anger);
  r.probs = {0.1, 0.1, 0.1, 0.1, 0.1, 0.5};
  CHECK(predict_label(r) == EmotionLabel::Surprise);
}

namespace {

// LM whose scores shift by a constant; used for the invariance property.
class ShiftedLM : public LanguageModel {
 public:
  ShiftedLM(const LanguageModel& base, double shift)
      : base_(base), shift_(shift) {}
  double score(std::span<const std::string> tokens) const override {
    return base_.score(tokens) + shift_;
  }
  std::unique_ptr<LanguageModel> continued(
      const std::vector<std::vector<std::string>>&, double) const override {
    throw Error(ErrorCode::Config, "not trainable");
  }
  std::string backend_name() const override { return "shifted"; }
  uint64_t vocabulary_hash() const override { return 0; }
  void save(const std::string&) const override {}

 private:
  const LanguageModel& base_;
  double shift_;
};

}  // namespace

TEST_CASE("classify: scale-shift invariance") {
  const TableLM lm = table2_lm();
  const ShiftedLM shifted(lm, 3.25);
  const EmotionLexicon lex = table2_lexicon();
  const Tweet tw = table2_tweet();
  const ClozeResult a = classify(tw, lm, lex);
  const ClozeResult b = classify(tw, shifted, lex);
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    CHECK(a.probs[i] == doctest::Approx(b.probs[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < a.candidates.size(); ++i)
    CHECK(a.candidates[i].shifted ==
          doctest::Approx(b.candidates[i].shifted).epsilon(1e-12));
  CHECK(b.complexity == doctest::Approx(a.complexity + 3.25));
  CHECK(predict_label(a) == predict_label(b));
}

TEST_CASE("classify: candidate order within an emotion does not matter") {
  const TableLM lm = table2_lm();
  EmotionLexicon permuted;
  permuted.set_words(EmotionLabel::Anger, {"angrier", "angry"});
  permuted.set_words(EmotionLabel::Joy, {"happier", "happy"});
  permuted.set_words(EmotionLabel::Surprise, {"surprised", "surprise"});
  const ClozeResult a = classify(table2_tweet(), lm, table2_lexicon());
  const ClozeResult b = classify(table2_tweet(), lm, permuted);
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    CHECK(a.probs[i] == doctest::Approx(b.probs[i]).epsilon(1e-15));
  CHECK(a.complexity == b.complexity);
}

TEST_CASE("classify: the complexity candidate has shifted value zero") {
  const ClozeResult r =
      classify(table2_tweet(), table2_lm(), table2_lexicon());
  int zeros = 0;
  for (const auto& c : r.candidates) {
    CHECK(c.shifted <= 0.0);
    if (c.shifted == 0.0) ++zeros;
  }
  CHECK(zeros == 1);
}

TEST_CASE("classify: one-word lexicon degenerates to a direct softmax") {
  TableLM lm({
      {"i 'm happy than you .", -24.0},
      {"i 'm angry than you .", -26.0},
      {"i 'm surprised than you .", -25.0},
  });
  EmotionLexicon lex;
  lex.set_words(EmotionLabel::Anger, {"angry"});
  lex.set_words(EmotionLabel::Joy, {"happy"});
  lex.set_words(EmotionLabel::Surprise, {"surprised"});
  const ClozeResult r = classify(table2_tweet(), lm, lex);
  const auto direct = normalize_log_probs({-26.0, -24.0, -25.0});
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(r.probs[i] == doctest::Approx(direct[i]).epsilon(1e-15));
}

TEST_CASE("classify: n-gram backend matches a brute-force enumeration") {
  // 20-sentence synthetic corpus, full 44-word lexicon
  const EmotionLexicon& lex = EmotionLexicon::builtin();
  auto synth = testutil::make_synth_cloze(4, 1, lex);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& s : synth.lm_corpus) corpus.push_back(tokenize(s));
  Vocabulary vocab = build_vocab(corpus, 400);
  NgramOptions opts;
  opts.order = 3;
  opts.discount = 0.75;
  const NgramModel lm = NgramModel::train(corpus, vocab, opts);

  const Tweet& tw = synth.test_tweets.front();
  const ClozeResult got = classify(tw, lm, lex);

  // Independent brute force: score all candidates directly and apply the
  // formulas by hand.
  std::vector<double> maxima;
  double comp = -std::numeric_limits<double>::infinity();
  std::vector<double> all_scores;
  for (int e = 0; e < kNumEmotions; ++e) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& w : lex.words(EmotionLabel(e))) {
      auto cand = tw.tokens;
      cand[*tw.trigger_index] = w;
      const double lp = lm.score(cand);
      all_scores.push_back(lp);
      best = std::max(best, lp);
    }
    maxima.push_back(best);
    comp = std::max(comp, best);
  }
  double denom = 0;
  const double mx = *std::max_element(maxima.begin(), maxima.end());
  std::vector<double> expect;
  for (double m : maxima) denom += std::exp(m - mx);
  for (double m : maxima) expect.push_back(std::exp(m - mx) / denom);

  REQUIRE(got.probs.size() == 6);
  for (int e = 0; e < kNumEmotions; ++e) {
    CHECK(got.per_emotion_max[e] == doctest::Approx(maxima[e]).epsilon(1e-15));
    CHECK(got.probs[e] == doctest::Approx(expect[e]).epsilon(1e-12));
  }
  CHECK(got.complexity == comp);
  for (std::size_t i = 0; i < all_scores.size(); ++i)
    CHECK(got.candidates[i].shifted ==
          doctest::Approx(all_scores[i] - comp).epsilon(1e-12));
}
