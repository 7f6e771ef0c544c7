#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "emo/cloze.hpp"
#include "emo/lm.hpp"
#include "emo/neural_lm.hpp"
#include "testutil.hpp"

using namespace emo;

namespace {

Vocabulary tiny_vocab(const std::vector<std::string>& tokens) {
  std::vector<std::vector<std::string>> corpus = {tokens};
  return build_vocab(corpus, tokens.size() + 16);
}

std::vector<std::vector<std::string>> toks(
    const std::vector<std::string>& sentences) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : sentences) out.push_back(tokenize(s));
  return out;
}

}  // namespace

TEST_CASE("ngram: unsmoothed ML bigram matches hand counts") {
  Vocabulary v = tiny_vocab({"a", "b", "c"});
  NgramOptions opts;
  opts.order = 2;
  opts.discount = 0.0;  // exact maximum likelihood
  NgramModel m = NgramModel::train(toks({"a b", "a c"}), v, opts);
  // p(a|BOS)=1, p(b|a)=1/2, p(EOS|b)=1
  CHECK(m.score(tokenize("a b")) == doctest::Approx(std::log(0.5)));
  CHECK(m.score(tokenize("a b")) == m.score(tokenize("a b")));  // determinism
}

TEST_CASE("ngram: uniform floor over |V|=4 without EOS") {
  NgramOptions opts;
  opts.order = 2;
  opts.discount = 0.5;
  opts.include_eos = false;
  NgramModel m(4, opts);  // raw-id mode, no counts
  const std::vector<int> two = {0, 1};
  CHECK(m.score_ids(two) == doctest::Approx(2.0 * std::log(0.25)));
}

TEST_CASE("ngram: absolute discounting formula on a hand table") {
  Vocabulary v = tiny_vocab({"a", "b"});
  NgramOptions opts;
  opts.order = 2;
  opts.discount = 0.5;
  NgramModel m = NgramModel::train(toks({"a b"}), v, opts);
  // events: |V| tokens + EOS
  const double E = m.event_count();
  // unigram table from "a b": {a:1, b:1, EOS:1}, N=3, distinct=3
  auto p_uni = [&](double cnt) {
    return std::max(cnt - 0.5, 0.0) / 3.0 + (0.5 * 3.0 / 3.0) * (1.0 / E);
  };
  const int a = v.lookup("a"), b = v.lookup("b");
  const std::vector<int> ctx_a = {a};
  // p(b|a) = (1-d)/1 + d*1/1 * p_uni(b)
  CHECK(m.cond_prob(b, ctx_a) == doctest::Approx(0.5 + 0.5 * p_uni(1)));
  // unseen word under seen context backs off through lambda only
  const int rare = v.rare_id();
  CHECK(m.cond_prob(rare, ctx_a) == doctest::Approx(0.5 * p_uni(0)));
}

TEST_CASE("ngram: conditionals sum to one over the event space") {
  std::mt19937_64 rng(31);
  std::vector<std::string> words;
  for (int i = 0; i < 50; ++i) words.push_back("w" + std::to_string(i));
  std::vector<std::vector<std::string>> corpus;
  for (int s = 0; s < 200; ++s) {
    std::vector<std::string> sent;
    for (int t = int(rng() % 10) + 1; t-- > 0;)
      sent.push_back(words[rng() % words.size()]);
    corpus.push_back(sent);
  }
  Vocabulary v = build_vocab(corpus, 70);
  NgramOptions opts;
  opts.order = 3;
  opts.discount = 0.75;
  NgramModel m = NgramModel::train(corpus, v, opts);

  for (int it = 0; it < 20; ++it) {
    // mix of seen and unseen contexts
    std::vector<int> ctx = {int(rng() % v.size()), int(rng() % v.size())};
    double sum = 0;
    for (int w = 0; w < m.event_count(); ++w) sum += m.cond_prob(w, ctx);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("ngram: score decomposes into stepwise conditionals") {
  Vocabulary v = tiny_vocab({"x", "y", "z"});
  NgramOptions opts;
  opts.order = 3;
  opts.discount = 0.6;
  NgramModel m = NgramModel::train(toks({"x y z", "x z", "y y x"}), v, opts);
  const std::vector<std::string> sent = tokenize("x y x z");
  std::vector<int> ids;
  for (const auto& t : sent) ids.push_back(v.lookup(t));

  std::vector<int> ev;
  for (int k = 0; k + 1 < opts.order; ++k) ev.push_back(m.bos_id());
  ev.insert(ev.end(), ids.begin(), ids.end());
  ev.push_back(m.eos_id());
  double sum = 0;
  for (std::size_t pos = opts.order - 1; pos < ev.size(); ++pos) {
    std::span<const int> ctx(ev.data() + pos - (opts.order - 1),
                             std::size_t(opts.order - 1));
    sum += std::log(m.cond_prob(ev[pos], ctx));
  }
  CHECK(m.score(sent) == doctest::Approx(sum).epsilon(1e-10));
}

TEST_CASE("ngram: evidence monotonicity") {
  std::mt19937_64 rng(47);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
  for (int it = 0; it < 40; ++it) {
    std::vector<std::vector<std::string>> corpus;
    for (int s = int(rng() % 6) + 1; s-- > 0;) {
      std::vector<std::string> sent;
      for (int t = int(rng() % 5) + 1; t-- > 0;)
        sent.push_back(words[rng() % words.size()]);
      corpus.push_back(sent);
    }
    std::vector<std::string> target;
    for (int t = int(rng() % 5) + 1; t-- > 0;)
      target.push_back(words[rng() % words.size()]);

    Vocabulary v = tiny_vocab(words);
    NgramOptions opts;
    opts.order = 2 + int(rng() % 2);
    opts.discount = 0.75;
    NgramModel before = NgramModel::train(corpus, v, opts);
    corpus.push_back(target);
    NgramModel after = NgramModel::train(corpus, v, opts);
    CHECK(after.score(target) >= before.score(target) - 1e-12);
  }
}

TEST_CASE("ngram: empty inputs") {
  Vocabulary v = tiny_vocab({"a"});
  CHECK_THROWS_WITH_AS(NgramModel::train({}, v, {}),
                       doctest::Contains("EmptyCorpus"), Error);
  NgramOptions opts;
  NgramModel m(4, opts);
  CHECK_THROWS_WITH_AS(m.score_ids(std::vector<int>{}),
                       doctest::Contains("EmptyInput"), Error);
  CHECK_THROWS_AS(train_ngram(toks({"a"}), v, 0, 0.5), Error);
  CHECK_THROWS_AS(train_ngram(toks({"a"}), v, 2, 1.0), Error);
}

TEST_CASE("continue_training: n-gram count deltas and weights") {
  Vocabulary v = tiny_vocab({"i", "was", "so", "happy", "angry", "today"});
  NgramOptions opts;
  opts.order = 2;
  opts.discount = 0.5;
  NgramModel base =
      NgramModel::train(toks({"i was so happy", "so angry today"}), v, opts);

  Tweet tw = testutil::make_tweet("1", "i was so [#TRIGGERWORD#] today",
                                  EmotionLabel::Joy);
  const EmotionLexicon& lex = EmotionLexicon::builtin();

  SUBCASE("weight zero is a no-op") {
    auto lm2 = continue_training(base, {tw}, {"happy"}, lex, 0.0);
    const auto sents = toks({"i was so happy today", "so angry today"});
    for (const auto& s : sents)
      CHECK(lm2->score(s) == doctest::Approx(base.score(s)).epsilon(1e-15));
  }
  SUBCASE("weight one adds exactly the substituted tweet's n-grams") {
    auto lm2p = continue_training(base, {tw}, {"happy"}, lex, 1.0);
    auto* lm2 = dynamic_cast<NgramModel*>(lm2p.get());
    REQUIRE(lm2 != nullptr);
    const std::vector<std::string> sub = tokenize("i was so happy today");
    // bigram counts along the substituted sentence grow by exactly 1
    std::vector<int> ids;
    for (const auto& t : sub) ids.push_back(v.lookup(t));
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const std::vector<int> ctx = {ids[i]};
      CHECK(lm2->count(ctx, ids[i + 1]) ==
            doctest::Approx(base.count(ctx, ids[i + 1]) + 1.0));
    }
    // an unrelated context is untouched
    const std::vector<int> angry_ctx = {v.lookup("angry")};
    CHECK(lm2->count(angry_ctx, v.lookup("today")) ==
          doctest::Approx(base.count(angry_ctx, v.lookup("today"))));
  }
  SUBCASE("LM2 raises the substituted tweet's score") {
    auto lm2 = continue_training(base, {tw}, {"happy"}, lex, 1.0);
    const std::vector<std::string> sub = tokenize("i was so happy today");
    CHECK(lm2->score(sub) > base.score(sub));
  }
  SUBCASE("unlabeled tweet is rejected") {
    Tweet bad = testutil::make_tweet("2", "i was [#TRIGGERWORD#]");
    CHECK_THROWS_WITH_AS(continue_training(base, {bad}, {"happy"}, lex, 1.0),
                         doctest::Contains("MissingLabel"), Error);
  }
  SUBCASE("replacement must come from the gold lexicon entry") {
    CHECK_THROWS_WITH_AS(continue_training(base, {tw}, {"angry"}, lex, 1.0),
                         doctest::Contains("BadReplacement"), Error);
  }
}

TEST_CASE("lm serialization: round trip and vocabulary hash check") {
  namespace fs = std::filesystem;
  Vocabulary v = tiny_vocab({"p", "q", "r"});
  NgramOptions opts;
  opts.order = 3;
  opts.discount = 0.7;
  NgramModel m = NgramModel::train(toks({"p q r", "q r", "r p"}), v, opts);
  const auto path = (fs::temp_directory_path() / "emo_lm.bin").string();
  m.save(path);

  auto loaded = load_lm(path, v);
  CHECK(loaded->backend_name() == "ngram");
  for (const auto& s : {"p q r", "r r r", "p p"})
    CHECK(loaded->score(tokenize(s)) == doctest::Approx(m.score(tokenize(s))));

  Vocabulary other = tiny_vocab({"p", "q", "r", "s"});
  CHECK_THROWS_WITH_AS(load_lm(path, other), doctest::Contains("vocabulary"),
                       Error);
}

TEST_CASE("table LM: lookups") {
  TableLM t({{"a b", -1.5}, {"c", -2.0}});
  CHECK(t.score(tokenize("a b")) == doctest::Approx(-1.5));
  CHECK_THROWS_AS(t.score(tokenize("a z")), Error);
  CHECK_THROWS_AS(t.continued({}, 1.0), Error);
}

TEST_CASE("neural LM: per-step distribution, paths agree, continuation") {
  Vocabulary v = tiny_vocab({"a", "b", "c"});
  NeuralLMConfig cfg;
  cfg.embed_dim = 6;
  cfg.hidden = 8;
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.seed = 99;
  NeuralLM lm = NeuralLM::train(toks({"a b c", "a b", "b c", "a c"}), v, cfg);

  SUBCASE("next-token distribution sums to one") {
    const std::vector<int> prefix = {lm.bos_row(), v.lookup("a")};
    const auto dist = lm.step_distribution(prefix);
    double sum = 0;
    for (double p : dist) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("graph forward and the stateless evaluator agree") {
    const std::vector<std::string> sent = tokenize("a b c");
    std::vector<int> ids;
    for (const auto& t : sent) ids.push_back(v.lookup(t));
    // graph path
    auto& g = lm.graph();
    const std::size_t L = ids.size() + 1;
    ad::IdMatrix im{1, L, {}};
    im.v = {lm.bos_row()};
    for (int id : ids) im.v.push_back(id);
    g.set_ids("ids", im);
    g.set_input("bits", ad::Tensor<double>({1, L}));
    g.set_lengths("lens", {int(L)});
    g.forward(ad::Mode::Eval);
    const auto& probs = g.tensor("probs");
    const std::size_t K = probs.last_dim();
    double graph_lp = 0;
    for (std::size_t j = 0; j < ids.size(); ++j)
      graph_lp += std::log(probs.v[j * K + ids[j]]);
    graph_lp += std::log(probs.v[ids.size() * K + lm.eos_class()]);
    CHECK(lm.score(sent) == doctest::Approx(graph_lp).epsilon(1e-12));
  }
  SUBCASE("score is deterministic") {
    CHECK(lm.score(tokenize("a b")) == lm.score(tokenize("a b")));
  }
  SUBCASE("continued with weight zero scores identically") {
    auto lm2 = lm.continued(toks({"a b"}), 0.0);
    CHECK(lm2->score(tokenize("a b c")) ==
          doctest::Approx(lm.score(tokenize("a b c"))).epsilon(1e-15));
  }
  SUBCASE("training moves probability toward the data") {
    auto lm2p = lm.continued(toks({"a b a b a b"}), 1.0);
    // more epochs on a repeated sentence should not lower its score much;
    // sanity: the result is still a proper model
    const double s = lm2p->score(tokenize("a b a b a b"));
    CHECK(std::isfinite(s));
    CHECK(s <= 0.0);
  }
  SUBCASE("serialization round trip") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "emo_nlm.bin").string();
    lm.save(path);
    auto loaded = load_lm(path, v);
    CHECK(loaded->backend_name() == "neural");
    CHECK(loaded->score(tokenize("a b c")) ==
          doctest::Approx(lm.score(tokenize("a b c"))).epsilon(1e-15));
  }
}
