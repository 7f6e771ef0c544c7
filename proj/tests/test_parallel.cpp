// The OpenMP kernels must match their serial references bit for bit; these
// are the tests that keep the serial implementations honest.

#include <random>

#include "doctest.h"
#include "emo/autodiff.hpp"
#include "emo/cloze.hpp"
#include "emo/kernels.hpp"
#include "emo/lm.hpp"
#include "emo/models.hpp"
#include "emo/textprep.hpp"
#include "testutil.hpp"

using namespace emo;

namespace {

std::vector<double> rand_vec(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("kernels: serial and parallel paths are bit-identical") {
  const std::size_t m = 37, k = 53, n = 29;
  const auto a = rand_vec(m * k, 1), b = rand_vec(k * n, 2);

  SUBCASE("gemm_nn / gemm_nt / gemm_tn") {
    std::vector<double> cs(m * n), cp(m * n);
    kern::gemm_nn(a.data(), b.data(), cs.data(), m, k, n, false, Exec::Serial);
    kern::gemm_nn(a.data(), b.data(), cp.data(), m, k, n, false,
                  Exec::Parallel);
    CHECK(cs == cp);

    const auto bt = rand_vec(n * k, 3);
    kern::gemm_nt(a.data(), bt.data(), cs.data(), m, k, n, false, Exec::Serial);
    kern::gemm_nt(a.data(), bt.data(), cp.data(), m, k, n, false,
                  Exec::Parallel);
    CHECK(cs == cp);

    std::vector<double> ds(k * n, 0.5), dp(k * n, 0.5);
    kern::gemm_tn(a.data(), rand_vec(m * n, 4).data(), ds.data(), m, k, n,
                  true, Exec::Serial);
    kern::gemm_tn(a.data(), rand_vec(m * n, 4).data(), dp.data(), m, k, n,
                  true, Exec::Parallel);
    CHECK(ds == dp);
  }

  SUBCASE("softmax_rows") {
    const auto x = rand_vec(40 * 6, 5);
    std::vector<double> ys(x.size()), yp(x.size());
    kern::softmax_rows(x.data(), ys.data(), 40, 6, Exec::Serial);
    kern::softmax_rows(x.data(), yp.data(), 40, 6, Exec::Parallel);
    CHECK(ys == yp);
  }

  SUBCASE("conv1d forward and backward") {
    const std::size_t len = 33, cin = 7, cout = 9, kw = 3;
    const auto x = rand_vec(len * cin, 6), w = rand_vec(kw * cin * cout, 7),
               bias = rand_vec(cout, 8), dy = rand_vec(len * cout, 9);
    std::vector<double> ys(len * cout), yp(len * cout);
    kern::conv1d_forward(x.data(), w.data(), bias.data(), ys.data(), len, cin,
                         cout, kw, Exec::Serial);
    kern::conv1d_forward(x.data(), w.data(), bias.data(), yp.data(), len, cin,
                         cout, kw, Exec::Parallel);
    CHECK(ys == yp);

    std::vector<double> dxs(len * cin, 0), dws(kw * cin * cout, 0),
        dbs(cout, 0);
    std::vector<double> dxp(len * cin, 0), dwp(kw * cin * cout, 0),
        dbp(cout, 0);
    kern::conv1d_backward(x.data(), w.data(), dy.data(), dxs.data(),
                          dws.data(), dbs.data(), len, cin, cout, kw,
                          Exec::Serial);
    kern::conv1d_backward(x.data(), w.data(), dy.data(), dxp.data(),
                          dwp.data(), dbp.data(), len, cin, cout, kw,
                          Exec::Parallel);
    CHECK(dxs == dxp);
    CHECK(dws == dwp);
    CHECK(dbs == dbp);
  }
}

TEST_CASE("adam_update: policy does not change the numbers") {
  auto vs = rand_vec(1000, 10);
  auto vp = vs;
  const auto g = rand_vec(1000, 11);
  ad::AdamSlots<double> ss, sp;
  ad::AdamConfig<double> cfg;
  for (int t = 0; t < 3; ++t) {
    ad::adam_update(vs, g, ss, cfg, t, "w", Exec::Serial);
    ad::adam_update(vp, g, sp, cfg, t, "w", Exec::Parallel);
  }
  CHECK(vs == vp);
}

TEST_CASE("classify_batch: serial equals parallel") {
  const EmotionLexicon& lex = EmotionLexicon::builtin();
  auto synth = testutil::make_synth_cloze(6, 3, lex);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& s : synth.lm_corpus) corpus.push_back(tokenize(s));
  Vocabulary vocab = build_vocab(corpus, 500);
  NgramOptions opts;
  const NgramModel lm = NgramModel::train(corpus, vocab, opts);

  const auto rs = classify_batch(synth.test_tweets, lm, lex, Exec::Serial);
  const auto rp = classify_batch(synth.test_tweets, lm, lex, Exec::Parallel);
  REQUIRE(rs.size() == rp.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    CHECK(rs[i].probs == rp[i].probs);
    CHECK(rs[i].complexity == rp[i].complexity);
  }
}

TEST_CASE("dedup_corpus: serial equals parallel") {
  std::mt19937_64 rng(12);
  std::vector<std::string> tweets;
  for (int i = 0; i < 80; ++i)
    tweets.push_back("tweet about topic " + std::to_string(rng() % 15) +
                     (rng() % 2 ? " with tail" : ""));
  CHECK(dedup_corpus(tweets, 0.85, Exec::Serial) ==
        dedup_corpus(tweets, 0.85, Exec::Parallel));
}

TEST_CASE("model forward: global policy does not change eval bits") {
  MiniAscConfig cfg;
  cfg.embedding_size = 6;
  cfg.lstm_hidden = 5;
  cfg.num_filters = 4;
  cfg.dense_size = 4;
  auto net = build_mini_asc<double>(cfg, 16, 3);
  auto ex = testutil::make_synth_token_set(6, 16, 1, 9);
  std::vector<const TrainExample*> batch;
  for (const auto& e : ex) batch.push_back(&e);
  const auto schema = FeatureSchema::make(EmotionLexicon::builtin());

  set_batch_inputs(net.graph, net.io, schema, batch);
  set_default_exec(Exec::Serial);
  net.graph.forward(ad::Mode::Eval);
  const auto serial = net.graph.tensor(net.output).v;
  set_default_exec(Exec::Parallel);
  net.graph.forward(ad::Mode::Eval);
  const auto parallel = net.graph.tensor(net.output).v;
  set_default_exec(Exec::Parallel);
  CHECK(serial == parallel);
}
