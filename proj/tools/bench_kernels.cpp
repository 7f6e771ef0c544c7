// Times the serial and OpenMP paths of the hot kernels and batch drivers.
// The two paths are bit-identical by construction; this tool reports the
// speedup on the current machine.
//
//   emocloze_bench [repeats]

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "emo/cloze.hpp"
#include "emo/kernels.hpp"
#include "emo/lm.hpp"
#include "emo/parallel.hpp"
#include "emo/textprep.hpp"

using namespace emo;

namespace {

double run_ms(int repeats, const std::function<void()>& fn) {
  double best = 1e100;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best,
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-24s serial %9.2f ms   omp %9.2f ms   speedup %.2fx\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms);
}

std::vector<std::string> synth_corpus(std::size_t n, std::mt19937_64& rng) {
  const std::vector<std::string> subjects = {"i", "we", "they", "you"};
  const std::vector<std::string> verbs = {"saw", "heard", "found", "made",
                                          "got", "liked"};
  const std::vector<std::string> objects = {
      "the game",   "a storm",   "the party", "my phone", "the test",
      "the traffic", "a present", "the photo", "the trip", "the meeting"};
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(subjects[rng() % subjects.size()] + " " +
                  verbs[rng() % verbs.size()] + " " +
                  objects[rng() % objects.size()] + " today number " +
                  std::to_string(rng() % 50));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
  std::printf("threads available: %d\n\n", effective_threads());
  std::mt19937_64 rng(7);

  {  // dense matmul, the LSTM/dense workhorse
    const std::size_t m = 256, k = 512, n = 256;
    std::vector<double> a(m * k), b(k * n), c(m * n);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const double ts = run_ms(repeats, [&] {
      kern::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false, Exec::Serial);
    });
    const double tp = run_ms(repeats, [&] {
      kern::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false,
                    Exec::Parallel);
    });
    report("gemm 256x512x256", ts, tp);
  }

  {  // conv1d over a long sequence
    const std::size_t len = 2048, cin = 128, cout = 128, kw = 3;
    std::vector<double> x(len * cin), w(kw * cin * cout), bias(cout),
        y(len * cout);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : x) v = u(rng);
    for (auto& v : w) v = u(rng);
    const double ts = run_ms(repeats, [&] {
      kern::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), len, cin,
                           cout, kw, Exec::Serial);
    });
    const double tp = run_ms(repeats, [&] {
      kern::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), len, cin,
                           cout, kw, Exec::Parallel);
    });
    report("conv1d 2048x128x128", ts, tp);
  }

  {  // batch cloze classification with an n-gram backend
    const auto corpus_text = synth_corpus(4000, rng);
    std::vector<std::vector<std::string>> corpus;
    for (const auto& s : corpus_text) corpus.push_back(tokenize(s));
    Vocabulary vocab = build_vocab(corpus, 5000);
    NgramOptions opts;
    const NgramModel lm = NgramModel::train(corpus, vocab, opts);

    std::vector<Tweet> tweets;
    for (int i = 0; i < 200; ++i) {
      Tweet t;
      t.id = std::to_string(i);
      t.raw_text = "i was [#TRIGGERWORD#] about the test";
      auto tok = tokenize_ex(t.raw_text);
      t.tokens = tok.tokens;
      t.trigger_index = tok.trigger_positions.front();
      tweets.push_back(std::move(t));
    }
    const EmotionLexicon& lex = EmotionLexicon::builtin();
    const double ts = run_ms(
        repeats, [&] { classify_batch(tweets, lm, lex, Exec::Serial); });
    const double tp = run_ms(
        repeats, [&] { classify_batch(tweets, lm, lex, Exec::Parallel); });
    report("cloze 200 tweets x44", ts, tp);
  }

  {  // near-duplicate scan
    auto corpus = synth_corpus(1200, rng);
    const double ts =
        run_ms(repeats, [&] { dedup_corpus(corpus, 0.9, Exec::Serial); });
    const double tp =
        run_ms(repeats, [&] { dedup_corpus(corpus, 0.9, Exec::Parallel); });
    report("dedup 1200 tweets", ts, tp);
  }

  return 0;
}
