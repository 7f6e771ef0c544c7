#include <atomic>
#include <random>

#include "doctest.h"
#include "emo/remote.hpp"
#include "emo/textprep.hpp"

using namespace emo;

namespace {

double text_score(const std::string& t) {
  // deterministic per-text value for order checks
  double h = 0;
  for (char c : t) h = h * 1.3 + double(static_cast<unsigned char>(c)) / 97.0;
  return -1.0 - std::fmod(std::abs(h), 7.0);
}

}  // namespace

TEST_CASE("remote_score: stub round trip, batching, order") {
  std::atomic<int> requests{0};
  ScoreServer server([&](const std::vector<std::string>& texts) {
    ++requests;
    std::vector<double> out;
    for (const auto& t : texts) out.push_back(text_score(t));
    return out;
  });
  const int port = server.start(0);
  RemoteOptions opts;
  opts.endpoint = "127.0.0.1:" + std::to_string(port);
  opts.max_batch = 64;
  opts.retries = 2;
  opts.backoff_ms = 1;

  SUBCASE("constant echo example") {
    ScoreServer echo([](const std::vector<std::string>& texts) {
      return std::vector<double>(texts.size(), -1.0);
    });
    const int eport = echo.start(0);
    RemoteOptions eopts = opts;
    eopts.endpoint = "127.0.0.1:" + std::to_string(eport);
    const auto scores = remote_score(eopts, {"a", "b", "c"});
    CHECK(scores == std::vector<double>{-1.0, -1.0, -1.0});
    echo.stop();
  }

  SUBCASE("1000 texts with max batch 64 make 16 wire requests in order") {
    std::vector<std::string> texts;
    for (int i = 0; i < 1000; ++i) texts.push_back("t" + std::to_string(i));
    requests = 0;
    const auto scores = remote_score(opts, texts);
    CHECK(requests.load() == 16);
    REQUIRE(scores.size() == texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i)
      CHECK(scores[i] == doctest::Approx(text_score(texts[i])));
  }

  SUBCASE("order is preserved for many batch sizes") {
    std::mt19937_64 rng(3);
    for (const std::size_t mb : {1u, 3u, 7u, 50u}) {
      RemoteOptions o = opts;
      o.max_batch = mb;
      o.max_inflight = (mb == 7u) ? 3 : 1;  // exercise concurrency too
      const std::size_t n = 1 + rng() % 40;
      std::vector<std::string> texts;
      for (std::size_t i = 0; i < n; ++i)
        texts.push_back("x" + std::to_string(rng() % 1000));
      const auto scores = remote_score(o, texts);
      for (std::size_t i = 0; i < n; ++i)
        CHECK(scores[i] == doctest::Approx(text_score(texts[i])));
    }
  }

  SUBCASE("empty batch is an error") {
    CHECK_THROWS_WITH_AS(remote_score(opts, {}),
                         doctest::Contains("EmptyInput"), Error);
  }

  server.stop();
}

TEST_CASE("remote_score: connection failure after k retries") {
  RemoteOptions opts;
  opts.endpoint = "127.0.0.1:1";  // nothing listens there
  opts.retries = 2;
  opts.backoff_ms = 1;
  opts.timeout_s = 1;
  try {
    remote_score(opts, {"a", "b"});
    FAIL("expected a connection error");
  } catch (const RemoteScoreError& e) {
    CHECK(e.code() == ErrorCode::Connect);
    CHECK(e.first_index() == 0);
    CHECK(e.last_index() == 2);
    CHECK(std::string(e.what()).find("2 attempts") != std::string::npos);
  }
}

TEST_CASE("remote_score: length mismatch is a protocol error") {
  ScoreServer bad([](const std::vector<std::string>& texts) {
    return std::vector<double>(texts.size() + 1, -1.0);
  });
  const int port = bad.start(0);
  RemoteOptions opts;
  opts.endpoint = "http://127.0.0.1:" + std::to_string(port);
  opts.retries = 1;
  opts.backoff_ms = 1;
  try {
    remote_score(opts, {"a"});
    FAIL("expected a protocol error");
  } catch (const RemoteScoreError& e) {
    CHECK(e.code() == ErrorCode::Protocol);
  }
  bad.stop();
}

TEST_CASE("RemoteLM backend joins tokens and batches") {
  ScoreServer server([](const std::vector<std::string>& texts) {
    std::vector<double> out;
    for (const auto& t : texts) out.push_back(-double(t.size()));
    return out;
  });
  const int port = server.start(0);
  RemoteOptions opts;
  opts.endpoint = "127.0.0.1:" + std::to_string(port);
  RemoteLM lm(opts);
  CHECK(lm.score(tokenize("ab cd")) == doctest::Approx(-5.0));  // "ab cd"
  const auto scores = lm.score_batch({tokenize("a"), tokenize("a b")});
  CHECK(scores[0] == doctest::Approx(-1.0));
  CHECK(scores[1] == doctest::Approx(-3.0));
  CHECK_THROWS_AS(lm.continued({}, 1.0), Error);
  server.stop();
}
