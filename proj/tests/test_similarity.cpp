#include <random>
#include <string>

#include "doctest.h"
#include "emo/similarity.hpp"
#include "emo/unicode.hpp"

using namespace emo;

namespace {

// Independent oracle: exhaustive longest-matching-block search (all i,j,k
// triples, longest first, earliest in a then in b) with the same recursion.
std::size_t oracle_longest(const std::vector<uint32_t>& a, std::size_t alo,
                           std::size_t ahi, const std::vector<uint32_t>& b,
                           std::size_t blo, std::size_t bhi, std::size_t& oi,
                           std::size_t& oj) {
  std::size_t best = 0;
  oi = alo;
  oj = blo;
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      std::size_t k = 0;
      while (i + k < ahi && j + k < bhi && a[i + k] == b[j + k]) ++k;
      if (k > best) {
        best = k;
        oi = i;
        oj = j;
      }
    }
  }
  return best;
}

std::size_t oracle_matched(const std::vector<uint32_t>& a, std::size_t alo,
                           std::size_t ahi, const std::vector<uint32_t>& b,
                           std::size_t blo, std::size_t bhi) {
  std::size_t i, j;
  const std::size_t k = oracle_longest(a, alo, ahi, b, blo, bhi, i, j);
  if (k == 0) return 0;
  return k + oracle_matched(a, alo, i, b, blo, j) +
         oracle_matched(a, i + k, ahi, b, j + k, bhi);
}

double oracle_ratio(const std::string& sa, const std::string& sb) {
  const auto a = decode_utf8(sa), b = decode_utf8(sb);
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * double(oracle_matched(a, 0, a.size(), b, 0, b.size())) /
         double(a.size() + b.size());
}

}  // namespace

TEST_CASE("similarity: fixed examples") {
  CHECK(similarity("abc", "abc") == doctest::Approx(1.0));
  CHECK(similarity("abcd", "bcde") == doctest::Approx(0.75));
  CHECK(similarity("a", "b") == doctest::Approx(0.0));
  CHECK(similarity("", "") == doctest::Approx(1.0));
  CHECK(similarity("hello world", "hello worlds") ==
        doctest::Approx(22.0 / 23.0));
}

TEST_CASE("similarity: identity and symmetry") {
  std::mt19937_64 rng(11);
  const std::string alphabet = "abcde ";
  for (int it = 0; it < 200; ++it) {
    std::string a, b;
    for (std::size_t i = rng() % 12; i-- > 0;)
      a.push_back(alphabet[rng() % alphabet.size()]);
    for (std::size_t i = rng() % 12; i-- > 0;)
      b.push_back(alphabet[rng() % alphabet.size()]);
    if (!a.empty()) CHECK(similarity(a, a) == doctest::Approx(1.0));
    CHECK(similarity(a, b) == doctest::Approx(similarity(b, a)));
  }
}

TEST_CASE("similarity: matches the exhaustive oracle") {
  std::mt19937_64 rng(23);
  const std::string alphabet = "abcd";
  for (int it = 0; it < 500; ++it) {
    std::string a, b;
    for (std::size_t i = rng() % 10; i-- > 0;)
      a.push_back(alphabet[rng() % alphabet.size()]);
    for (std::size_t i = rng() % 10; i-- > 0;)
      b.push_back(alphabet[rng() % alphabet.size()]);
    CHECK(similarity(a, b) == doctest::Approx(oracle_ratio(a, b)));
  }
}

TEST_CASE("similarity: unicode operates on codepoints") {
  // 7 codepoints per side, only the emoji differs
  const std::string a = "hi \xF0\x9F\x98\x80 yo";
  const std::string b = "hi \xF0\x9F\x98\x81 yo";
  CHECK(similarity(a, b) == doctest::Approx(12.0 / 14.0));
}
