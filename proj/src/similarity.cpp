#include "emo/similarity.hpp"

#include <unordered_map>

#include "emo/unicode.hpp"

namespace emo {

namespace {

struct Match {
  std::size_t a = 0, b = 0, size = 0;
};

// Longest matching block within a[alo,ahi) x b[blo,bhi), preferring the
// earliest start in a and then in b. b2j maps codepoint -> positions in b.
Match longest_match(const std::vector<uint32_t>& a, std::size_t alo,
                    std::size_t ahi,
                    const std::unordered_map<uint32_t, std::vector<std::size_t>>& b2j,
                    std::size_t blo, std::size_t bhi) {
  Match best{alo, blo, 0};
  std::unordered_map<std::size_t, std::size_t> j2len;
  std::unordered_map<std::size_t, std::size_t> newj2len;
  for (std::size_t i = alo; i < ahi; ++i) {
    newj2len.clear();
    auto it = b2j.find(a[i]);
    if (it != b2j.end()) {
      for (std::size_t j : it->second) {
        if (j < blo) continue;
        if (j >= bhi) break;
        std::size_t k = 1;
        if (j > 0) {
          auto prev = j2len.find(j - 1);
          if (prev != j2len.end()) k = prev->second + 1;
        }
        newj2len[j] = k;
        if (k > best.size) best = {i - k + 1, j - k + 1, k};
      }
    }
    std::swap(j2len, newj2len);
  }
  return best;
}

std::size_t matched_total(const std::vector<uint32_t>& a, std::size_t alo,
                          std::size_t ahi,
                          const std::unordered_map<uint32_t, std::vector<std::size_t>>& b2j,
                          std::size_t blo, std::size_t bhi) {
  if (alo >= ahi || blo >= bhi) return 0;
  const Match m = longest_match(a, alo, ahi, b2j, blo, bhi);
  if (m.size == 0) return 0;
  return m.size + matched_total(a, alo, m.a, b2j, blo, m.b) +
         matched_total(a, m.a + m.size, ahi, b2j, m.b + m.size, bhi);
}

}  // namespace

double similarity_cp(const std::vector<uint32_t>& a,
                     const std::vector<uint32_t>& b) {
  const std::size_t total = a.size() + b.size();
  if (total == 0) return 1.0;
  std::unordered_map<uint32_t, std::vector<std::size_t>> b2j;
  for (std::size_t j = 0; j < b.size(); ++j) b2j[b[j]].push_back(j);
  const std::size_t m = matched_total(a, 0, a.size(), b2j, 0, b.size());
  return 2.0 * static_cast<double>(m) / static_cast<double>(total);
}

double similarity(std::string_view a, std::string_view b) {
  return similarity_cp(decode_utf8(a), decode_utf8(b));
}

}  // namespace emo
