#ifndef EMO_SIMILARITY_HPP
#define EMO_SIMILARITY_HPP

#include <cstdint>
#include <string_view>
#include <vector>

namespace emo {

// Ratcliff/Obershelp similarity: ratio = 2*M / (|a| + |b|) where M is the
// total size of the recursively matched longest common blocks. Ties in the
// longest-block search break toward the earliest start in a, then in b.
// Operates on unicode codepoints. Two empty strings have ratio 1.0.
double similarity(std::string_view a, std::string_view b);

// Same, over pre-decoded codepoints (used by dedup to avoid re-decoding).
double similarity_cp(const std::vector<uint32_t>& a,
                     const std::vector<uint32_t>& b);

}  // namespace emo

#endif
