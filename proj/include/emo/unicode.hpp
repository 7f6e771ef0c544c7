#ifndef EMO_UNICODE_HPP
#define EMO_UNICODE_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace emo {

// Minimal UTF-8 handling for the tokenizer and the character-level
// similarity ratio. Invalid bytes decode as one codepoint each (0xFFFD is
// not substituted so round-trips stay lossless at the token level).

std::vector<uint32_t> decode_utf8(std::string_view s);
void append_utf8(std::string& out, uint32_t cp);
std::string encode_utf8(const std::vector<uint32_t>& cps);

inline bool cp_is_space(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' ||
         cp == '\f' || cp == 0xA0 || (cp >= 0x2000 && cp <= 0x200A) ||
         cp == 0x202F || cp == 0x3000;
}

// Emoji and pictographs get isolated into single tokens.
inline bool cp_is_emoji(uint32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF) ||  // pictographs, emoticons, symbols
         (cp >= 0x2600 && cp <= 0x27BF) ||    // misc symbols, dingbats
         (cp >= 0x2B00 && cp <= 0x2BFF) ||    // arrows, stars
         cp == 0x2764 || cp == 0xFE0F ||      // heart, variation selector
         (cp >= 0x1F1E6 && cp <= 0x1F1FF);    // regional indicators
}

inline bool cp_is_ascii_punct(uint32_t cp) {
  return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') ||
         (cp >= '[' && cp <= '`') || (cp >= '{' && cp <= '~');
}

inline uint32_t cp_to_lower(uint32_t cp) {
  return (cp >= 'A' && cp <= 'Z') ? cp + 32 : cp;
}

}  // namespace emo

#endif
