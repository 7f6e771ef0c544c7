#ifndef EMO_SERIALIZE_HPP
#define EMO_SERIALIZE_HPP

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "emo/errors.hpp"

// Little-endian binary primitives for the model and checkpoint containers.

namespace emo::io {

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::Format, "truncated binary container");
  return v;
}

inline void write_u8(std::ostream& o, uint8_t v) { write_raw(o, v); }
inline void write_u16(std::ostream& o, uint16_t v) { write_raw(o, v); }
inline void write_u32(std::ostream& o, uint32_t v) { write_raw(o, v); }
inline void write_u64(std::ostream& o, uint64_t v) { write_raw(o, v); }
inline void write_i32(std::ostream& o, int32_t v) { write_raw(o, v); }
inline void write_f32(std::ostream& o, float v) { write_raw(o, v); }
inline void write_f64(std::ostream& o, double v) { write_raw(o, v); }

inline uint8_t read_u8(std::istream& i) { return read_raw<uint8_t>(i); }
inline uint16_t read_u16(std::istream& i) { return read_raw<uint16_t>(i); }
inline uint32_t read_u32(std::istream& i) { return read_raw<uint32_t>(i); }
inline uint64_t read_u64(std::istream& i) { return read_raw<uint64_t>(i); }
inline int32_t read_i32(std::istream& i) { return read_raw<int32_t>(i); }
inline float read_f32(std::istream& i) { return read_raw<float>(i); }
inline double read_f64(std::istream& i) { return read_raw<double>(i); }

inline void write_string(std::ostream& o, const std::string& s) {
  write_u32(o, static_cast<uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& i) {
  const uint32_t n = read_u32(i);
  std::string s(n, '\0');
  i.read(s.data(), n);
  if (!i) throw Error(ErrorCode::Format, "truncated binary container");
  return s;
}

inline void expect_magic(std::istream& in, const char* magic) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw Error(ErrorCode::Format,
                std::string("bad container magic, expected ") + magic);
}

}  // namespace emo::io

#endif
