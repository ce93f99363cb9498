#pragma once

// Little-endian binary encoding helpers shared by all file formats.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace katana::io {

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("io: write failed");
}

inline void read_bytes(std::istream& in, void* p, size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw std::runtime_error(std::string("io: truncated input while reading ") + what);
}

inline void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  write_bytes(out, b, 4);
}

inline uint32_t read_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_bytes(in, b, 4, what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_i32(std::ostream& out, int32_t v) { write_u32(out, static_cast<uint32_t>(v)); }
inline int32_t read_i32(std::istream& in, const char* what) {
  return static_cast<int32_t>(read_u32(in, what));
}

inline void write_u64(std::ostream& out, uint64_t v) {
  write_u32(out, static_cast<uint32_t>(v));
  write_u32(out, static_cast<uint32_t>(v >> 32));
}

inline uint64_t read_u64(std::istream& in, const char* what) {
  const uint64_t lo = read_u32(in, what);
  const uint64_t hi = read_u32(in, what);
  return lo | (hi << 32);
}

inline void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in, const char* what) {
  const uint32_t bits = read_u32(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline double read_f64(std::istream& in, const char* what) {
  const uint64_t bits = read_u64(in, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

// Bulk f32 vectors; x86-little-endian fast path would be memcpy, but the
// element loop keeps the format portable and is not on any hot path.
inline void write_f32_vec(std::ostream& out, const std::vector<float>& v) {
  for (float x : v) write_f32(out, x);
}

inline void read_f32_vec(std::istream& in, std::vector<float>& v, size_t n, const char* what) {
  v.resize(n);
  for (size_t i = 0; i < n; ++i) v[i] = read_f32(in, what);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in, const char* what) {
  const uint32_t n = read_u32(in, what);
  if (n > (1u << 20)) throw std::runtime_error(std::string("io: unreasonable string size in ") + what);
  std::string s(n, '\0');
  read_bytes(in, s.data(), n, what);
  return s;
}

inline void expect_magic(std::istream& in, const char magic[4], const char* format) {
  char got[4];
  read_bytes(in, got, 4, format);
  if (std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error(std::string(format) + ": bad magic bytes (expected '" +
                             std::string(magic, 4) + "', got '" + std::string(got, 4) + "')");
}

inline void expect_version(std::istream& in, uint32_t version, const char* format) {
  const uint32_t got = read_u32(in, format);
  if (got != version)
    throw std::runtime_error(std::string(format) + ": unsupported version " + std::to_string(got) +
                             " (expected " + std::to_string(version) + ")");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open '" + path + "' for reading");
  return in;
}

}  // namespace katana::io
