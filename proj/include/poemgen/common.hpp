#pragma once

// Shared primitives: token ids, reserved sentinels, error taxonomy, seeded
// randomness, and binary/text io helpers used by every module.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace poemgen {

using TokenId = std::int32_t;

enum class TokenMode { word, character };
enum class Direction { forward, backward };

inline const char* to_string(TokenMode m) {
  return m == TokenMode::word ? "word" : "char";
}
inline const char* to_string(Direction d) {
  return d == Direction::forward ? "forward" : "backward";
}

// Reserved vocabulary slots. Every vocabulary places these at fixed ids.
inline constexpr TokenId kStartId = 0;
inline constexpr TokenId kEndId = 1;
inline constexpr TokenId kUnkId = 2;
inline constexpr int kNumReserved = 3;

inline constexpr std::string_view kStartText = "<s>";
inline constexpr std::string_view kEndText = "</s>";
inline constexpr std::string_view kUnkText = "<unk>";

inline bool is_reserved(TokenId id) { return id >= 0 && id < kNumReserved; }

// ============================================================================
// Errors
// ============================================================================

// One class per failure stage; the CLI maps kinds to distinct exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { config, ingest, train, generate, io, contract };

  Error(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(Kind::config, m) {}
};
struct IngestError : Error {
  explicit IngestError(const std::string& m) : Error(Kind::ingest, m) {}
};
struct TrainError : Error {
  explicit TrainError(const std::string& m) : Error(Kind::train, m) {}
};
struct GenerateError : Error {
  explicit GenerateError(const std::string& m) : Error(Kind::generate, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(Kind::io, m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(Kind::contract, m) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// ============================================================================
// Randomness
// ============================================================================

// mt19937_64 has a fully specified sequence; the double conversion below
// avoids std::uniform_real_distribution, whose output is
// implementation-defined, so seeded runs reproduce across platforms.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Derives an independent stream seed from a base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
  return fnv1a(s.data(), s.size());
}

// ============================================================================
// Binary io (explicit little-endian, so model files are portable)
// ============================================================================

namespace io {

inline void write_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void write_i64(std::ostream& out, std::int64_t v) {
  write_u64(out, static_cast<std::uint64_t>(v));
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline void write_string(std::ostream& out, std::string_view s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint8_t read_u8(std::istream& in) {
  int c = in.get();
  if (c == std::char_traits<char>::eof()) throw IoError("unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& in) {
  char b[4];
  if (!in.read(b, 4)) throw IoError("unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  char b[8];
  if (!in.read(b, 8)) throw IoError("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

inline std::int64_t read_i64(std::istream& in) {
  return static_cast<std::int64_t>(read_u64(in));
}

inline double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string read_string(std::istream& in) {
  std::uint64_t n = read_u64(in);
  if (n > (1ull << 30)) throw IoError("corrupt string length");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw IoError("unexpected end of file");
  return s;
}

}  // namespace io

}  // namespace poemgen
