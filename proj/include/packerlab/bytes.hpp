#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace packerlab {

using ByteSpan = std::span<const std::uint8_t>;
using Bytes = std::vector<std::uint8_t>;

// Little-endian raw decoders. Callers bounds-check.
inline std::uint16_t u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint64_t u64le(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(u32le(p)) | (static_cast<std::uint64_t>(u32le(p + 4)) << 32);
}

inline bool in_bounds(ByteSpan data, std::uint64_t off, std::uint64_t len) {
  return off <= data.size() && len <= data.size() - off;
}

inline void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }
inline void put_u16le(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32le(Bytes& out, std::uint32_t v) {
  put_u16le(out, static_cast<std::uint16_t>(v));
  put_u16le(out, static_cast<std::uint16_t>(v >> 16));
}
inline void put_u64le(Bytes& out, std::uint64_t v) {
  put_u32le(out, static_cast<std::uint32_t>(v));
  put_u32le(out, static_cast<std::uint32_t>(v >> 32));
}
inline void put_bytes(Bytes& out, ByteSpan b) { out.insert(out.end(), b.begin(), b.end()); }
inline void pad_to(Bytes& out, std::size_t boundary, std::uint8_t fill = 0) {
  while (out.size() % boundary != 0) out.push_back(fill);
}

constexpr std::uint64_t align_up(std::uint64_t v, std::uint64_t a) {
  return a == 0 ? v : (v + a - 1) / a * a;
}

std::string to_hex(ByteSpan data);
std::string sha256_hex(ByteSpan data);

// splitmix64; the deterministic seed expander used everywhere randomness is needed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Small deterministic RNG (xorshift64*), portable across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    state_ = splitmix64(s);
    if (state_ == 0) state_ = 0x2545F4914F6CDD1DULL;
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  // Uniform in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  std::uint8_t byte() { return static_cast<std::uint8_t>(next() & 0xFF); }

  Bytes bytes(std::size_t n) {
    Bytes out(n);
    for (auto& b : out) b = byte();
    return out;
  }

 private:
  std::uint64_t state_;
};

}  // namespace packerlab
