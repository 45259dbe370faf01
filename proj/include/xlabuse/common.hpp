// Shared error types, stable hashing and seed derivation.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xlabuse {

inline constexpr std::string_view kVersion = "0.3.0";

/// Raised when inputs violate a documented invariant or precondition.
/// The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical procedure fails at run time (non-finite loss,
/// diverging projection). The CLI maps it to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Label : std::uint8_t { non_abusive = 0, abusive = 1 };
enum class Split : std::uint8_t { train, test };

inline std::string to_string(Label l) {
  return l == Label::abusive ? "abusive" : "non_abusive";
}
inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Label parse_label(std::string_view s) {
  if (s == "abusive") return Label::abusive;
  if (s == "non_abusive") return Label::non_abusive;
  throw ValidationError("unknown label '" + std::string(s) + "'");
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

// FNV-1a, 64 bit. Used wherever a hash has to be stable across runs and
// platforms (seed derivation, config digests).
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for a named sub-stream. Depends only on (seed, tag), so adding
/// or reordering sibling streams never perturbs an existing one.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ fnv1a(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace xlabuse
