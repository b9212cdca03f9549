#pragma once

// Unicode and hashing helpers used across modules.

#include <cstdint>
#include <string>
#include <string_view>

namespace scrkit::text {

/// NFC-normalize a UTF-8 string. Invalid sequences are replaced with U+FFFD.
std::string nfc(std::string_view utf8);

/// NFC, Unicode case folding, whitespace runs collapsed to one space, and
/// leading/trailing whitespace dropped. Returns code points.
std::u32string normalize_for_comparison(std::string_view utf8);

std::string to_utf8(std::u32string_view cps);

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

/// Stable 64-bit mix of a string (first 8 bytes of its SHA-256).
std::uint64_t stable_hash64(std::string_view bytes);

/// SplitMix64 finalizer; used to derive independent seeds from counters.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace scrkit::text
