#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cdu {

/// Incremental 64-bit FNV-1a. Used for stream keys, content hashes and
/// manifest fingerprints.
class Fnv1a {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  Fnv1a& bytes(const void* data, std::size_t n);
  Fnv1a& u64(std::uint64_t v);  // little-endian
  Fnv1a& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
  Fnv1a& f64(double v);         // IEEE-754 bits, little-endian
  Fnv1a& str(std::string_view s);
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

/// Counter-based generator keyed by (seed, label).
///
/// The key is derived from the root seed and the stream label; draw i is a
/// SplitMix64 finalizer applied to key + i * golden-gamma. Identical
/// (seed, label) pairs produce identical sequences, and differently labelled
/// streams are decorrelated by the key mix. Child streams are addressed by
/// appending "/<name>" to the label, so noise, batching and initialization can
/// be varied independently from one root seed.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::string label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t counter() const { return counter_; }

  SeededRng child(std::string_view name) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Unbiased uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal draw (Box-Muller; the sine branch is cached).
  double normal();

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cdu
