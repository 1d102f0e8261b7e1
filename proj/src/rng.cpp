#include "cdu/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "cdu/errors.hpp"

namespace cdu {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Fnv1a& Fnv1a::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= kPrime;
  }
  return *this;
}

Fnv1a& Fnv1a::u64(std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  return bytes(buf, 8);
}

Fnv1a& Fnv1a::f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

Fnv1a& Fnv1a::str(std::string_view s) { return bytes(s.data(), s.size()); }

std::uint64_t fnv1a64(std::string_view s) { return Fnv1a{}.str(s).digest(); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

SeededRng::SeededRng(std::uint64_t seed, std::string label)
    : seed_(seed),
      label_(std::move(label)),
      key_(mix64(seed ^ mix64(fnv1a64(label_) + kGolden))) {}

SeededRng SeededRng::child(std::string_view name) const {
  std::string sub = label_;
  sub += '/';
  sub += name;
  return SeededRng(seed_, std::move(sub));
}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  require(n > 0, "uniform_index: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace cdu
