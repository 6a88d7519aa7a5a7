#include <gtest/gtest.h>

#include <cstdint>
#include <set>
#include <vector>

#include "vesper/signal.hpp"

namespace {

using namespace vesper;
using namespace vesper::signal;

// GF(2) polynomials as bit masks; bit i is the x^i coefficient.
std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p, int deg) {
  std::uint64_t r = 0;
  while (b) {
    if (b & 1) r ^= a;
    b >>= 1;
    a <<= 1;
    if (a >> deg & 1) a ^= p;
  }
  return r;
}

std::uint64_t powmod_x(std::uint64_t e, std::uint64_t p, int deg) {
  std::uint64_t result = 1, base = 2;
  while (e) {
    if (e & 1) result = mulmod(result, base, p, deg);
    base = mulmod(base, base, p, deg);
    e >>= 1;
  }
  return result;
}

std::vector<std::uint64_t> prime_factors(std::uint64_t n) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t q = 2; q * q <= n; ++q) {
    if (n % q == 0) {
      out.push_back(q);
      while (n % q == 0) n /= q;
    }
  }
  if (n > 1) out.push_back(n);
  return out;
}

// x has multiplicative order 2^m - 1 modulo the characteristic polynomial.
bool primitive(int m, std::span<const int> taps) {
  std::uint64_t p = (std::uint64_t{1} << m) | 1;
  for (int t : taps) p |= std::uint64_t{1} << t;
  const std::uint64_t order = (std::uint64_t{1} << m) - 1;
  if (powmod_x(order, p, m) != 1) return false;
  for (auto q : prime_factors(order)) {
    if (powmod_x(order / q, p, m) == 1) return false;
  }
  return true;
}

TEST(Mls, HandSteppedFourRegisters) {
  const auto s = generate_mls_from_state(4, 0b0001);
  const std::vector<bool> expected = {1, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0, 1, 1, 0, 0};
  EXPECT_EQ(s.bits, expected);
  EXPECT_EQ(s.ones(), 8u);
}

TEST(Mls, EveryTapSetIsPrimitive) {
  for (int m = kMinRegisters; m <= kMaxRegisters; ++m) {
    EXPECT_TRUE(primitive(m, feedback_taps(m))) << "m=" << m;
  }
}

TEST(Mls, OracleRejectsKnownNonPrimitive) {
  const int taps[] = {6};
  EXPECT_FALSE(primitive(10, taps));
}

TEST(Mls, PeriodAndBalance) {
  for (int m = 2; m <= 12; ++m) {
    const auto s = generate_mls_from_state(m, 1);
    const auto n = mls_length(m);
    ASSERT_EQ(s.size(), n);
    EXPECT_EQ(s.ones(), std::size_t{1} << (m - 1));
    // All m-bit windows of the cyclic sequence are distinct and nonzero.
    std::set<std::uint64_t> windows;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t w = 0;
      for (int j = 0; j < m; ++j) w |= std::uint64_t{s.bits[(i + j) % n]} << j;
      EXPECT_NE(w, 0u);
      windows.insert(w);
    }
    EXPECT_EQ(windows.size(), n) << "m=" << m;
  }
}

TEST(Mls, AnySeedIsAShiftOfTheSameSequence) {
  const auto a = generate_mls_from_state(7, 1);
  SeededRandom rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = generate_mls(7, rng);
    ASSERT_NE(b.seed, 0u);
    bool found = false;
    for (std::size_t shift = 0; shift < a.size() && !found; ++shift) {
      bool ok = true;
      for (std::size_t i = 0; i < a.size() && ok; ++i) ok = a.bits[(i + shift) % a.size()] == b.bits[i];
      found = ok;
    }
    EXPECT_TRUE(found);
  }
}

TEST(Mls, SpectrallyFlat) {
  for (int m = 2; m <= 14; ++m) {
    const auto r = spectral_flatness(generate_mls_from_state(m, 3));
    EXPECT_LT(r.max_relative_deviation, 1e-6) << "m=" << m;
    EXPECT_NEAR(r.mean_power, static_cast<double>(mls_length(m) + 1), 1e-6 * r.mean_power);
  }
}

TEST(Mls, ConstantSequenceIsNotFlat) {
  const auto r = spectral_flatness(std::vector<bool>(15, true));
  EXPECT_GT(r.max_relative_deviation, 1.0);
}

TEST(Mls, RejectsBadArguments) {
  EXPECT_THROW(generate_mls_from_state(1, 1), ParameterError);
  EXPECT_THROW(generate_mls_from_state(33, 1), ParameterError);
  EXPECT_THROW(generate_mls_from_state(5, 0), ParameterError);
  EXPECT_THROW(generate_mls_from_state(5, 32), ParameterError);  // masks to zero
}

TEST(Modulation, RoundTripAndLevels) {
  const auto s = generate_mls_from_state(5, 9);
  const auto x = modulate(s, 77, 1000.0);
  EXPECT_EQ(x.signal_id, 77);
  EXPECT_DOUBLE_EQ(x.rate_hz, 1000.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(x.sizes[i], s.bits[i] ? kLargeFrameBytes : kSmallFrameBytes);
  }
  EXPECT_EQ(demodulate(x), s.bits);
}

TEST(Modulation, DemodulateRejectsIntermediateSizes) {
  ExcitationSignal x;
  x.sizes = {42, 800, 1542};
  EXPECT_THROW(demodulate(x), ParameterError);
}

}  // namespace
