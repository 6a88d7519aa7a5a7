#include "vesper/signal.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <string>

#include "vesper/dft.hpp"

namespace vesper::signal {
namespace {

// Taps per register count. Every row is a primitive trinomial or pentanomial,
// verified by the primitivity oracle in the unit tests.
const std::array<std::vector<int>, kMaxRegisters + 1> kTaps = {{
    {},
    {},
    {1},             // 2
    {2},             // 3
    {3},             // 4
    {3},             // 5
    {5},             // 6
    {6},             // 7
    {7, 6, 1},       // 8
    {5},             // 9
    {7},             // 10
    {9},             // 11
    {11, 10, 4},     // 12
    {12, 11, 8},     // 13
    {13, 12, 2},     // 14
    {14},            // 15
    {15, 13, 4},     // 16
    {14},            // 17
    {11},            // 18
    {18, 17, 14},    // 19
    {17},            // 20
    {19},            // 21
    {21},            // 22
    {18},            // 23
    {23, 22, 17},    // 24
    {22},            // 25
    {25, 24, 20},    // 26
    {26, 25, 22},    // 27
    {25},            // 28
    {27},            // 29
    {29, 28, 7},     // 30
    {28},            // 31
    {31, 30, 10},    // 32
}};

void check_registers(int m) {
  if (m < kMinRegisters || m > kMaxRegisters) {
    throw ParameterError("register count must be in [2, 32], got " + std::to_string(m));
  }
}

std::uint64_t register_mask(int m) { return (std::uint64_t{1} << m) - 1; }

}  // namespace

std::span<const int> feedback_taps(int m) {
  check_registers(m);
  return kTaps[static_cast<std::size_t>(m)];
}

std::size_t MlsSequence::ones() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

std::uint64_t mls_length(int m) {
  check_registers(m);
  return register_mask(m);
}

MlsSequence generate_mls_from_state(int m, std::uint64_t state) {
  check_registers(m);
  state &= register_mask(m);
  if (state == 0) throw ParameterError("LFSR initial state must be nonzero");

  std::uint64_t tap_mask = 1;  // the s[n] term
  for (int t : kTaps[static_cast<std::size_t>(m)]) tap_mask |= std::uint64_t{1} << t;

  MlsSequence s;
  s.m = m;
  s.seed = state;
  const std::uint64_t n = mls_length(m);
  s.bits.resize(n);
  // Window holds s[n .. n+m-1], bit j = s[n+j].
  std::uint64_t window = state;
  for (std::uint64_t i = 0; i < n; ++i) {
    s.bits[i] = (window & 1U) != 0;
    const std::uint64_t feedback = std::popcount(window & tap_mask) & 1U;
    window = (window >> 1) | (feedback << (m - 1));
  }
  return s;
}

MlsSequence generate_mls(int m, RandomSource& seed_source) {
  check_registers(m);
  std::uint64_t state = 0;
  while (state == 0) state = seed_source.next_u64() & register_mask(m);
  return generate_mls_from_state(m, state);
}

ExcitationSignal modulate(const std::vector<bool>& bits, std::uint16_t signal_id,
                          double rate_hz) {
  ExcitationSignal x;
  x.signal_id = signal_id;
  x.rate_hz = rate_hz;
  x.sizes.reserve(bits.size());
  for (bool b : bits) x.sizes.push_back(b ? kLargeFrameBytes : kSmallFrameBytes);
  return x;
}

ExcitationSignal modulate(const MlsSequence& s, std::uint16_t signal_id, double rate_hz) {
  return modulate(s.bits, signal_id, rate_hz);
}

std::vector<bool> demodulate(const ExcitationSignal& x) {
  std::vector<bool> bits;
  bits.reserve(x.size());
  for (auto b : x.sizes) {
    if (b == kLargeFrameBytes) {
      bits.push_back(true);
    } else if (b == kSmallFrameBytes) {
      bits.push_back(false);
    } else {
      throw ParameterError("demodulate: frame size " + std::to_string(b) +
                           " is not a binary MLS level");
    }
  }
  return bits;
}

FlatnessReport spectral_flatness(const std::vector<bool>& bits) {
  if (bits.size() < 2) throw ParameterError("spectral_flatness: need at least 2 bits");
  std::vector<double> pm(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) pm[i] = bits[i] ? 1.0 : -1.0;
  const auto spec = features::dft(pm);

  FlatnessReport r;
  r.bins = spec.size() - 1;
  double sum = 0.0;
  for (std::size_t k = 1; k < spec.size(); ++k) sum += std::norm(spec[k]);
  r.mean_power = sum / static_cast<double>(r.bins);
  if (r.mean_power == 0.0) {
    r.max_relative_deviation = HUGE_VAL;
    return r;
  }
  for (std::size_t k = 1; k < spec.size(); ++k) {
    r.max_relative_deviation = std::max(
        r.max_relative_deviation, std::abs(std::norm(spec[k]) - r.mean_power) / r.mean_power);
  }
  return r;
}

}  // namespace vesper::signal
