#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vesper/common.hpp"

/// Maximal-length sequence generation and the payload-size modulation that
/// turns a bit sequence into an ICMP excitation signal.
namespace vesper::signal {

inline constexpr int kMinRegisters = 2;
inline constexpr int kMaxRegisters = 32;

/// Ethernet + IPv4 + ICMP headers with no payload.
inline constexpr std::uint32_t kSmallFrameBytes = 42;
/// Same headers plus a 1500-byte payload.
inline constexpr std::uint32_t kLargeFrameBytes = 1542;

/// Feedback taps for an m-register Fibonacci LFSR. A tap t means the
/// recurrence s[n+m] = s[n] ^ s[n+t] ^ ... (one term per tap).
std::span<const int> feedback_taps(int m);

struct MlsSequence {
  int m = 0;
  /// Initial register contents; bit i is register i.
  std::uint64_t seed = 0;
  std::vector<bool> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t ones() const;
};

/// Period of an m-register MLS, 2^m - 1.
std::uint64_t mls_length(int m);

/// Full-period LFSR output for register count m, seeded from `seed_source`
/// (re-drawn while the state is all zero).
MlsSequence generate_mls(int m, RandomSource& seed_source);

/// Same generator with an explicit nonzero initial state.
MlsSequence generate_mls_from_state(int m, std::uint64_t state);

/// Frame lengths x[n] in bytes. The general domain is 42..1542; only the
/// binary endpoints are produced by modulate().
struct ExcitationSignal {
  std::vector<std::uint32_t> sizes;
  /// Carried in the ICMP Identifier field.
  std::uint16_t signal_id = 0;
  double rate_hz = 0.0;

  std::size_t size() const { return sizes.size(); }
};

/// bit 1 -> 1542 bytes, bit 0 -> 42 bytes.
ExcitationSignal modulate(const MlsSequence& s, std::uint16_t signal_id = 0,
                          double rate_hz = 0.0);
ExcitationSignal modulate(const std::vector<bool>& bits, std::uint16_t signal_id = 0,
                          double rate_hz = 0.0);

/// Inverse of modulate(). Throws ParameterError on a size other than 42/1542.
std::vector<bool> demodulate(const ExcitationSignal& x);

struct FlatnessReport {
  /// max_k |P[k] - mean(P)| / mean(P) over the non-DC bins of the +-1 signal.
  double max_relative_deviation = 0.0;
  double mean_power = 0.0;
  std::size_t bins = 0;
};

FlatnessReport spectral_flatness(const std::vector<bool>& bits);
inline FlatnessReport spectral_flatness(const MlsSequence& s) {
  return spectral_flatness(s.bits);
}

}  // namespace vesper::signal
