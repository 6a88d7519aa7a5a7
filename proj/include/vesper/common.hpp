#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vesper {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller supplied an argument outside the documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A configuration file or flag is malformed or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The live transport lacks the privileges it needs (raw sockets).
class PrivilegeError : public Error {
 public:
  using Error::Error;
};

/// A transport failed while sending or receiving.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Random bits for every stochastic decision in the system. All randomness
/// flows through an instance of this interface so runs are reproducible
/// under a fixed seed.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  virtual std::uint64_t next_u64() = 0;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();
  /// Uniform in (0, 1].
  double uniform_open_closed();
  /// Unbiased integer in [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Marsaglia polar method.
  double normal();
  double exponential(double rate);
  /// exp(sigma*Z - sigma^2/2): unit-mean multiplicative noise. sigma = 0 gives 1.
  double lognormal_unit_mean(double sigma);
  bool coin(double p_true);
};

/// Deterministic source for simulation and tests.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next_u64() override { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Cryptographically secure source (libsodium) for live operation, so an
/// observer cannot predict the next excitation sequence.
class SecureRandom final : public RandomSource {
 public:
  SecureRandom();
  std::uint64_t next_u64() override;
};

/// splitmix64 finalizer, used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace vesper
