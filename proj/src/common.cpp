#include "vesper/common.hpp"

#include <sodium.h>

#include <cmath>
#include <limits>

namespace vesper {

double RandomSource::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomSource::uniform_open_closed() { return 1.0 - uniform01(); }

std::uint64_t RandomSource::below(std::uint64_t n) {
  if (n == 0) throw ParameterError("RandomSource::below: n must be nonzero");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double RandomSource::normal() {
  double u, v, s;
  do {
    u = 2.0 * uniform01() - 1.0;
    v = 2.0 * uniform01() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

double RandomSource::exponential(double rate) {
  return -std::log(uniform_open_closed()) / rate;
}

double RandomSource::lognormal_unit_mean(double sigma) {
  if (sigma <= 0.0) return 1.0;
  return std::exp(sigma * normal() - 0.5 * sigma * sigma);
}

bool RandomSource::coin(double p_true) { return uniform01() < p_true; }

SecureRandom::SecureRandom() {
  if (sodium_init() < 0) throw Error("libsodium initialisation failed");
}

std::uint64_t SecureRandom::next_u64() {
  std::uint64_t v;
  randombytes_buf(&v, sizeof v);
  return v;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace vesper
