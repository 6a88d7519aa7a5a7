#include "vesper/dft.hpp"

#include <cmath>
#include <numbers>

#include "vesper/common.hpp"

namespace vesper::features {
namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2; sign = -1 forward, +1 unscaled inverse.
void fft_pow2(std::vector<Complex>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    // Twiddles computed directly per index rather than by recurrence.
    std::vector<Complex> tw(half);
    for (std::size_t k = 0; k < half; ++k) tw[k] = std::polar(1.0, ang * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// Bluestein: X[k] = w[k] * sum_n (x[n] w[n]) conj(w[k-n]), w[n] = e^{sign*i*pi*n^2/N}.
std::vector<Complex> bluestein(std::span<const Complex> x, int sign) {
  const std::size_t n = x.size();
  const std::size_t m = next_power_of_two(2 * n - 1);
  std::vector<Complex> chirp(n);
  const std::size_t two_n = 2 * n;
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2N keeps the phase argument small and exact.
    const std::size_t k2 = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(k) * k) % two_n);
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * static_cast<double>(k2) /
                                   static_cast<double>(n));
  }
  std::vector<Complex> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  fft_pow2(a, -1);
  fft_pow2(b, -1);
  for (std::size_t k = 0; k < m; ++k) a[k] *= b[k];
  fft_pow2(a, +1);
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * chirp[k];
  return out;
}

std::vector<Complex> transform(std::span<const Complex> x, int sign) {
  if (x.empty()) throw ParameterError("dft: empty signal");
  if (is_power_of_two(x.size())) {
    std::vector<Complex> a(x.begin(), x.end());
    fft_pow2(a, sign);
    return a;
  }
  return bluestein(x, sign);
}

}  // namespace

Spectrum dft(std::span<const Complex> signal) { return transform(signal, -1); }

Spectrum dft(std::span<const double> signal) {
  std::vector<Complex> c(signal.begin(), signal.end());
  return transform(c, -1);
}

Spectrum inverse_dft(std::span<const Complex> spectrum) {
  auto out = transform(spectrum, +1);
  const double inv_n = 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= inv_n;
  return out;
}

}  // namespace vesper::features
