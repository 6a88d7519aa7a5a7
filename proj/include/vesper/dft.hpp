#pragma once

#include <complex>
#include <span>
#include <vector>

namespace vesper::features {

using Complex = std::complex<double>;
using Spectrum = std::vector<Complex>;

/// Forward DFT over the exact input length, X[k] = sum_n x[n] e^{-2 pi i k n / N}.
/// Power-of-two lengths use an iterative radix-2 FFT; every other length goes
/// through Bluestein's chirp-z so bins are never changed by padding.
Spectrum dft(std::span<const double> signal);
Spectrum dft(std::span<const Complex> signal);

/// Inverse DFT with 1/N scaling.
Spectrum inverse_dft(std::span<const Complex> spectrum);

}  // namespace vesper::features
