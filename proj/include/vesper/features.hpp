#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "vesper/common.hpp"
#include "vesper/dft.hpp"
#include "vesper/prober.hpp"
#include "vesper/signal.hpp"

/// Feature extraction: each probe (x, y, z) is reduced to three numbers.
namespace vesper::features {

struct FeatureVector {
  /// Energy of the impulse response recovered by spectral division.
  double v_eh = 0.0;
  /// Mean RTT of the 1542-byte frames, seconds.
  double v_rtt_star = 0.0;
  /// Mean of the recent jitter log p-values; always <= 0.
  double v_jit = 0.0;
};

/// Raised when a feature cannot be computed from a degraded probe.
class DegradedFeatureError : public Error {
 public:
  using Error::Error;
};

struct ImpulseEnergy {
  double energy = 0.0;
  /// Bins skipped because |X[k]| was numerically zero.
  std::size_t excluded_bins = 0;
};

/// E_h = (1/N') sum_k |Y[k] / X[k]|^2 over the N' bins with |X[k]| > epsilon.
/// x is used in bytes, as transmitted.
ImpulseEnergy impulse_energy_detail(std::span<const double> x, std::span<const double> y);
double impulse_energy(const signal::ExcitationSignal& x, std::span<const double> y);

/// Explicit deconvolution h = IDFT(Y / X). Used to cross-check impulse_energy.
std::vector<double> deconvolve(std::span<const double> x, std::span<const double> y);

/// Mean of y over indices where x is a 1542-byte frame and y is finite.
double mean_rtt_large(const signal::ExcitationSignal& x, std::span<const double> y);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test, asymptotic p-value
/// Q_KS(sqrt(n_e) * D) with n_e = |a||b| / (|a| + |b|).
KsResult ks_test(std::span<const double> a, std::span<const double> b);
double ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

/// Jitter reference samples for one host plus the recent p_jit history.
class JitterReferenceSet {
 public:
  explicit JitterReferenceSet(std::size_t max_refs = 5, std::size_t history = 15);

  std::size_t max_refs() const { return max_refs_; }
  std::size_t history_capacity() const { return history_capacity_; }
  const std::deque<std::vector<double>>& refs() const { return refs_; }
  const std::deque<double>& p_history() const { return p_history_; }

  void add_reference(std::vector<double> z);
  void replace_oldest(std::vector<double> z);
  void push_p(double p_jit);
  /// Mean of the stored p_jit values (0 when empty).
  double mean_p() const;

 private:
  std::size_t max_refs_;
  std::size_t history_capacity_;
  std::deque<std::vector<double>> refs_;
  std::deque<double> p_history_;
};

/// Gate for refreshing the references once the set is full: v_jit > log(0.5).
inline constexpr double kJitterUpdateGate = -0.6931471805599453;
/// Chance of replacing the oldest reference when the gate passes.
inline constexpr double kJitterReplaceProbability = 0.5;

struct JitterOutcome {
  double p_jit = 0.0;
  double v_jit = 0.0;
  JitterReferenceSet state;
};

/// p_jit = log(max_i KS(z0, z_i)); returns the updated reference set.
JitterOutcome jitter_feature(std::span<const double> z0, const JitterReferenceSet& state,
                             RandomSource& rng);

struct Extraction {
  FeatureVector features;
  JitterReferenceSet state;
};

/// Composes impulse energy, large-frame mean RTT and the jitter test. y must
/// be complete (lost replies already imputed).
Extraction extract(const prober::EchoResponse& resp, const signal::ExcitationSignal& x,
                   const JitterReferenceSet& state, RandomSource& rng);

}  // namespace vesper::features
