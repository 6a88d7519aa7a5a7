#include "vesper/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace vesper::features {
namespace {

std::vector<double> to_double(const signal::ExcitationSignal& x) {
  return {x.sizes.begin(), x.sizes.end()};
}

// Smallest p-value carried into the log so p_jit stays finite.
constexpr double kMinP = std::numeric_limits<double>::min();

}  // namespace

ImpulseEnergy impulse_energy_detail(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ParameterError("impulse_energy: x and y differ in length");
  if (x.empty()) throw ParameterError("impulse_energy: empty signals");
  for (double v : y) {
    if (!std::isfinite(v)) throw DegradedFeatureError("impulse_energy: y has missing entries");
  }
  const auto X = dft(x);
  const auto Y = dft(y);
  double max_mag = 0.0;
  for (const auto& v : X) max_mag = std::max(max_mag, std::abs(v));
  const double eps = max_mag * 1e-12;

  ImpulseEnergy out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < X.size(); ++k) {
    const double mag = std::abs(X[k]);
    if (!(mag > eps)) {
      ++out.excluded_bins;
      continue;
    }
    sum += std::norm(Y[k] / X[k]);
    ++used;
  }
  if (used == 0) throw DegradedFeatureError("impulse_energy: excitation has no usable bins");
  out.energy = sum / static_cast<double>(used);
  return out;
}

double impulse_energy(const signal::ExcitationSignal& x, std::span<const double> y) {
  const auto xs = to_double(x);
  return impulse_energy_detail(xs, y).energy;
}

std::vector<double> deconvolve(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw ParameterError("deconvolve: length mismatch");
  const auto X = dft(x);
  const auto Y = dft(y);
  Spectrum H(X.size());
  for (std::size_t k = 0; k < X.size(); ++k) H[k] = Y[k] / X[k];
  const auto h = inverse_dft(H);
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i].real();
  return out;
}

double mean_rtt_large(const signal::ExcitationSignal& x, std::span<const double> y) {
  if (x.size() != y.size()) throw ParameterError("mean_rtt_large: x and y differ in length");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x.sizes[i] == signal::kLargeFrameBytes && std::isfinite(y[i])) {
      sum += y[i];
      ++n;
    }
  }
  if (n == 0) throw DegradedFeatureError("mean_rtt_large: no 1542-byte frame was answered");
  return sum / static_cast<double>(n);
}

double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    // Jacobi theta form converges fast for small lambda.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double j = 2.0 * k - 1.0;
      s += std::exp(-j * j * pi2 / (8.0 * lambda * lambda));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += sign * term;
    if (term < 1e-300) break;
    sign = -sign;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ParameterError("ks_two_sample: each sample needs >= 2 values");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());

  // Walk the merged order, stepping past every copy of a tied value at once.
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    const double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  return {d, kolmogorov_q(std::sqrt(ne) * d)};
}

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  return ks_test(a, b).p_value;
}

JitterReferenceSet::JitterReferenceSet(std::size_t max_refs, std::size_t history)
    : max_refs_(max_refs), history_capacity_(history) {
  if (max_refs == 0 || history == 0) {
    throw ParameterError("JitterReferenceSet: reference count and history must be >= 1");
  }
}

void JitterReferenceSet::add_reference(std::vector<double> z) {
  if (refs_.size() >= max_refs_) refs_.pop_front();
  refs_.push_back(std::move(z));
}

void JitterReferenceSet::replace_oldest(std::vector<double> z) {
  if (!refs_.empty()) refs_.pop_front();
  refs_.push_back(std::move(z));
}

void JitterReferenceSet::push_p(double p_jit) {
  if (p_history_.size() >= history_capacity_) p_history_.pop_front();
  p_history_.push_back(p_jit);
}

double JitterReferenceSet::mean_p() const {
  if (p_history_.empty()) return 0.0;
  double s = 0.0;
  for (double p : p_history_) s += p;
  return s / static_cast<double>(p_history_.size());
}

JitterOutcome jitter_feature(std::span<const double> z0, const JitterReferenceSet& state,
                             RandomSource& rng) {
  if (z0.empty()) throw ParameterError("jitter_feature: empty jitter sample");
  JitterOutcome out{0.0, 0.0, state};
  std::vector<double> sample(z0.begin(), z0.end());

  if (!state.refs().empty()) {
    double best = 0.0;
    for (const auto& ref : state.refs()) {
      if (sample.size() < 2 || ref.size() < 2) continue;
      best = std::max(best, ks_two_sample(sample, ref));
    }
    out.p_jit = std::log(std::max(best, kMinP));
  }
  out.state.push_p(out.p_jit);
  out.v_jit = std::min(0.0, out.state.mean_p());

  if (out.state.refs().size() < out.state.max_refs()) {
    out.state.add_reference(std::move(sample));
  } else if (out.v_jit > kJitterUpdateGate && rng.coin(kJitterReplaceProbability)) {
    out.state.replace_oldest(std::move(sample));
  }
  return out;
}

Extraction extract(const prober::EchoResponse& resp, const signal::ExcitationSignal& x,
                   const JitterReferenceSet& state, RandomSource& rng) {
  Extraction e{FeatureVector{}, state};
  const auto xs = to_double(x);
  e.features.v_eh = impulse_energy_detail(xs, resp.y).energy;
  e.features.v_rtt_star = mean_rtt_large(x, resp.y);
  if (resp.z.empty()) throw DegradedFeatureError("extract: no jitter samples");
  auto j = jitter_feature(resp.z, state, rng);
  e.features.v_jit = j.v_jit;
  e.state = std::move(j.state);
  return e;
}

}  // namespace vesper::features
