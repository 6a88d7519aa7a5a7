#include "vesper/prober.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vesper::prober {

std::size_t RawProbe::received() const {
  return static_cast<std::size_t>(
      std::count_if(rx_ns.begin(), rx_ns.end(), [](const auto& r) { return r.has_value(); }));
}

double RawProbe::loss_fraction() const {
  if (tx_ns.empty()) return 0.0;
  return 1.0 - static_cast<double>(received()) / static_cast<double>(tx_ns.size());
}

void RawProbe::validate() const {
  if (rx_ns.size() != tx_ns.size()) throw ParameterError("RawProbe: tx/rx length mismatch");
  for (std::size_t i = 0; i < tx_ns.size(); ++i) {
    if (i > 0 && !(tx_ns[i] > tx_ns[i - 1])) {
      throw ParameterError("RawProbe: transmit timestamps must be strictly increasing");
    }
    if (rx_ns[i] && *rx_ns[i] < tx_ns[i]) {
      throw ParameterError("RawProbe: reply " + std::to_string(i) + " precedes its request");
    }
  }
}

EchoResponse compute_response(const RawProbe& p) {
  p.validate();
  EchoResponse r;
  r.y.assign(p.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> arrivals;
  arrivals.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.rx_ns[i]) {
      r.y[i] = (*p.rx_ns[i] - p.tx_ns[i]) * 1e-9;
      arrivals.push_back(*p.rx_ns[i]);
    } else {
      r.losses.push_back(i);
    }
  }
  if (arrivals.empty()) {
    throw EmptyResponseError("probe " + std::to_string(p.signal_id) + " to " + p.target +
                             ": no echo replies received");
  }
  std::sort(arrivals.begin(), arrivals.end());
  r.z.reserve(arrivals.size() - 1);
  for (std::size_t i = 1; i < arrivals.size(); ++i) r.z.push_back((arrivals[i] - arrivals[i - 1]) * 1e-9);
  return r;
}

RawProbe impute_timeouts(const RawProbe& p, double timeout_s) {
  RawProbe q = p;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!q.rx_ns[i]) q.rx_ns[i] = q.tx_ns[i] + timeout_s * 1e9;
  }
  return q;
}

double rate_from_mean_rtt(double mean_rtt_s) {
  if (!(mean_rtt_s > 0.0) || !std::isfinite(mean_rtt_s)) {
    throw CalibrationError("mean RTT must be positive and finite");
  }
  return 2.0 / mean_rtt_s;
}

MatchTable::MatchTable(std::uint16_t signal_id, std::size_t n)
    : signal_id_(signal_id), tx_(n), rx_(n) {
  if (n > 65536) throw ParameterError("MatchTable: more requests than Sequence_Number values");
}

void MatchTable::record_tx(std::uint16_t sequence, double tx_ns) {
  std::lock_guard lock(mu_);
  if (sequence >= tx_.size()) throw ParameterError("MatchTable: sequence out of range");
  tx_[sequence] = tx_ns;
}

bool MatchTable::record_rx(std::uint16_t identifier, std::uint16_t sequence, double rx_ns) {
  std::lock_guard lock(mu_);
  if (identifier != signal_id_ || sequence >= rx_.size() || !tx_[sequence] || rx_[sequence]) {
    ++rejected_;
    return false;
  }
  rx_[sequence] = rx_ns;
  ++received_;
  return true;
}

std::size_t MatchTable::received() const {
  std::lock_guard lock(mu_);
  return received_;
}

std::size_t MatchTable::rejected() const {
  std::lock_guard lock(mu_);
  return rejected_;
}

RawProbe MatchTable::snapshot(const std::string& target, std::int64_t epoch_ns) const {
  std::lock_guard lock(mu_);
  RawProbe p;
  p.signal_id = signal_id_;
  p.target = target;
  p.epoch_ns = epoch_ns;
  p.tx_ns.resize(tx_.size());
  p.rx_ns = rx_;
  for (std::size_t i = 0; i < tx_.size(); ++i) p.tx_ns[i] = tx_[i].value_or(0.0);
  return p;
}

double calibrate_rate(Transport& transport, const std::string& target, std::size_t n_samples) {
  if (n_samples == 0) throw ParameterError("calibrate_rate: n_samples must be >= 1");
  const auto rtts = transport.isolated_pings(target, signal::kLargeFrameBytes, n_samples);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rtts) {
    if (r) {
      sum += *r;
      ++n;
    }
  }
  if (n == 0) throw CalibrationError("calibration: every ping to " + target + " was lost");
  return rate_from_mean_rtt(sum / static_cast<double>(n));
}

RawProbe probe(Transport& transport, const std::string& target,
               const signal::ExcitationSignal& x, const ProbeOptions& opts) {
  if (x.sizes.empty()) throw ParameterError("probe: empty excitation signal");
  if (!(opts.rate_hz > 0.0)) throw ParameterError("probe: rate not calibrated");
  RawProbe p = transport.send_probe(target, x, opts);
  if (p.aborted) {
    throw TransportError("probe to " + target + " aborted; partial data discarded");
  }
  p.validate();
  p.degraded = p.loss_fraction() > opts.degraded_loss_fraction;
  return p;
}

std::size_t icmp_payload_bytes(std::uint32_t frame_bytes) {
  if (frame_bytes < signal::kSmallFrameBytes || frame_bytes > signal::kLargeFrameBytes) {
    throw ParameterError("frame size must be within [42, 1542] bytes");
  }
  return frame_bytes - signal::kSmallFrameBytes;
}

}  // namespace vesper::prober
