#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vesper/common.hpp"
#include "vesper/signal.hpp"

/// Link prober: emits an excitation signal, captures the matched echoes and
/// turns them into the RTT (y) and jitter (z) signals.
namespace vesper::prober {

/// Matched transmit/receive timestamps of one probe. Timestamps are
/// nanoseconds relative to `epoch_ns`, an absolute monotonic-clock reading.
struct RawProbe {
  std::uint16_t signal_id = 0;
  std::string target;
  std::int64_t epoch_ns = 0;
  std::vector<double> tx_ns;
  /// Empty when the reply never arrived (lost or timed out).
  std::vector<std::optional<double>> rx_ns;
  /// Transport failed mid-probe; the data is partial and must not be used.
  bool aborted = false;
  /// Loss fraction exceeded the configured threshold.
  bool degraded = false;

  std::size_t size() const { return tx_ns.size(); }
  std::size_t received() const;
  double loss_fraction() const;
  /// Throws ParameterError if tx is not strictly increasing or rx < tx.
  void validate() const;
};

struct EchoResponse {
  /// y[n] = rx[n] - tx[n] in seconds; NaN at lost indices.
  std::vector<double> y;
  /// Inter-arrival times of consecutive received replies, seconds.
  std::vector<double> z;
  std::vector<std::size_t> losses;
};

/// Raised when a probe produced no replies at all.
class EmptyResponseError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Response y and arrival-order jitter z from a raw probe.
EchoResponse compute_response(const RawProbe& p);

/// Copy of `p` with every lost reply replaced by tx + timeout.
RawProbe impute_timeouts(const RawProbe& p, double timeout_s);

/// f_s = 2 / mean RTT of maximum-size frames.
double rate_from_mean_rtt(double mean_rtt_s);

/// Thread-safe table matching echo replies to requests by
/// (Identifier, Sequence_Number). Shared by the emitter and receiver roles.
class MatchTable {
 public:
  MatchTable(std::uint16_t signal_id, std::size_t n);

  void record_tx(std::uint16_t sequence, double tx_ns);
  /// Returns false (and records nothing) for a foreign identifier, an unknown
  /// or unsent sequence number, or a duplicate reply.
  bool record_rx(std::uint16_t identifier, std::uint16_t sequence, double rx_ns);
  std::size_t received() const;
  std::size_t rejected() const;
  /// Snapshot as a RawProbe (tx of unsent indices is left at 0).
  RawProbe snapshot(const std::string& target, std::int64_t epoch_ns) const;

 private:
  mutable std::mutex mu_;
  std::uint16_t signal_id_;
  std::vector<std::optional<double>> tx_;
  std::vector<std::optional<double>> rx_;
  std::size_t received_ = 0;
  std::size_t rejected_ = 0;
};

struct ProbeOptions {
  double rate_hz = 0.0;
  /// Replies later than this after their request are marked lost.
  double timeout_s = 0.01;
  /// Loss fraction above which the probe is flagged degraded.
  double degraded_loss_fraction = 0.1;
};

/// Something that can carry ICMP echo traffic: the simulated channel or raw
/// sockets on a real interface.
class Transport {
 public:
  virtual ~Transport() = default;

  /// Sends x to `target` at opts.rate_hz and returns the matched timestamps.
  virtual RawProbe send_probe(const std::string& target, const signal::ExcitationSignal& x,
                              const ProbeOptions& opts) = 0;
  /// Isolated, widely spaced echoes of `bytes`; RTT in seconds or empty if lost.
  virtual std::vector<std::optional<double>> isolated_pings(const std::string& target,
                                                            std::uint32_t bytes,
                                                            std::size_t count) = 0;
  /// Current monotonic time, nanoseconds.
  virtual std::int64_t now_ns() = 0;
  /// Wait (live) or advance the simulated clock (sim).
  virtual void wait(double seconds) = 0;
};

/// Sends `n_samples` isolated 1542-byte pings and returns 2 / mean RTT.
double calibrate_rate(Transport& transport, const std::string& target, std::size_t n_samples);

/// Emits x and collects the matched reply timestamps. Sets the degraded flag
/// from the loss fraction. Throws TransportError if the transport aborted.
RawProbe probe(Transport& transport, const std::string& target,
               const signal::ExcitationSignal& x, const ProbeOptions& opts);

/// Frames total bytes -> ICMP payload bytes (42 bytes of headers).
std::size_t icmp_payload_bytes(std::uint32_t frame_bytes);

/// Raw ICMP sockets on the host network stack. Construction fails with
/// PrivilegeError unless the process may open SOCK_RAW/IPPROTO_ICMP.
class LiveTransport final : public Transport {
 public:
  LiveTransport();
  ~LiveTransport() override;
  LiveTransport(const LiveTransport&) = delete;
  LiveTransport& operator=(const LiveTransport&) = delete;

  RawProbe send_probe(const std::string& target, const signal::ExcitationSignal& x,
                      const ProbeOptions& opts) override;
  std::vector<std::optional<double>> isolated_pings(const std::string& target,
                                                    std::uint32_t bytes,
                                                    std::size_t count) override;
  std::int64_t now_ns() override;
  void wait(double seconds) override;

  /// TTLs observed on replies to a few small pings; empty if unreachable.
  std::vector<int> reply_ttls(const std::string& target, std::size_t count);

 private:
  int fd_ = -1;
  std::uint16_t next_id_ = 1;
};

/// CLOCK_MONOTONIC in nanoseconds.
std::int64_t monotonic_ns();

}  // namespace vesper::prober
