#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "vesper/common.hpp"
#include "vesper/prober.hpp"
#include "vesper/signal.hpp"

/// Discrete-event simulation of a switched LAN segment. Every element is a
/// store-and-forward FIFO server whose per-frame service follows the per-hop
/// timing model prop + B * (trans + proc(t)).
namespace vesper::sim {

/// Timing signature of one transmitting element (NIC, switch port, MitM).
struct ElementTiming {
  /// Fixed latency after the frame is sent; does not occupy the element.
  double prop_s = 0.0;
  double trans_s_per_byte = 0.0;
  double proc_base_s_per_byte = 0.0;
  /// proc(t) = proc_base * (1 + proc_load_gain * queue_depth).
  double proc_load_gain = 0.0;
  /// Sigma of the unit-mean lognormal factor applied to proc per frame.
  double noise_scale = 0.0;
  /// Extra service on the first frames of a burst, decaying linearly to zero.
  double warmup_penalty_s = 0.0;

  void validate(const std::string& what) const;
};

/// The probed host: its NIC transmits the reply, and reply_s_per_byte is the
/// per-byte cost of building the echo reply (also load dependent).
struct ResponderTiming {
  ElementTiming nic;
  double reply_s_per_byte = 0.0;
  double reply_load_gain = 0.0;
  double reply_noise_scale = 0.0;
  double warmup_penalty_s = 0.0;

  void validate(const std::string& what) const;
};

enum class AttackKind { EpTd, IlNb, IlDh, IpDh };
enum class Evasion { None, DoS, Spoof, Replay, BypassA, BypassB };

std::string to_string(AttackKind k);
std::string to_string(Evasion e);
AttackKind attack_kind_from_string(const std::string& s);
Evasion evasion_from_string(const std::string& s);

struct EvasionParams {
  /// Fraction of requests the interceptor drops under DoS.
  double dos_drop_fraction = 1.0;
  /// Timing used when the interceptor answers on the target's behalf.
  ResponderTiming spoof_responder;
  /// BypassB: alternate `active_probes` intercepted probes with `passive_probes` pass-through.
  std::size_t bypass_active_probes = 1;
  std::size_t bypass_passive_probes = 1;
};

struct AttackConfig {
  AttackKind kind = AttackKind::IlDh;
  ElementTiming interceptor;
  /// IL: cable before path[position] (position == path size is the cable to
  /// the responder). IP: the switch path[position] is the malicious one.
  /// EP-TD: the attacker hangs off switch path[position].
  std::size_t position = 0;
  Evasion evasion = Evasion::None;
  EvasionParams evasion_params;
};

/// Background frames served by switch ports alongside the probe.
struct CrossTraffic {
  double rate_hz = 0.0;
  /// Per probe, with this probability the port runs at burst_rate_hz instead.
  double burst_probability = 0.0;
  double burst_rate_hz = 0.0;
  std::uint32_t min_bytes = 64;
  std::uint32_t max_bytes = 1518;
};

struct SimTopology {
  /// NIC of the probing host.
  ElementTiming origin;
  /// Switches between prober and responder, in forward order.
  std::vector<ElementTiming> path;
  ResponderTiming responder;
  std::optional<AttackConfig> attack;
  CrossTraffic cross_traffic;
  /// Number of leading frames subject to warm-up penalties.
  std::size_t warmup_packets = 5;
  /// Sigma of a per-probe lognormal factor scaling every proc/reply term
  /// (slow load variation between probes).
  double probe_load_sigma = 0.0;

  void validate() const;
  /// Copy with every stochastic term (noise, warm-up, cross traffic) removed.
  SimTopology noiseless() const;
};

/// Per-element queue snapshot.
struct ElementState {
  std::size_t queue_depth = 0;
};

/// One hop: prop + B * (trans + proc_base * (1 + gain * depth) * noise).
double hop_time(const ElementTiming& e, std::uint32_t bytes, const ElementState& state,
                double noise_factor = 1.0);

/// Noise-free, empty-queue round trip of a single isolated frame of `bytes`
/// through the topology, including any active (non-evading) attack.
double closed_form_rtt(const SimTopology& top, std::uint32_t bytes);

/// Interceptor state that persists across probes on one link.
struct AdversaryState {
  std::size_t probes_seen = 0;
  /// Replay capture buffer (capacity 1): most recent fully forwarded y, seconds.
  std::optional<std::vector<double>> captured_rtt;
};

/// Time-stamped passage of one probe frame through the simulated network.
struct FrameTrace {
  double tx_s = 0.0;
  std::optional<double> rx_s;
  bool intercepted = false;
  bool answered_by_interceptor = false;
};

struct SimulatedProbe {
  prober::RawProbe raw;
  std::vector<FrameTrace> trace;
};

/// Runs the event simulation for one excitation signal starting at
/// `epoch_ns`. Request n departs at n / rate_hz. `adversary` carries replay /
/// bypass state across calls; pass nullptr for a stateless run.
SimulatedProbe simulate_probe(const SimTopology& top, const signal::ExcitationSignal& x,
                              RandomSource& rng, std::int64_t epoch_ns = 0,
                              AdversaryState* adversary = nullptr,
                              std::optional<double> timeout_s = std::nullopt);

}  // namespace vesper::sim
