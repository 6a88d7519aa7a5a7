#include "vesper/sim_transport.hpp"

#include <cmath>

namespace vesper::sim {

void SimTransport::add_host(const std::string& address, SimTopology topology,
                            std::optional<ScheduledAttack> attack) {
  topology.attack.reset();
  topology.validate();
  if (attack) {
    SimTopology probe_check = topology;
    probe_check.attack = attack->attack;
    probe_check.validate();
  }
  if (hosts_.count(address)) throw ParameterError("duplicate simulated host " + address);
  const auto stream = static_cast<std::uint64_t>(hosts_.size());
  hosts_.emplace(address, Host{std::move(topology), std::move(attack), AdversaryState{},
                               SeededRandom(mix_seed(seed_, stream)), 0, std::nullopt});
}

SimTransport::Host& SimTransport::host(const std::string& address) {
  auto it = hosts_.find(address);
  if (it == hosts_.end()) throw TransportError("unknown simulated host " + address);
  return it->second;
}

const SimTransport::Host& SimTransport::host(const std::string& address) const {
  auto it = hosts_.find(address);
  if (it == hosts_.end()) throw TransportError("unknown simulated host " + address);
  return it->second;
}

SimTopology SimTransport::topology_for(const Host& h) {
  SimTopology t = h.benign;
  if (h.attack && h.probes >= h.attack->onset_after_probes) t.attack = h.attack->attack;
  return t;
}

SimTopology SimTransport::current_topology(const std::string& target) const {
  return topology_for(host(target));
}

bool SimTransport::attack_active(const std::string& target) const {
  const Host& h = host(target);
  return h.attack && h.probes >= h.attack->onset_after_probes;
}

std::optional<std::int64_t> SimTransport::onset_ns(const std::string& target) const {
  return host(target).onset_ns;
}

std::size_t SimTransport::probes_sent(const std::string& target) const {
  return host(target).probes;
}

prober::RawProbe SimTransport::send_probe(const std::string& target,
                                          const signal::ExcitationSignal& x,
                                          const prober::ProbeOptions& opts) {
  Host& h = host(target);
  const SimTopology top = topology_for(h);
  if (top.attack && !h.onset_ns) h.onset_ns = clock_ns_;
  signal::ExcitationSignal sent = x;
  sent.rate_hz = opts.rate_hz > 0.0 ? opts.rate_hz : x.rate_hz;
  last_ = simulate_probe(top, sent, h.rng, clock_ns_, top.attack ? &h.adversary : nullptr,
                         opts.timeout_s);
  last_.raw.target = target;
  ++h.probes;

  // The probe is over once the last request has either echoed or timed out.
  double end_ns = 0.0;
  for (std::size_t i = 0; i < last_.raw.size(); ++i) {
    const double limit = last_.raw.tx_ns[i] + opts.timeout_s * 1e9;
    end_ns = std::max(end_ns, last_.raw.rx_ns[i] ? *last_.raw.rx_ns[i] : limit);
  }
  clock_ns_ += static_cast<std::int64_t>(std::ceil(end_ns));
  return last_.raw;
}

std::vector<std::optional<double>> SimTransport::isolated_pings(const std::string& target,
                                                                std::uint32_t bytes,
                                                                std::size_t count) {
  Host& h = host(target);
  const SimTopology top = topology_for(h);
  std::vector<std::optional<double>> out;
  out.reserve(count);
  signal::ExcitationSignal one;
  one.sizes = {bytes};
  one.rate_hz = 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    // Isolated pings do not touch the replay buffer or bypass schedule.
    AdversaryState scratch = h.adversary;
    auto sp = simulate_probe(top, one, h.rng, clock_ns_, top.attack ? &scratch : nullptr);
    if (sp.trace[0].rx_s) {
      out.emplace_back(*sp.trace[0].rx_s - sp.trace[0].tx_s);
    } else {
      out.emplace_back(std::nullopt);
    }
    clock_ns_ += 10'000'000;  // 10 ms apart
  }
  return out;
}

void SimTransport::wait(double seconds) {
  if (seconds > 0.0) clock_ns_ += static_cast<std::int64_t>(std::llround(seconds * 1e9));
}

}  // namespace vesper::sim
