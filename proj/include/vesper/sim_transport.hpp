#pragma once

#include <map>
#include <optional>
#include <string>

#include "vesper/channel_sim.hpp"
#include "vesper/prober.hpp"

namespace vesper::sim {

/// Attack that switches on after a number of probes to the victim.
struct ScheduledAttack {
  AttackConfig attack;
  std::size_t onset_after_probes = 0;
};

/// Transport backed by the channel simulator. Time is a simulated monotonic
/// clock; every host has its own random stream so runs are reproducible.
class SimTransport final : public prober::Transport {
 public:
  explicit SimTransport(std::uint64_t seed) : seed_(seed) {}

  void add_host(const std::string& address, SimTopology topology,
                std::optional<ScheduledAttack> attack = std::nullopt);
  bool has_host(const std::string& address) const { return hosts_.count(address) != 0; }

  prober::RawProbe send_probe(const std::string& target, const signal::ExcitationSignal& x,
                              const prober::ProbeOptions& opts) override;
  std::vector<std::optional<double>> isolated_pings(const std::string& target,
                                                    std::uint32_t bytes,
                                                    std::size_t count) override;
  std::int64_t now_ns() override { return clock_ns_; }
  void wait(double seconds) override;

  bool attack_active(const std::string& target) const;
  /// Clock reading when the attack on `target` went live.
  std::optional<std::int64_t> onset_ns(const std::string& target) const;
  std::size_t probes_sent(const std::string& target) const;
  /// Topology the next probe to `target` will see.
  SimTopology current_topology(const std::string& target) const;
  /// Frame trace of the most recent probe.
  const SimulatedProbe& last_probe() const { return last_; }

 private:
  struct Host {
    SimTopology benign;
    std::optional<ScheduledAttack> attack;
    AdversaryState adversary;
    SeededRandom rng;
    std::size_t probes = 0;
    std::optional<std::int64_t> onset_ns;
  };

  Host& host(const std::string& address);
  const Host& host(const std::string& address) const;
  static SimTopology topology_for(const Host& h);

  std::uint64_t seed_;
  std::map<std::string, Host> hosts_;
  std::int64_t clock_ns_ = 0;
  SimulatedProbe last_;
};

}  // namespace vesper::sim
