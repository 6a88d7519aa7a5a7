#include "vesper/simulate.hpp"

#include "vesper/signal.hpp"
#include "vesper/sim_transport.hpp"

namespace vesper::simulate {

config::RunConfig merge(const config::Scenario& scenario, const nlohmann::json& user) {
  auto cfg = config::apply_run_config(config::RunConfig{}, scenario.detector);
  if (scenario.seed) cfg.seed = scenario.seed;
  if (scenario.sim_seed) cfg.sim_seed = scenario.sim_seed;
  cfg.probes = scenario.probes;
  cfg = config::apply_run_config(std::move(cfg), user);
  cfg.validate();
  return cfg;
}

SimulationRun run_simulation(const config::RunConfig& cfg, const config::Scenario& scenario,
                             const SimulationOptions& opts) {
  if (!cfg.seed) throw ConfigError("simulate needs a detector seed ('seed')");
  if (!cfg.sim_seed) throw ConfigError("simulate needs a simulator seed ('sim_seed')");
  cfg.validate();

  sim::SimTransport transport(*cfg.sim_seed);
  std::optional<orchestrator::Subnet> subnet;
  if (!scenario.subnet.empty()) subnet = orchestrator::Subnet::parse(scenario.subnet);
  orchestrator::HostRegistry registry(subnet);
  for (const auto& h : scenario.hosts) {
    transport.add_host(h.address, h.topology, h.attack);
    registry.admit(h.address, transport.now_ns());
  }

  SeededRandom rng(*cfg.seed);
  orchestrator::Orchestrator orch(cfg.detector, registry, transport, rng);
  orch.set_score_log(opts.score_log);
  orch.set_alerts(opts.alerts);

  SimulationRun run;
  const std::size_t probes = cfg.probes.value_or(scenario.probes);
  const std::int64_t start = transport.now_ns();
  for (std::size_t i = 0; i < probes; ++i) {
    auto c = orch.step();
    if (!c) break;
    LabeledCycle lc{std::move(*c), false};
    if (auto on = transport.onset_ns(lc.cycle.host)) {
      const double t = static_cast<double>(*on - start) * 1e-9;
      if (!run.onset_s.count(lc.cycle.host)) {
        run.onset_s[lc.cycle.host] = t;
        orch.log({{"type", "onset"}, {"host", lc.cycle.host}, {"t", t}});
      }
      lc.attacked = lc.cycle.time_s >= t;
    }
    if (lc.cycle.verdict && lc.cycle.verdict->is_alert) ++run.alerts;
    run.cycles.push_back(std::move(lc));
  }
  if (!opts.profile_dir.empty()) orch.save_profiles(opts.profile_dir);
  return run;
}

SignalSet collect_signals(const sim::SimTopology& top, std::size_t count, unsigned m,
                          std::size_t prefix, std::uint64_t seed) {
  if (count == 0 || prefix == 0) throw ParameterError("collect_signals: empty request");
  const std::string addr = "10.0.0.2";
  sim::SimTransport transport(mix_seed(seed, 1));
  transport.add_host(addr, top);
  SeededRandom rng(mix_seed(seed, 2));

  SignalSet out;
  out.rate_hz = prober::calibrate_rate(transport, addr, 20);
  prober::ProbeOptions opts;
  opts.rate_hz = out.rate_hz;
  opts.timeout_s = 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    auto x = signal::modulate(signal::generate_mls(m, rng), static_cast<std::uint16_t>(i), out.rate_hz);
    if (x.sizes.size() > prefix) x.sizes.resize(prefix);
    const auto raw = transport.send_probe(addr, x, opts);
    const auto resp = prober::compute_response(raw);
    out.x.emplace_back(x.sizes.begin(), x.sizes.end());
    out.y.push_back(resp.y);
    transport.wait(0.01);
  }
  return out;
}

}  // namespace vesper::simulate
