#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "vesper/config.hpp"
#include "vesper/orchestrator.hpp"

/// Runs the detector against a simulated scenario.
namespace vesper::simulate {

struct LabeledCycle {
  orchestrator::CycleResult cycle;
  /// The attack on this host was live when the probe went out.
  bool attacked = false;
};

struct SimulationRun {
  std::vector<LabeledCycle> cycles;
  /// Attack onset per host, seconds on the run clock.
  std::map<std::string, double> onset_s;
  std::size_t alerts = 0;
};

struct SimulationOptions {
  std::ostream* score_log = nullptr;
  orchestrator::AlertDispatcher* alerts = nullptr;
  /// Where final profiles are written; empty to skip.
  std::filesystem::path profile_dir;
};

/// Scenario detector keys first, then the user's keys on top. Seeds fall
/// back to the scenario's.
config::RunConfig merge(const config::Scenario& scenario, const nlohmann::json& user);

/// Throws ConfigError if seeds are missing.
SimulationRun run_simulation(const config::RunConfig& cfg, const config::Scenario& scenario,
                             const SimulationOptions& opts = {});

struct SignalSet {
  std::vector<std::vector<double>> x;
  std::vector<std::vector<double>> y;
  double rate_hz = 0.0;
};

/// Probes a benign topology `count` times with fresh random MLS of order m
/// at its calibrated rate, keeping the first `prefix` frames of each probe
/// (later frames cannot influence earlier ones). y in seconds.
SignalSet collect_signals(const sim::SimTopology& top, std::size_t count, unsigned m,
                          std::size_t prefix, std::uint64_t seed);

}  // namespace vesper::simulate
