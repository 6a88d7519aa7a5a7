#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "vesper/channel_sim.hpp"
#include "vesper/orchestrator.hpp"
#include "vesper/sim_transport.hpp"

/// Run configuration, simulator presets and scenario files. Every loader
/// rejects keys it does not know.
namespace vesper::config {

struct KeyDoc {
  std::string key;
  std::string type;
  std::string description;
};

/// Every key accepted in a run configuration, for --help.
const std::vector<KeyDoc>& run_config_keys();
/// Keys of scenario files, host entries and attack blocks.
const std::vector<KeyDoc>& scenario_keys();

struct RunConfig {
  orchestrator::OrchestratorConfig detector;
  /// Optional redundant probe length; must equal 2^m - 1 when given.
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> sim_seed;
  std::string scenario;
  std::optional<std::size_t> probes;
  std::string log_dir;
  std::string profile_dir;
  std::string subnet;
  std::string local_address;
  std::vector<std::string> hosts;
  std::optional<double> duration_s;
  double heartbeat_s = 10.0;
  std::string presets;

  /// Cross-field checks (N vs m, ranges).
  void validate() const;
};

/// Applies the keys present in `j` on top of `base`. Unknown keys throw ConfigError.
RunConfig apply_run_config(RunConfig base, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// "key=value" override; the value is parsed as JSON, falling back to a string.
RunConfig apply_override(RunConfig base, const std::string& assignment);

/// Named timing presets for the simulator.
struct Presets {
  int version = 0;
  std::map<std::string, sim::ElementTiming> elements;
  std::map<std::string, sim::ResponderTiming> responders;
  std::map<std::string, sim::ElementTiming> interceptors;
  std::map<std::string, sim::CrossTraffic> cross_traffic;
  std::size_t warmup_packets = 5;
  double probe_load_sigma = 0.0;

  static Presets from_json(const nlohmann::json& j);
  static Presets load(const std::filesystem::path& path);
  /// The presets file shipped in the source tree.
  static std::filesystem::path default_path();
};

sim::ElementTiming element_from_json(const nlohmann::json& j);
nlohmann::json element_to_json(const sim::ElementTiming& e);
sim::ResponderTiming responder_from_json(const nlohmann::json& j, const Presets* presets = nullptr);
sim::CrossTraffic cross_traffic_from_json(const nlohmann::json& j);

struct ScenarioHost {
  std::string address;
  sim::SimTopology topology;
  std::optional<sim::ScheduledAttack> attack;
};

struct Scenario {
  std::string name;
  std::string mirrors;
  std::string description;
  std::vector<ScenarioHost> hosts;
  std::size_t probes = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> sim_seed;
  /// Run-config keys the scenario sets for the detector.
  nlohmann::json detector = nlohmann::json::object();
  std::string subnet;

  static Scenario from_json(const nlohmann::json& j, const Presets& presets);
  static Scenario load(const std::filesystem::path& path, const Presets& presets);
};

/// Resolves `name` against the scenario directory when it is not a path.
std::filesystem::path resolve_scenario(const std::string& name);

}  // namespace vesper::config
