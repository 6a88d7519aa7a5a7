#include "vesper/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "vesper/signal.hpp"

namespace vesper::config {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void maybe(const json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

const std::vector<std::string> kElementKeys = {"preset",           "prop_s",
                                               "trans_s_per_byte", "proc_base_s_per_byte",
                                               "proc_load_gain",   "noise_scale",
                                               "warmup_penalty_s"};
const std::vector<std::string> kResponderKeys = {"preset",          "nic",
                                                 "reply_s_per_byte", "reply_load_gain",
                                                 "reply_noise_scale", "warmup_penalty_s"};
const std::vector<std::string> kCrossKeys = {"preset",        "rate_hz",   "burst_probability",
                                             "burst_rate_hz", "min_bytes", "max_bytes"};

void apply_element(const json& j, sim::ElementTiming& e, const std::string& where) {
  check_keys(j, kElementKeys, where);
  maybe(j, "prop_s", e.prop_s, where);
  maybe(j, "trans_s_per_byte", e.trans_s_per_byte, where);
  maybe(j, "proc_base_s_per_byte", e.proc_base_s_per_byte, where);
  maybe(j, "proc_load_gain", e.proc_load_gain, where);
  maybe(j, "noise_scale", e.noise_scale, where);
  maybe(j, "warmup_penalty_s", e.warmup_penalty_s, where);
}

template <typename T>
const T& lookup(const std::map<std::string, T>& table, const std::string& name,
                const std::string& kind) {
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown " + kind + " preset '" + name + "'");
  return it->second;
}

// A preset name, or an object with an optional "preset" base plus overrides.
sim::ElementTiming element_spec(const json& j, const std::map<std::string, sim::ElementTiming>& table,
                                const std::string& kind, const std::string& where) {
  if (j.is_string()) return lookup(table, j.get<std::string>(), kind);
  sim::ElementTiming e;
  if (j.is_object() && j.contains("preset")) e = lookup(table, get<std::string>(j, "preset", where), kind);
  apply_element(j, e, where);
  return e;
}

sim::ResponderTiming responder_spec(const json& j, const Presets& p, const std::string& where) {
  if (j.is_string()) return lookup(p.responders, j.get<std::string>(), "responder");
  sim::ResponderTiming r;
  if (j.is_object() && j.contains("preset")) {
    r = lookup(p.responders, get<std::string>(j, "preset", where), "responder");
  }
  check_keys(j, kResponderKeys, where);
  if (j.contains("nic")) r.nic = element_spec(j.at("nic"), p.elements, "element", where + ".nic");
  maybe(j, "reply_s_per_byte", r.reply_s_per_byte, where);
  maybe(j, "reply_load_gain", r.reply_load_gain, where);
  maybe(j, "reply_noise_scale", r.reply_noise_scale, where);
  maybe(j, "warmup_penalty_s", r.warmup_penalty_s, where);
  return r;
}

sim::CrossTraffic cross_spec(const json& j, const Presets& p, const std::string& where) {
  if (j.is_string()) return lookup(p.cross_traffic, j.get<std::string>(), "cross_traffic");
  sim::CrossTraffic c;
  if (j.is_object() && j.contains("preset")) {
    c = lookup(p.cross_traffic, get<std::string>(j, "preset", where), "cross_traffic");
  }
  check_keys(j, kCrossKeys, where);
  maybe(j, "rate_hz", c.rate_hz, where);
  maybe(j, "burst_probability", c.burst_probability, where);
  maybe(j, "burst_rate_hz", c.burst_rate_hz, where);
  maybe(j, "min_bytes", c.min_bytes, where);
  maybe(j, "max_bytes", c.max_bytes, where);
  return c;
}

}  // namespace

// ------------------------------------------------------------- run config

const std::vector<KeyDoc>& run_config_keys() {
  static const std::vector<KeyDoc> keys = {
      {"m", "int", "MLS register count; probe length N = 2^m - 1 (default 10)"},
      {"n", "int", "probe length; optional, must equal 2^m - 1"},
      {"rate_hz", "number", "fixed transmission rate f_s; omit to calibrate per host"},
      {"calibration_samples", "int", "isolated 1542-byte pings used to calibrate f_s (default 20)"},
      {"timeout_factor", "number", "lost replies count as timeout_factor * mean large-frame RTT (default 10)"},
      {"degraded_loss_fraction", "number", "loss fraction that flags a probe degraded (default 0.1)"},
      {"p_thr", "number", "tail probability below which a score alerts (default 1e-4)"},
      {"hidden", "int", "autoencoder bottleneck width, 1 or 2 (default 2)"},
      {"learning_rate", "number", "autoencoder SGD step (default 0.1)"},
      {"grace_n", "int", "benign probes learned before alerting starts (default 100)"},
      {"alert_guard", "int", "skip learning while any of the last A verdicts alerted (default 5)"},
      {"window", "int", "trailing window of the averaged score, in probes (default 60)"},
      {"grace_rate_multiplier", "number", "probe-rate speedup while a host is in grace (default 5)"},
      {"alert_suppress_s", "number", "drop repeat alerts for a host within this many seconds (default 0)"},
      {"jitter_refs", "int", "stored jitter reference samples per host (default 5)"},
      {"jitter_history", "int", "p_jit values averaged into v_jit (default 15)"},
      {"jitter_bin_s", "number", "jitter histogram bin width in the score log (default 10e-6)"},
      {"jitter_bins", "int", "jitter histogram bin count (default 100)"},
      {"log_jitter_histogram", "bool", "include the jitter histogram in score records (default true)"},
      {"seed", "int", "detector seed (MLS, scheduling, model init); required for simulate"},
      {"sim_seed", "int", "channel simulator seed; required for simulate"},
      {"scenario", "string", "scenario file or bundled scenario name (simulate)"},
      {"probes", "int", "number of probes to run (simulate; overrides the scenario)"},
      {"log_dir", "string", "directory for scores.jsonl and alerts.jsonl"},
      {"profile_dir", "string", "directory for persisted host profiles"},
      {"subnet", "string", "local subnet in CIDR form (monitor)"},
      {"local_address", "string", "this host's address, never admitted (monitor)"},
      {"hosts", "string[]", "candidate addresses to verify and admit (monitor)"},
      {"duration_s", "number", "stop monitoring after this many seconds; omit to run until signalled"},
      {"heartbeat_s", "number", "idle heartbeat interval when no host is admitted (default 10)"},
      {"presets", "string", "simulator timing presets file (default: bundled sim_defaults.json)"},
  };
  return keys;
}

const std::vector<KeyDoc>& scenario_keys() {
  static const std::vector<KeyDoc> keys = {
      {"name", "string", "scenario name"},
      {"mirrors", "string", "evaluation column the scenario stands in for"},
      {"description", "string", "free text"},
      {"probes", "int", "total probes across all hosts"},
      {"seed", "int", "detector seed"},
      {"sim_seed", "int", "channel simulator seed"},
      {"subnet", "string", "subnet the declared hosts must lie in"},
      {"detector", "object", "run-config keys applied for this scenario"},
      {"hosts", "array", "host entries, see below"},
      {"hosts[].address", "string", "IPv4 address of the simulated host"},
      {"hosts[].origin", "element", "prober NIC timing"},
      {"hosts[].path", "element[]", "switches between prober and host, forward order"},
      {"hosts[].responder", "responder", "host timing: nic, reply_s_per_byte, reply_load_gain, reply_noise_scale, warmup_penalty_s"},
      {"hosts[].cross_traffic", "cross", "rate_hz, burst_probability, burst_rate_hz, min_bytes, max_bytes"},
      {"hosts[].warmup_packets", "int", "frames subject to warm-up penalties"},
      {"hosts[].probe_load_sigma", "number", "per-probe lognormal load variation"},
      {"hosts[].attack", "object", "attack block, see below"},
      {"attack.kind", "string", "EP-TD | IL-NB | IL-DH | IP-DH"},
      {"attack.interceptor", "element", "interceptor timing"},
      {"attack.position", "int", "path index of the interception point"},
      {"attack.onset_after_probes", "int", "benign probes to this host before the attack starts"},
      {"attack.evasion", "string", "none | DoS | Spoof | Replay | BypassA | BypassB"},
      {"attack.dos_drop_fraction", "number", "fraction of requests dropped under DoS"},
      {"attack.spoof_responder", "responder", "timing of the forged replies under Spoof"},
      {"attack.bypass_active_probes", "int", "BypassB: intercepted probes per period"},
      {"attack.bypass_passive_probes", "int", "BypassB: pass-through probes per period"},
      {"element", "preset|object", "preset name, or {preset?, prop_s, trans_s_per_byte, proc_base_s_per_byte, proc_load_gain, noise_scale, warmup_penalty_s}"},
  };
  return keys;
}

void RunConfig::validate() const {
  detector.validate();
  if (n && *n != signal::mls_length(detector.m)) {
    throw ConfigError("n = " + std::to_string(*n) + " does not match m = " +
                      std::to_string(detector.m) + " (2^m - 1 = " +
                      std::to_string(signal::mls_length(detector.m)) + ")");
  }
  if (duration_s && !(*duration_s > 0.0)) throw ConfigError("duration_s must be positive");
  if (!(heartbeat_s > 0.0)) throw ConfigError("heartbeat_s must be positive");
}

RunConfig apply_run_config(RunConfig c, const json& j) {
  std::vector<std::string> allowed;
  for (const auto& k : run_config_keys()) allowed.push_back(k.key);
  const std::string w = "config";
  check_keys(j, allowed, w);
  auto& d = c.detector;
  maybe(j, "m", d.m, w);
  if (j.contains("n")) c.n = get<std::size_t>(j, "n", w);
  if (j.contains("rate_hz")) {
    if (j.at("rate_hz").is_null()) {
      d.rate_hz.reset();
    } else {
      d.rate_hz = get<double>(j, "rate_hz", w);
    }
  }
  maybe(j, "calibration_samples", d.calibration_samples, w);
  maybe(j, "timeout_factor", d.timeout_factor, w);
  maybe(j, "degraded_loss_fraction", d.degraded_loss_fraction, w);
  maybe(j, "p_thr", d.profiler.p_thr, w);
  maybe(j, "hidden", d.profiler.hidden, w);
  maybe(j, "learning_rate", d.profiler.learning_rate, w);
  maybe(j, "grace_n", d.profiler.grace_n, w);
  maybe(j, "alert_guard", d.profiler.alert_guard, w);
  maybe(j, "window", d.window, w);
  maybe(j, "grace_rate_multiplier", d.grace_rate_multiplier, w);
  maybe(j, "alert_suppress_s", d.alert_suppress_s, w);
  maybe(j, "jitter_refs", d.jitter_refs, w);
  maybe(j, "jitter_history", d.jitter_history, w);
  maybe(j, "jitter_bin_s", d.jitter_bin_s, w);
  maybe(j, "jitter_bins", d.jitter_bins, w);
  maybe(j, "log_jitter_histogram", d.log_jitter_histogram, w);
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", w);
  if (j.contains("sim_seed")) c.sim_seed = get<std::uint64_t>(j, "sim_seed", w);
  maybe(j, "scenario", c.scenario, w);
  if (j.contains("probes")) c.probes = get<std::size_t>(j, "probes", w);
  maybe(j, "log_dir", c.log_dir, w);
  maybe(j, "profile_dir", c.profile_dir, w);
  maybe(j, "subnet", c.subnet, w);
  maybe(j, "local_address", c.local_address, w);
  maybe(j, "hosts", c.hosts, w);
  if (j.contains("duration_s")) c.duration_s = get<double>(j, "duration_s", w);
  maybe(j, "heartbeat_s", c.heartbeat_s, w);
  maybe(j, "presets", c.presets, w);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return apply_run_config(RunConfig{}, parse_file(path));
}

RunConfig apply_override(RunConfig base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  return apply_run_config(std::move(base), json{{key, value}});
}

// ----------------------------------------------------------------- presets

sim::ElementTiming element_from_json(const json& j) {
  sim::ElementTiming e;
  apply_element(j, e, "element");
  return e;
}

json element_to_json(const sim::ElementTiming& e) {
  return {{"prop_s", e.prop_s},
          {"trans_s_per_byte", e.trans_s_per_byte},
          {"proc_base_s_per_byte", e.proc_base_s_per_byte},
          {"proc_load_gain", e.proc_load_gain},
          {"noise_scale", e.noise_scale},
          {"warmup_penalty_s", e.warmup_penalty_s}};
}

sim::ResponderTiming responder_from_json(const json& j, const Presets* presets) {
  static const Presets empty;
  return responder_spec(j, presets ? *presets : empty, "responder");
}

sim::CrossTraffic cross_traffic_from_json(const json& j) {
  static const Presets empty;
  return cross_spec(j, empty, "cross_traffic");
}

Presets Presets::from_json(const json& j) {
  check_keys(j, {"version", "comment", "elements", "responders", "interceptors", "cross_traffic",
                 "warmup_packets", "probe_load_sigma"},
             "presets");
  Presets p;
  p.version = get<int>(j, "version", "presets");
  if (p.version != 1) throw ConfigError("presets: unsupported version " + std::to_string(p.version));
  maybe(j, "warmup_packets", p.warmup_packets, "presets");
  maybe(j, "probe_load_sigma", p.probe_load_sigma, "presets");
  if (j.contains("elements")) {
    for (const auto& [name, e] : j.at("elements").items()) {
      p.elements[name] = element_spec(e, p.elements, "element", "elements." + name);
    }
  }
  if (j.contains("interceptors")) {
    for (const auto& [name, e] : j.at("interceptors").items()) {
      p.interceptors[name] = element_spec(e, p.elements, "element", "interceptors." + name);
    }
  }
  if (j.contains("responders")) {
    for (const auto& [name, r] : j.at("responders").items()) {
      p.responders[name] = responder_spec(r, p, "responders." + name);
    }
  }
  if (j.contains("cross_traffic")) {
    for (const auto& [name, c] : j.at("cross_traffic").items()) {
      p.cross_traffic[name] = cross_spec(c, p, "cross_traffic." + name);
    }
  }
  return p;
}

Presets Presets::load(const std::filesystem::path& path) { return from_json(parse_file(path)); }

std::filesystem::path Presets::default_path() {
  return std::filesystem::path(VESPER_CONFIG_DIR) / "sim_defaults.json";
}

// --------------------------------------------------------------- scenarios

Scenario Scenario::from_json(const json& j, const Presets& p) {
  check_keys(j, {"name", "mirrors", "description", "probes", "seed", "sim_seed", "subnet",
                 "detector", "hosts"},
             "scenario");
  Scenario s;
  s.name = get<std::string>(j, "name", "scenario");
  maybe(j, "mirrors", s.mirrors, "scenario");
  maybe(j, "description", s.description, "scenario");
  s.probes = get<std::size_t>(j, "probes", "scenario");
  if (j.contains("seed")) s.seed = get<std::uint64_t>(j, "seed", "scenario");
  if (j.contains("sim_seed")) s.sim_seed = get<std::uint64_t>(j, "sim_seed", "scenario");
  maybe(j, "subnet", s.subnet, "scenario");
  if (j.contains("detector")) {
    s.detector = j.at("detector");
    apply_run_config(RunConfig{}, s.detector);  // reject unknown keys early
  }
  if (!j.contains("hosts") || !j.at("hosts").is_array() || j.at("hosts").empty()) {
    throw ConfigError("scenario: 'hosts' must be a nonempty array");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < j.at("hosts").size(); ++i) {
    const auto& hj = j.at("hosts")[i];
    const std::string w = "hosts[" + std::to_string(i) + "]";
    check_keys(hj, {"address", "origin", "path", "responder", "cross_traffic", "warmup_packets",
                    "probe_load_sigma", "attack"},
               w);
    ScenarioHost h;
    h.address = get<std::string>(hj, "address", w);
    orchestrator::parse_ipv4(h.address);
    if (!seen.insert(h.address).second) throw ConfigError(w + ": duplicate address " + h.address);
    auto& t = h.topology;
    t.warmup_packets = p.warmup_packets;
    t.probe_load_sigma = p.probe_load_sigma;
    t.origin = element_spec(hj.at("origin"), p.elements, "element", w + ".origin");
    if (!hj.contains("path") || !hj.at("path").is_array()) throw ConfigError(w + ".path must be an array");
    for (const auto& e : hj.at("path")) t.path.push_back(element_spec(e, p.elements, "element", w + ".path"));
    t.responder = responder_spec(hj.at("responder"), p, w + ".responder");
    if (hj.contains("cross_traffic")) t.cross_traffic = cross_spec(hj.at("cross_traffic"), p, w + ".cross_traffic");
    maybe(hj, "warmup_packets", t.warmup_packets, w);
    maybe(hj, "probe_load_sigma", t.probe_load_sigma, w);

    if (hj.contains("attack")) {
      const auto& aj = hj.at("attack");
      const std::string aw = w + ".attack";
      check_keys(aj, {"kind", "interceptor", "position", "onset_after_probes", "evasion",
                      "dos_drop_fraction", "spoof_responder", "bypass_active_probes",
                      "bypass_passive_probes"},
                 aw);
      sim::ScheduledAttack sa;
      auto& a = sa.attack;
      try {
        a.kind = sim::attack_kind_from_string(get<std::string>(aj, "kind", aw));
        if (aj.contains("evasion")) a.evasion = sim::evasion_from_string(get<std::string>(aj, "evasion", aw));
      } catch (const ConfigError& e) {
        throw ConfigError(aw + ": " + e.what());
      }
      a.interceptor = element_spec(aj.at("interceptor"), p.interceptors, "interceptor", aw + ".interceptor");
      a.position = get<std::size_t>(aj, "position", aw);
      maybe(aj, "onset_after_probes", sa.onset_after_probes, aw);
      maybe(aj, "dos_drop_fraction", a.evasion_params.dos_drop_fraction, aw);
      if (aj.contains("spoof_responder")) {
        a.evasion_params.spoof_responder = responder_spec(aj.at("spoof_responder"), p, aw + ".spoof_responder");
      } else {
        a.evasion_params.spoof_responder = t.responder;
      }
      maybe(aj, "bypass_active_probes", a.evasion_params.bypass_active_probes, aw);
      maybe(aj, "bypass_passive_probes", a.evasion_params.bypass_passive_probes, aw);
      h.attack = sa;
    }

    // Validate with the attack in place so position errors surface at load.
    auto check = t;
    if (h.attack) check.attack = h.attack->attack;
    try {
      check.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(w + ": " + e.what());
    }
    s.hosts.push_back(std::move(h));
  }
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path, const Presets& presets) {
  try {
    return from_json(parse_file(path), presets);
  } catch (const ConfigError& e) {
    throw ConfigError(path.filename().string() + ": " + e.what());
  }
}

std::filesystem::path resolve_scenario(const std::string& name) {
  std::filesystem::path p(name);
  if (std::filesystem::exists(p)) return p;
  auto bundled = std::filesystem::path(VESPER_SCENARIO_DIR) / name;
  if (std::filesystem::exists(bundled)) return bundled;
  bundled += ".json";
  if (std::filesystem::exists(bundled)) return bundled;
  throw ConfigError("scenario not found: " + name);
}

}  // namespace vesper::config
