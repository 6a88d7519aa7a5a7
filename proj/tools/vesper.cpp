// vesper: simulate, monitor, calibrate and analyze subcommands.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "vesper/analysis.hpp"
#include "vesper/config.hpp"
#include "vesper/orchestrator.hpp"
#include "vesper/prober.hpp"
#include "vesper/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vesper;

namespace {

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2, kPrivilege = 3 };

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

std::string key_table() {
  std::ostringstream out;
  out << "Config keys (JSON file via --config, or --set key=value):\n";
  for (const auto& k : config::run_config_keys()) {
    out << "  " << k.key << " (" << k.type << "): " << k.description << "\n";
  }
  out << "\nScenario file keys:\n";
  for (const auto& k : config::scenario_keys()) {
    out << "  " << k.key << " (" << k.type << "): " << k.description << "\n";
  }
  out << "\nExit codes: 0 success, 1 config error, 2 runtime error, 3 missing privileges.\n";
  return out.str();
}

// Options shared by every subcommand; turned into a JSON object of config keys.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "JSON run configuration file");
    app->add_option("--set", sets, "override one config key: key=value (repeatable)");
  }

  json user_json() const {
    json j = json::object();
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open config " + config_file);
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError(config_file + ": " + e.what());
      }
      config::apply_run_config(config::RunConfig{}, j);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got " + s);
      json v;
      try {
        v = json::parse(s.substr(eq + 1));
      } catch (const json::exception&) {
        v = s.substr(eq + 1);
      }
      j[s.substr(0, eq)] = v;
    }
    config::apply_run_config(config::RunConfig{}, j);
    return j;
  }
};

config::Presets presets_for(const config::RunConfig& cfg) {
  return config::Presets::load(cfg.presets.empty() ? config::Presets::default_path()
                                                   : fs::path(cfg.presets));
}

std::string scenario_name(const json& user) {
  if (user.contains("scenario")) return user.at("scenario").get<std::string>();
  throw ConfigError("no scenario given (--scenario NAME or config key 'scenario')");
}

void print_summary(const simulate::SimulationRun& run) {
  std::size_t post_grace = 0, pre_alerts = 0, pre = 0, post = 0, post_alerts = 0, wfp = 0;
  for (const auto& c : run.cycles) {
    if (!c.cycle.verdict || c.cycle.verdict->in_grace) continue;
    ++post_grace;
    const bool a = c.cycle.verdict->is_alert;
    if (c.attacked) {
      ++post;
      post_alerts += a;
    } else {
      ++pre;
      pre_alerts += a;
      wfp += c.cycle.windowed_alert;
    }
  }
  std::cout << "probes " << run.cycles.size() << ", scored " << post_grace << ", alerts " << run.alerts
            << "\n";
  std::cout << "benign: " << pre << " probes, " << pre_alerts << " alerts, " << wfp
            << " windowed alerts\n";
  if (!run.onset_s.empty()) {
    std::cout << "attacked: " << post << " probes, " << post_alerts << " alerts\n";
    for (const auto& [host, t] : run.onset_s) std::cout << "onset " << host << " at " << t << " s\n";
  }
  std::vector<analysis::ScoredSample> s;
  for (const auto& c : run.cycles) {
    if (!c.cycle.verdict || c.cycle.verdict->in_grace) continue;
    s.push_back({c.cycle.verdict->score, c.attacked, c.cycle.time_s, c.cycle.verdict->is_alert});
  }
  try {
    const auto onset = run.onset_s.empty() ? std::optional<double>{}
                                           : std::optional<double>(run.onset_s.begin()->second);
    const auto r = analysis::score_run(s, std::nullopt, onset);
    std::cout << "AUC " << r.auc << ", EER " << r.eer << ", TPR " << r.tpr << ", FPR " << r.fpr;
    if (r.detection_delay_s) std::cout << ", delay " << *r.detection_delay_s << " s";
    std::cout << "\n";
  } catch (const ParameterError&) {
  }
}

int cmd_simulate(const Common& common, const std::string& scenario_opt) {
  json user = common.user_json();
  if (!scenario_opt.empty()) user["scenario"] = scenario_opt;
  const auto base = config::apply_run_config(config::RunConfig{}, user);
  const auto scenario =
      config::Scenario::load(config::resolve_scenario(scenario_name(user)), presets_for(base));
  const auto cfg = simulate::merge(scenario, user);
  if (!cfg.seed || !cfg.sim_seed) {
    throw ConfigError("simulate needs both 'seed' and 'sim_seed' (config, --set, or scenario)");
  }

  std::ofstream scores;
  orchestrator::AlertDispatcher alerts(cfg.detector.alert_suppress_s);
  simulate::SimulationOptions opts;
  if (!cfg.log_dir.empty()) {
    fs::create_directories(cfg.log_dir);
    scores.open(fs::path(cfg.log_dir) / "scores.jsonl", std::ios::trunc);
    if (!scores) throw Error("cannot write " + cfg.log_dir + "/scores.jsonl");
    std::ofstream(fs::path(cfg.log_dir) / "alerts.jsonl", std::ios::trunc);
    alerts.add_sink(std::make_shared<orchestrator::FileAlertSink>(fs::path(cfg.log_dir) / "alerts.jsonl"));
    opts.score_log = &scores;
    opts.alerts = &alerts;
  }
  if (!cfg.profile_dir.empty()) opts.profile_dir = cfg.profile_dir;
  std::cout << "scenario " << scenario.name;
  if (!scenario.mirrors.empty()) std::cout << " (" << scenario.mirrors << ")";
  std::cout << "\n";
  const auto run = simulate::run_simulation(cfg, scenario, opts);
  print_summary(run);
  return kOk;
}

int cmd_monitor(const Common& common, const std::vector<std::string>& host_opt) {
  json user = common.user_json();
  if (!host_opt.empty()) user["hosts"] = host_opt;
  const auto cfg = config::apply_run_config(config::RunConfig{}, user);
  cfg.validate();

  prober::LiveTransport transport;  // PrivilegeError without CAP_NET_RAW
  std::optional<orchestrator::Subnet> subnet;
  if (!cfg.subnet.empty()) subnet = orchestrator::Subnet::parse(cfg.subnet);
  orchestrator::HostRegistry registry(subnet, cfg.local_address);

  SecureRandom secure;
  SeededRandom seeded(cfg.seed.value_or(0));
  RandomSource& rng = cfg.seed ? static_cast<RandomSource&>(seeded) : secure;
  orchestrator::Orchestrator orch(cfg.detector, registry, transport, rng);
  orch.set_mls_source(&secure);  // the excitation must stay unpredictable

  std::ofstream scores;
  orchestrator::AlertDispatcher alerts(cfg.detector.alert_suppress_s);
  alerts.add_sink(std::make_shared<orchestrator::StreamAlertSink>(std::cerr));
  if (!cfg.log_dir.empty()) {
    fs::create_directories(cfg.log_dir);
    scores.open(fs::path(cfg.log_dir) / "scores.jsonl", std::ios::app);
    alerts.add_sink(std::make_shared<orchestrator::FileAlertSink>(fs::path(cfg.log_dir) / "alerts.jsonl"));
    orch.set_score_log(&scores);
  }
  orch.set_alerts(&alerts);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  auto verify = [&](const std::string& addr) {
    const auto ttls = transport.reply_ttls(addr, 3);
    const auto d = registry.observe_address(addr, ttls, transport.now_ns());
    orch.log({{"type", "admission"}, {"host", addr}, {"outcome", to_string(d.outcome)},
              {"reason", d.reason}, {"t", orch.elapsed_s()}});
    if (d.outcome == orchestrator::Admission::Admitted && !cfg.profile_dir.empty()) {
      orch.load_profiles(cfg.profile_dir);
    }
  };
  for (const auto& h : cfg.hosts) verify(h);

  double last_heartbeat = -cfg.heartbeat_s;
  while (!g_stop) {
    if (cfg.duration_s && orch.elapsed_s() >= *cfg.duration_s) break;
    for (const auto& addr : registry.deferred()) {
      if (registry.retry_due(addr, transport.now_ns())) verify(addr);
    }
    if (registry.size() == 0) {
      if (orch.elapsed_s() - last_heartbeat >= cfg.heartbeat_s) {
        last_heartbeat = orch.elapsed_s();
        orch.log({{"type", "heartbeat"}, {"t", last_heartbeat}, {"hosts", 0}});
        std::cerr << "vesper: no hosts admitted; idle\n";
      }
      transport.wait(0.1);
      continue;
    }
    auto c = orch.step();
    if (scores.is_open()) scores.flush();
    if (c && !c->error.empty()) std::cerr << "vesper: " << c->host << ": " << c->error << "\n";
  }
  if (!cfg.profile_dir.empty()) orch.save_profiles(cfg.profile_dir);
  alerts.flush();
  std::cout << "stopped after " << orch.cycles() << " probes\n";
  return kOk;
}

int cmd_calibrate(const Common& common, const std::string& scenario_opt,
                  const std::vector<std::string>& host_opt) {
  json user = common.user_json();
  if (!scenario_opt.empty()) user["scenario"] = scenario_opt;
  if (!host_opt.empty()) user["hosts"] = host_opt;
  auto cfg = config::apply_run_config(config::RunConfig{}, user);
  cfg.validate();

  auto report = [&](prober::Transport& t, const std::string& host) {
    const double rate = prober::calibrate_rate(t, host, cfg.detector.calibration_samples);
    std::cout << host << ": mean 1542-byte RTT " << 2.0 / rate * 1e6 << " us, f_s " << rate
              << " Hz, probe duration " << static_cast<double>(signal::mls_length(cfg.detector.m)) / rate
              << " s\n";
  };
  if (!cfg.scenario.empty()) {
    const auto scenario = config::Scenario::load(config::resolve_scenario(cfg.scenario), presets_for(cfg));
    cfg = simulate::merge(scenario, user);
    sim::SimTransport t(cfg.sim_seed.value_or(0));
    for (const auto& h : scenario.hosts) {
      t.add_host(h.address, h.topology);
      report(t, h.address);
    }
  } else {
    if (cfg.hosts.empty()) throw ConfigError("calibrate needs --scenario or at least one --host");
    prober::LiveTransport t;
    for (const auto& h : cfg.hosts) report(t, h);
  }
  const auto bw = orchestrator::probe_bandwidth(signal::mls_length(cfg.detector.m));
  std::cout << "bandwidth at one probe per second: " << bw.bytes_per_probe << " bytes/probe, "
            << bw.bits_per_second << " bit/s\n";
  return kOk;
}

struct AnalyzeArgs {
  std::string log;
  std::string out;
  std::string host;
  std::optional<double> threshold;
  bool windowed = false;
  bool regression = false;
  std::string regression_scenario = "benign_1switch";
  std::size_t signals = 5000;
  std::size_t lag = 25;
};

json regression_json(const analysis::RegressionReport& r) {
  json rows = json::array();
  for (std::size_t i = 0; i < r.coefficients.size(); ++i) {
    rows.push_back({{"name", r.names[i]},
                    {"coefficient", r.coefficients[i]},
                    {"std_error", r.std_errors[i]},
                    {"t", r.t_values[i]},
                    {"p", r.p_values[i]}});
  }
  return {{"terms", rows},
          {"residual_error", r.residual_error},
          {"r_squared", r.r_squared},
          {"observations", r.observations},
          {"dropped_columns", r.dropped_columns}};
}

int cmd_analyze(const Common& common, const AnalyzeArgs& a) {
  json user = common.user_json();
  const auto cfg = config::apply_run_config(config::RunConfig{}, user);
  json report = json::object();

  if (!a.log.empty()) {
    std::ifstream in(a.log);
    if (!in) throw Error("cannot open log " + a.log);
    const auto log = analysis::parse_log(in);
    report["malformed_lines"] = log.malformed;
    const auto samples = analysis::labeled_scores(log, a.host, a.windowed);
    std::optional<double> onset;
    if (!a.host.empty() && log.onsets.count(a.host)) onset = log.onsets.at(a.host);
    if (a.host.empty() && log.onsets.size() == 1) onset = log.onsets.begin()->second;
    try {
      const auto r = analysis::score_run(samples, a.threshold, onset);
      report["detection"] = {{"auc", r.auc},           {"eer", r.eer},
                             {"eer_threshold", r.eer_threshold}, {"tpr", r.tpr},
                             {"fpr", r.fpr},           {"accuracy", r.accuracy},
                             {"precision", r.precision}, {"positives", r.positives},
                             {"negatives", r.negatives}};
      if (r.detection_delay_s) report["detection"]["delay_s"] = *r.detection_delay_s;
    } catch (const ParameterError& e) {
      report["detection"] = {{"error", e.what()}};
    }
    if (!a.out.empty()) {
      const auto s = analysis::export_report(log, a.out);
      report["export"] = {{"scores", s.score_rows},
                          {"features", s.feature_rows},
                          {"jitter", s.jitter_rows},
                          {"onsets", s.onset_rows}};
    }
  }
  if (a.regression) {
    const auto scenario = config::Scenario::load(config::resolve_scenario(a.regression_scenario),
                                                 presets_for(cfg));
    const auto set = simulate::collect_signals(scenario.hosts.front().topology, a.signals,
                                               cfg.detector.m, a.lag, cfg.seed.value_or(1));
    report["regression"] = regression_json(analysis::rtt_dependency_regression(set.x, set.y, a.lag));
    report["regression"]["error_reduction"] = analysis::error_reduction(set.x, set.y, a.lag);
  }
  if (a.log.empty() && !a.regression) throw ConfigError("analyze needs --log and/or --regression");
  const std::string text = report.dump(2);
  std::cout << text << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream(fs::path(a.out) / "report.json") << text << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vesper: MitM detection by active ICMP timing analysis"};
  app.footer(key_table());
  app.require_subcommand(1);

  Common common;
  std::string scenario;
  std::vector<std::string> hosts;
  AnalyzeArgs aa;
  double threshold = 0.0;

  auto* sim = app.add_subcommand("simulate", "run the detector against a simulated scenario");
  common.attach(sim);
  sim->add_option("-s,--scenario", scenario, "scenario file or bundled scenario name");

  auto* mon = app.add_subcommand("monitor", "probe live hosts with raw ICMP (needs CAP_NET_RAW)");
  common.attach(mon);
  mon->add_option("--host", hosts, "candidate host address (repeatable)");

  auto* cal = app.add_subcommand("calibrate", "measure f_s for live hosts or a scenario");
  common.attach(cal);
  cal->add_option("-s,--scenario", scenario, "scenario to calibrate instead of live hosts");
  cal->add_option("--host", hosts, "live host address (repeatable)");

  auto* ana = app.add_subcommand("analyze", "score a run log, export plot data, run the RTT regression");
  common.attach(ana);
  ana->add_option("--log", aa.log, "scores.jsonl written by simulate or monitor");
  ana->add_option("-o,--out", aa.out, "directory for report.json and .dat files");
  ana->add_option("--host", aa.host, "restrict scoring to one host");
  auto* thr = ana->add_option("--threshold", threshold, "operating threshold (default: recorded alerts)");
  ana->add_flag("--windowed", aa.windowed, "score the window-averaged RMSE");
  ana->add_flag("--regression", aa.regression, "fit the RTT dependency regression on simulated signals");
  ana->add_option("--regression-scenario", aa.regression_scenario, "benign scenario for the regression");
  ana->add_option("--signals", aa.signals, "number of simulated signals for the regression");
  ana->add_option("--lag", aa.lag, "regression lag k");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (thr->count()) aa.threshold = threshold;

  try {
    if (sim->parsed()) return cmd_simulate(common, scenario);
    if (mon->parsed()) return cmd_monitor(common, hosts);
    if (cal->parsed()) return cmd_calibrate(common, scenario, hosts);
    if (ana->parsed()) return cmd_analyze(common, aa);
  } catch (const ConfigError& e) {
    std::cerr << "vesper: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const PrivilegeError& e) {
    std::cerr << "vesper: " << e.what() << "\n";
    return kPrivilege;
  } catch (const std::exception& e) {
    std::cerr << "vesper: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
