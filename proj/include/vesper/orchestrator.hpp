#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vesper/common.hpp"
#include "vesper/features.hpp"
#include "vesper/prober.hpp"
#include "vesper/profiler.hpp"

/// Host discovery, probe scheduling, per-host profile routing and alerting.
namespace vesper::orchestrator {

/// Dotted-quad IPv4 to host-order integer. Throws ParameterError.
std::uint32_t parse_ipv4(const std::string& text);
std::string format_ipv4(std::uint32_t addr);

struct Subnet {
  std::uint32_t network = 0;
  int prefix = 0;

  /// "a.b.c.d/len".
  static Subnet parse(const std::string& cidr);
  std::uint32_t mask() const;
  bool contains(std::uint32_t addr) const;
  bool contains(const std::string& addr) const { return contains(parse_ipv4(addr)); }
  std::string to_string() const;
};

/// Initial TTLs in common use; a reply still carrying one crossed no router.
inline constexpr std::array<int, 4> kInitialTtls = {32, 64, 128, 255};
bool ttl_unchanged(int ttl);

enum class Admission { Admitted, AlreadyKnown, Rejected, Deferred };
std::string to_string(Admission a);

struct AdmissionDecision {
  Admission outcome = Admission::Rejected;
  std::string reason;
  /// For Deferred: seconds until the next verification attempt is due.
  double retry_after_s = 0.0;
};

/// Everything the detector keeps about one member of the host set.
struct HostState {
  std::string address;
  std::int64_t first_seen_ns = 0;
  std::unique_ptr<profiler::HostProfile> profile;
  features::JitterReferenceSet jitter;
  std::optional<double> rate_hz;
  std::deque<double> window;
  std::uint64_t probes = 0;
};

/// The host set plus the local subnet. All access goes through the lock.
class HostRegistry {
 public:
  static constexpr double kRetryBaseS = 1.0;
  static constexpr double kRetryMaxS = 300.0;

  explicit HostRegistry(std::optional<Subnet> subnet = std::nullopt,
                        std::string local_address = {});

  /// Admits addr iff it lies in the subnet, is not the local host, and
  /// every TTL in the evidence is an unchanged initial value. Empty
  /// evidence (no reply) defers the host with exponential backoff.
  AdmissionDecision observe_address(const std::string& addr, const std::vector<int>& ttl_evidence,
                                    std::int64_t now_ns);
  /// True if addr is deferred and its backoff has elapsed.
  bool retry_due(const std::string& addr, std::int64_t now_ns) const;
  std::vector<std::string> deferred() const;

  /// Declared host (simulation): subnet check only.
  void admit(const std::string& addr, std::int64_t now_ns);
  bool remove(const std::string& addr);
  bool contains(const std::string& addr) const;
  std::size_t size() const;
  /// Members in admission order.
  std::vector<std::string> hosts() const;

  /// Runs fn on the host's state under the registry lock.
  template <typename Fn>
  auto with_host(const std::string& addr, Fn&& fn) {
    std::lock_guard lock(mu_);
    return fn(find(addr));
  }
  template <typename Fn>
  auto with_host(const std::string& addr, Fn&& fn) const {
    std::lock_guard lock(mu_);
    return fn(find(addr));
  }

 private:
  struct Deferral {
    unsigned attempts = 0;
    std::int64_t next_retry_ns = 0;
  };

  HostState& find(const std::string& addr);
  const HostState& find(const std::string& addr) const;
  void insert_locked(const std::string& addr, std::int64_t now_ns);

  mutable std::mutex mu_;
  std::optional<Subnet> subnet_;
  std::string local_;
  std::vector<std::string> order_;
  std::map<std::string, HostState> hosts_;
  std::map<std::string, Deferral> deferred_;
};

struct ScheduledProbe {
  std::string host;
  /// Uniform in (0, 1], as a fraction of the current slot.
  double delay = 0.0;
};

/// Uniformly random member and a delay in (0, 1]; nullopt if the set is empty.
std::optional<ScheduledProbe> schedule_next(const HostRegistry& registry, RandomSource& rng);

struct AlertRecord {
  std::string host;
  double time_s = 0.0;
  std::uint16_t signal_id = 0;
  double score = 0.0;
  double threshold = 0.0;
  double windowed_score = 0.0;
  features::FeatureVector features;

  nlohmann::json to_json() const;
};

/// Destination for alerts. deliver() throws on failure.
class AlertSink {
 public:
  virtual ~AlertSink() = default;
  virtual void deliver(const AlertRecord& record) = 0;
};

/// One JSON object per line.
class StreamAlertSink final : public AlertSink {
 public:
  explicit StreamAlertSink(std::ostream& out) : out_(out) {}
  void deliver(const AlertRecord& record) override;

 private:
  std::ostream& out_;
};

/// Appends JSON lines to a file, opening it for each delivery.
class FileAlertSink final : public AlertSink {
 public:
  explicit FileAlertSink(std::filesystem::path path) : path_(std::move(path)) {}
  void deliver(const AlertRecord& record) override;

 private:
  std::filesystem::path path_;
};

class CallbackAlertSink final : public AlertSink {
 public:
  explicit CallbackAlertSink(std::function<void(const AlertRecord&)> fn) : fn_(std::move(fn)) {}
  void deliver(const AlertRecord& record) override { fn_(record); }

 private:
  std::function<void(const AlertRecord&)> fn_;
};

/// Fans alerts out to sinks. A failing sink keeps its undelivered records
/// queued, in order, and they are retried on the next emit() or flush().
class AlertDispatcher {
 public:
  /// Alerts for a host within `suppress_s` of its previous alert are dropped.
  explicit AlertDispatcher(double suppress_s = 0.0) : suppress_s_(suppress_s) {}

  void add_sink(std::shared_ptr<AlertSink> sink);
  /// Returns false if the record was suppressed as a duplicate.
  bool emit(const AlertRecord& record);
  void flush();
  /// Records still waiting across all sinks.
  std::size_t pending() const;
  std::size_t failures() const { return failures_; }

 private:
  struct Slot {
    std::shared_ptr<AlertSink> sink;
    std::deque<AlertRecord> queue;
  };

  double suppress_s_;
  std::vector<Slot> slots_;
  std::map<std::string, double> last_alert_;
  std::size_t failures_ = 0;
};

struct OrchestratorConfig {
  unsigned m = 10;
  /// Fixed f_s; when absent each host is calibrated on first contact.
  std::optional<double> rate_hz;
  std::size_t calibration_samples = 20;
  /// Lost replies are imputed at timeout_factor * mean 1542-byte RTT.
  double timeout_factor = 10.0;
  double degraded_loss_fraction = 0.1;
  profiler::ProfilerConfig profiler;
  std::size_t jitter_refs = 5;
  std::size_t jitter_history = 15;
  /// Trailing window (probes) for the averaged score.
  std::size_t window = 60;
  /// Probe slots are this many times shorter while the chosen host is in grace.
  double grace_rate_multiplier = 5.0;
  double alert_suppress_s = 0.0;
  double jitter_bin_s = 10e-6;
  std::size_t jitter_bins = 100;
  bool log_jitter_histogram = true;

  void validate() const;
};

struct CycleResult {
  std::string host;
  double time_s = 0.0;
  std::uint16_t signal_id = 0;
  double rate_hz = 0.0;
  double loss_fraction = 0.0;
  bool degraded = false;
  std::optional<features::FeatureVector> features;
  std::optional<profiler::Verdict> verdict;
  double windowed_score = 0.0;
  bool windowed_alert = false;
  std::vector<std::uint32_t> jitter_histogram;
  double jitter_bin_s = 0.0;
  std::string error;

  nlohmann::json to_json() const;
};

/// Bytes and bits per second of probing at one probe per second.
struct Bandwidth {
  double bytes_per_probe = 0.0;
  double bits_per_second = 0.0;
};
/// N * (42 + 1542) / 2 bytes: an MLS of length N has (N+1)/2 large and
/// (N-1)/2 small frames, which the accounting rounds to N/2 of each.
Bandwidth probe_bandwidth(std::size_t n, double probes_per_second = 1.0);

/// Counts of z in bins of `bin_s`; the last bin also holds everything beyond.
std::vector<std::uint32_t> jitter_histogram(const std::vector<double>& z, double bin_s,
                                            std::size_t bins);

nlohmann::json jitter_to_json(const features::JitterReferenceSet& s);
features::JitterReferenceSet jitter_from_json(const nlohmann::json& j);

/// The detection loop. Single-threaded: one probe in flight at a time.
class Orchestrator {
 public:
  Orchestrator(OrchestratorConfig config, HostRegistry& registry, prober::Transport& transport,
               RandomSource& rng);

  void set_score_log(std::ostream* out) { log_ = out; }
  void set_alerts(AlertDispatcher* alerts) { alerts_ = alerts; }
  void set_mls_source(RandomSource* rng) { mls_rng_ = rng; }

  /// One pass of the detection procedure against `host`.
  CycleResult run_cycle(const std::string& host);
  /// Picks a host, waits for its slot and runs one cycle; nullopt when idle.
  std::optional<CycleResult> step();

  /// Writes one JSON line to the score log (if any).
  void log(const nlohmann::json& record);
  /// Seconds since the orchestrator was created, on the transport clock.
  double elapsed_s();

  void save_profiles(const std::filesystem::path& dir) const;
  /// Loads saved profiles for registry members that have none yet; returns how many.
  std::size_t load_profiles(const std::filesystem::path& dir);

  const OrchestratorConfig& config() const { return config_; }
  std::size_t cycles() const { return cycles_; }

 private:
  double ensure_rate(HostState& h);

  OrchestratorConfig config_;
  HostRegistry& registry_;
  prober::Transport& transport_;
  RandomSource& rng_;
  RandomSource* mls_rng_ = nullptr;
  AlertDispatcher* alerts_ = nullptr;
  std::ostream* log_ = nullptr;
  std::int64_t start_ns_;
  double next_slot_s_ = 0.0;
  std::uint16_t next_signal_id_;
  std::size_t cycles_ = 0;
};

/// Profile file name for a host address.
std::string profile_file_name(const std::string& address);

}  // namespace vesper::orchestrator
