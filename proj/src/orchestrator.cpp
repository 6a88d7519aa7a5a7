#include "vesper/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vesper/signal.hpp"

namespace vesper::orchestrator {

std::uint32_t parse_ipv4(const std::string& text) {
  std::uint32_t out = 0;
  int parts = 0;
  std::size_t i = 0;
  while (i <= text.size()) {
    std::size_t j = text.find('.', i);
    if (j == std::string::npos) j = text.size();
    const std::string part = text.substr(i, j - i);
    if (part.empty() || part.size() > 3 ||
        !std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ParameterError("not an IPv4 address: '" + text + "'");
    }
    const int v = std::stoi(part);
    if (v > 255) throw ParameterError("not an IPv4 address: '" + text + "'");
    out = (out << 8) | static_cast<std::uint32_t>(v);
    ++parts;
    i = j + 1;
  }
  if (parts != 4) throw ParameterError("not an IPv4 address: '" + text + "'");
  return out;
}

std::string format_ipv4(std::uint32_t a) {
  return std::to_string(a >> 24) + "." + std::to_string((a >> 16) & 0xff) + "." +
         std::to_string((a >> 8) & 0xff) + "." + std::to_string(a & 0xff);
}

Subnet Subnet::parse(const std::string& cidr) {
  const auto slash = cidr.find('/');
  if (slash == std::string::npos) throw ParameterError("subnet needs a prefix length: " + cidr);
  Subnet s;
  const std::string len = cidr.substr(slash + 1);
  if (len.empty() || len.size() > 2 ||
      !std::all_of(len.begin(), len.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ParameterError("bad prefix length in " + cidr);
  }
  s.prefix = std::stoi(len);
  if (s.prefix > 32) throw ParameterError("bad prefix length in " + cidr);
  s.network = parse_ipv4(cidr.substr(0, slash)) & s.mask();
  return s;
}

std::uint32_t Subnet::mask() const {
  return prefix == 0 ? 0U : ~std::uint32_t{0} << (32 - prefix);
}

bool Subnet::contains(std::uint32_t addr) const { return (addr & mask()) == network; }

std::string Subnet::to_string() const { return format_ipv4(network) + "/" + std::to_string(prefix); }

bool ttl_unchanged(int ttl) {
  return std::find(kInitialTtls.begin(), kInitialTtls.end(), ttl) != kInitialTtls.end();
}

std::string to_string(Admission a) {
  switch (a) {
    case Admission::Admitted: return "admitted";
    case Admission::AlreadyKnown: return "already-known";
    case Admission::Rejected: return "rejected";
    case Admission::Deferred: return "deferred";
  }
  return "?";
}

// ---------------------------------------------------------------- registry

HostRegistry::HostRegistry(std::optional<Subnet> subnet, std::string local_address)
    : subnet_(subnet), local_(std::move(local_address)) {
  if (!local_.empty()) parse_ipv4(local_);
}

void HostRegistry::insert_locked(const std::string& addr, std::int64_t now_ns) {
  HostState h;
  h.address = addr;
  h.first_seen_ns = now_ns;
  hosts_.emplace(addr, std::move(h));
  order_.push_back(addr);
  deferred_.erase(addr);
}

AdmissionDecision HostRegistry::observe_address(const std::string& addr,
                                                const std::vector<int>& ttl_evidence,
                                                std::int64_t now_ns) {
  const std::uint32_t a = parse_ipv4(addr);
  std::lock_guard lock(mu_);
  if (hosts_.count(addr)) return {Admission::AlreadyKnown, "already in the host set", 0.0};
  if (addr == local_) return {Admission::Rejected, "local host", 0.0};
  if (subnet_ && !subnet_->contains(a)) {
    return {Admission::Rejected, "outside " + subnet_->to_string(), 0.0};
  }
  if (ttl_evidence.empty()) {
    auto& d = deferred_[addr];
    ++d.attempts;
    const double backoff =
        std::min(kRetryMaxS, kRetryBaseS * std::pow(2.0, static_cast<double>(d.attempts - 1)));
    d.next_retry_ns = now_ns + static_cast<std::int64_t>(backoff * 1e9);
    return {Admission::Deferred, "no reply to verification ping", backoff};
  }
  for (int ttl : ttl_evidence) {
    if (!ttl_unchanged(ttl)) {
      deferred_.erase(addr);
      return {Admission::Rejected, "reply TTL " + std::to_string(ttl) + " crossed a router", 0.0};
    }
  }
  insert_locked(addr, now_ns);
  return {Admission::Admitted, "no router between us", 0.0};
}

bool HostRegistry::retry_due(const std::string& addr, std::int64_t now_ns) const {
  std::lock_guard lock(mu_);
  auto it = deferred_.find(addr);
  return it != deferred_.end() && now_ns >= it->second.next_retry_ns;
}

std::vector<std::string> HostRegistry::deferred() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [addr, d] : deferred_) out.push_back(addr);
  return out;
}

void HostRegistry::admit(const std::string& addr, std::int64_t now_ns) {
  const std::uint32_t a = parse_ipv4(addr);
  std::lock_guard lock(mu_);
  if (hosts_.count(addr)) return;
  if (addr == local_) throw ParameterError("cannot monitor the local host " + addr);
  if (subnet_ && !subnet_->contains(a)) {
    throw ParameterError(addr + " is outside " + subnet_->to_string());
  }
  insert_locked(addr, now_ns);
}

bool HostRegistry::remove(const std::string& addr) {
  std::lock_guard lock(mu_);
  if (!hosts_.erase(addr)) return false;
  order_.erase(std::find(order_.begin(), order_.end(), addr));
  return true;
}

bool HostRegistry::contains(const std::string& addr) const {
  std::lock_guard lock(mu_);
  return hosts_.count(addr) != 0;
}

std::size_t HostRegistry::size() const {
  std::lock_guard lock(mu_);
  return hosts_.size();
}

std::vector<std::string> HostRegistry::hosts() const {
  std::lock_guard lock(mu_);
  return order_;
}

HostState& HostRegistry::find(const std::string& addr) {
  auto it = hosts_.find(addr);
  if (it == hosts_.end()) throw ParameterError(addr + " is not in the host set");
  return it->second;
}

const HostState& HostRegistry::find(const std::string& addr) const {
  auto it = hosts_.find(addr);
  if (it == hosts_.end()) throw ParameterError(addr + " is not in the host set");
  return it->second;
}

std::optional<ScheduledProbe> schedule_next(const HostRegistry& registry, RandomSource& rng) {
  const auto hosts = registry.hosts();
  if (hosts.empty()) return std::nullopt;
  ScheduledProbe s;
  s.host = hosts[rng.below(hosts.size())];
  s.delay = rng.uniform_open_closed();
  return s;
}

// ------------------------------------------------------------------ alerts

namespace {

nlohmann::json features_json(const features::FeatureVector& f) {
  return {{"v_eh", f.v_eh}, {"v_rtt", f.v_rtt_star}, {"v_jit", f.v_jit}};
}

}  // namespace

nlohmann::json AlertRecord::to_json() const {
  return {{"type", "alert"},       {"host", host},
          {"t", time_s},           {"signal_id", signal_id},
          {"score", score},        {"threshold", threshold},
          {"windowed", windowed_score}, {"features", features_json(features)}};
}

void StreamAlertSink::deliver(const AlertRecord& record) {
  out_ << record.to_json().dump() << '\n';
  out_.flush();
  if (!out_) throw TransportError("alert stream is not writable");
}

void FileAlertSink::deliver(const AlertRecord& record) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw TransportError("cannot open alert file " + path_.string());
  out << record.to_json().dump() << '\n';
  if (!out) throw TransportError("cannot write alert file " + path_.string());
}

void AlertDispatcher::add_sink(std::shared_ptr<AlertSink> sink) {
  if (!sink) throw ParameterError("null alert sink");
  slots_.push_back({std::move(sink), {}});
}

bool AlertDispatcher::emit(const AlertRecord& record) {
  auto it = last_alert_.find(record.host);
  if (suppress_s_ > 0.0 && it != last_alert_.end() && record.time_s - it->second < suppress_s_) {
    return false;
  }
  last_alert_[record.host] = record.time_s;
  for (auto& s : slots_) s.queue.push_back(record);
  flush();
  return true;
}

void AlertDispatcher::flush() {
  for (auto& s : slots_) {
    while (!s.queue.empty()) {
      try {
        s.sink->deliver(s.queue.front());
      } catch (const std::exception&) {
        ++failures_;
        break;
      }
      s.queue.pop_front();
    }
  }
}

std::size_t AlertDispatcher::pending() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.queue.size();
  return n;
}

// -------------------------------------------------------------- accounting

Bandwidth probe_bandwidth(std::size_t n, double probes_per_second) {
  if (n == 0 || !(probes_per_second > 0.0)) throw ParameterError("probe_bandwidth: bad arguments");
  Bandwidth b;
  b.bytes_per_probe =
      static_cast<double>(n) * (signal::kSmallFrameBytes + signal::kLargeFrameBytes) / 2.0;
  b.bits_per_second = b.bytes_per_probe * 8.0 * probes_per_second;
  return b;
}

std::vector<std::uint32_t> jitter_histogram(const std::vector<double>& z, double bin_s,
                                            std::size_t bins) {
  if (!(bin_s > 0.0) || bins == 0) throw ParameterError("jitter_histogram: bad binning");
  std::vector<std::uint32_t> h(bins, 0);
  for (double v : z) {
    const double idx = std::floor(std::max(0.0, v) / bin_s);
    h[idx >= static_cast<double>(bins) ? bins - 1 : static_cast<std::size_t>(idx)]++;
  }
  return h;
}

nlohmann::json jitter_to_json(const features::JitterReferenceSet& s) {
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& r : s.refs()) refs.push_back(r);
  nlohmann::json hist = nlohmann::json::array();
  for (double p : s.p_history()) hist.push_back(p);
  return {{"max_refs", s.max_refs()},
          {"history", s.history_capacity()},
          {"refs", refs},
          {"p_history", hist}};
}

features::JitterReferenceSet jitter_from_json(const nlohmann::json& j) {
  features::JitterReferenceSet s(j.at("max_refs").get<std::size_t>(),
                                 j.at("history").get<std::size_t>());
  for (const auto& r : j.at("refs")) s.add_reference(r.get<std::vector<double>>());
  for (const auto& p : j.at("p_history")) s.push_p(p.get<double>());
  return s;
}

void OrchestratorConfig::validate() const {
  if (m < signal::kMinRegisters || m > 16) throw ConfigError("m must be within [2, 16]");
  if (rate_hz && !(*rate_hz > 0.0)) throw ConfigError("rate_hz must be positive");
  if (calibration_samples == 0) throw ConfigError("calibration_samples must be >= 1");
  if (!(timeout_factor > 0.0)) throw ConfigError("timeout_factor must be positive");
  if (!(degraded_loss_fraction >= 0.0 && degraded_loss_fraction <= 1.0)) {
    throw ConfigError("degraded_loss_fraction must be within [0, 1]");
  }
  if (!(profiler.p_thr > 0.0 && profiler.p_thr < 1.0)) throw ConfigError("p_thr must be in (0, 1)");
  if (profiler.hidden == 0 || profiler.hidden >= profiler::kFeatureCount) {
    throw ConfigError("hidden must be within [1, 2]");
  }
  if (!(profiler.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (jitter_refs == 0 || jitter_history == 0) throw ConfigError("jitter sizes must be >= 1");
  if (window == 0) throw ConfigError("window must be >= 1");
  if (!(grace_rate_multiplier >= 1.0)) throw ConfigError("grace_rate_multiplier must be >= 1");
  if (!(alert_suppress_s >= 0.0)) throw ConfigError("alert_suppress_s must be >= 0");
  if (!(jitter_bin_s > 0.0) || jitter_bins == 0) throw ConfigError("bad jitter histogram binning");
}

nlohmann::json CycleResult::to_json() const {
  nlohmann::json j{{"type", "probe"},
                   {"t", time_s},
                   {"host", host},
                   {"signal_id", signal_id},
                   {"rate_hz", rate_hz},
                   {"loss", loss_fraction},
                   {"degraded", degraded}};
  if (features) j["features"] = features_json(*features);
  if (verdict) {
    j["rmse"] = verdict->score;
    j["threshold"] = std::isfinite(verdict->threshold) ? nlohmann::json(verdict->threshold)
                                                       : nlohmann::json(nullptr);
    j["alert"] = verdict->is_alert;
    j["trained"] = verdict->trained;
    j["grace"] = verdict->in_grace;
    j["windowed"] = windowed_score;
    j["windowed_alert"] = windowed_alert;
  }
  if (!jitter_histogram.empty()) {
    j["jitter_bin_s"] = jitter_bin_s;
    j["jitter_hist"] = jitter_histogram;
  }
  if (!error.empty()) j["error"] = error;
  return j;
}

std::string profile_file_name(const std::string& address) { return address + ".profile.json"; }

// ------------------------------------------------------------ orchestrator

Orchestrator::Orchestrator(OrchestratorConfig config, HostRegistry& registry,
                           prober::Transport& transport, RandomSource& rng)
    : config_(std::move(config)),
      registry_(registry),
      transport_(transport),
      rng_(rng),
      start_ns_(transport.now_ns()),
      next_signal_id_(static_cast<std::uint16_t>(rng.next_u64() & 0xffff)) {
  config_.validate();
}

double Orchestrator::elapsed_s() {
  return static_cast<double>(transport_.now_ns() - start_ns_) * 1e-9;
}

void Orchestrator::log(const nlohmann::json& record) {
  if (log_) *log_ << record.dump() << '\n';
}

double Orchestrator::ensure_rate(HostState& h) {
  if (!h.rate_hz) {
    h.rate_hz = config_.rate_hz ? *config_.rate_hz
                                : prober::calibrate_rate(transport_, h.address,
                                                         config_.calibration_samples);
  }
  return *h.rate_hz;
}

CycleResult Orchestrator::run_cycle(const std::string& host) {
  CycleResult res;
  res.host = host;
  res.time_s = elapsed_s();
  res.signal_id = next_signal_id_++;
  ++cycles_;

  registry_.with_host(host, [&](HostState& h) {
    if (!h.profile) {
      h.profile = std::make_unique<profiler::HostProfile>(config_.profiler, rng_.next_u64());
      h.jitter = features::JitterReferenceSet(config_.jitter_refs, config_.jitter_history);
    }
  });

  try {
    // The rate lives in the registry; calibration itself runs unlocked.
    auto rate = registry_.with_host(host, [](HostState& h) { return h.rate_hz; });
    if (!rate) {
      HostState scratch;
      scratch.address = host;
      const double r = ensure_rate(scratch);
      registry_.with_host(host, [&](HostState& h) { h.rate_hz = r; });
      rate = r;
    }
    res.rate_hz = *rate;

    RandomSource& mls_rng = mls_rng_ ? *mls_rng_ : rng_;
    const auto mls = signal::generate_mls(config_.m, mls_rng);
    const auto x = signal::modulate(mls, res.signal_id, res.rate_hz);

    prober::ProbeOptions opts;
    opts.rate_hz = res.rate_hz;
    opts.timeout_s = config_.timeout_factor * 2.0 / res.rate_hz;
    opts.degraded_loss_fraction = config_.degraded_loss_fraction;
    prober::RawProbe raw = prober::probe(transport_, host, x, opts);
    res.loss_fraction = raw.loss_fraction();
    res.degraded = raw.degraded;
    if (raw.received() < raw.size()) raw = prober::impute_timeouts(raw, opts.timeout_s);
    const auto resp = prober::compute_response(raw);
    if (config_.log_jitter_histogram) {
      res.jitter_histogram = jitter_histogram(resp.z, config_.jitter_bin_s, config_.jitter_bins);
      res.jitter_bin_s = config_.jitter_bin_s;
    }

    registry_.with_host(host, [&](HostState& h) {
      auto ex = features::extract(resp, x, h.jitter, rng_);
      h.jitter = std::move(ex.state);
      res.features = ex.features;
      res.verdict = h.profile->evaluate(ex.features);
      ++h.probes;
      if (!res.verdict->in_grace) {
        h.window.push_back(res.verdict->score);
        if (h.window.size() > config_.window) h.window.pop_front();
        double s = 0.0;
        for (double v : h.window) s += v;
        res.windowed_score = s / static_cast<double>(h.window.size());
        res.windowed_alert = res.windowed_score > res.verdict->threshold;
      } else {
        res.windowed_score = res.verdict->score;
      }
    });
  } catch (const Error& e) {
    res.error = e.what();
  }

  log(res.to_json());
  if (alerts_ && res.verdict && res.verdict->is_alert) {
    AlertRecord a;
    a.host = host;
    a.time_s = res.time_s;
    a.signal_id = res.signal_id;
    a.score = res.verdict->score;
    a.threshold = res.verdict->threshold;
    a.windowed_score = res.windowed_score;
    a.features = *res.features;
    alerts_->emit(a);
  }
  return res;
}

std::optional<CycleResult> Orchestrator::step() {
  auto next = schedule_next(registry_, rng_);
  if (!next) return std::nullopt;
  const bool grace = registry_.with_host(next->host, [](const HostState& h) {
    return !h.profile || h.profile->in_grace();
  });
  const double slot = grace ? 1.0 / config_.grace_rate_multiplier : 1.0;
  const double now = elapsed_s();
  if (next_slot_s_ < now - slot) next_slot_s_ = now;  // fell behind: restart the slot grid
  const double target = next_slot_s_ + next->delay * slot;
  if (target > now) transport_.wait(target - now);
  next_slot_s_ += slot;
  return run_cycle(next->host);
}

void Orchestrator::save_profiles(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& host : registry_.hosts()) {
    registry_.with_host(host, [&](const HostState& h) {
      if (!h.profile) return;
      nlohmann::json j{{"address", h.address},
                       {"profile", h.profile->to_json()},
                       {"jitter", jitter_to_json(h.jitter)},
                       {"window", std::vector<double>(h.window.begin(), h.window.end())},
                       {"probes", h.probes}};
      if (h.rate_hz) j["rate_hz"] = *h.rate_hz;
      profiler::write_file_atomic(dir / profile_file_name(h.address), j.dump(1) + "\n");
    });
  }
}

std::size_t Orchestrator::load_profiles(const std::filesystem::path& dir) {
  std::size_t loaded = 0;
  for (const auto& host : registry_.hosts()) {
    const auto path = dir / profile_file_name(host);
    if (!std::filesystem::exists(path)) continue;
    if (registry_.with_host(host, [](const HostState& h) { return h.profile != nullptr; })) continue;
    std::ifstream in(path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corrupt profile " + path.string() + ": " + e.what());
    }
    registry_.with_host(host, [&](HostState& h) {
      h.profile = std::make_unique<profiler::HostProfile>(
          profiler::HostProfile::from_json(j.at("profile")));
      h.jitter = jitter_from_json(j.at("jitter"));
      h.window.clear();
      for (double v : j.at("window")) h.window.push_back(v);
      h.probes = j.at("probes").get<std::uint64_t>();
      if (j.contains("rate_hz")) h.rate_hz = j.at("rate_hz").get<double>();
    });
    ++loaded;
  }
  return loaded;
}

}  // namespace vesper::orchestrator
