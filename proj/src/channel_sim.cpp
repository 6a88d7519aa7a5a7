#include "vesper/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vesper::sim {
namespace {

void require_nonnegative(double v, const std::string& what, const char* field) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ParameterError(what + "." + field + " must be finite and >= 0");
  }
}

enum class StageKind { Element, Interceptor, Reply };

struct Stage {
  StageKind kind = StageKind::Element;
  const ElementTiming* element = nullptr;
  const ResponderTiming* responder = nullptr;
  bool cross_traffic = false;
};

// Forward and reverse stage lists for the benign path with the interceptor
// (if any) spliced in. `intercept_fwd` / `intercept_rev` are the interceptor's
// indices in each list, or npos.
struct Route {
  std::vector<Stage> forward;
  std::vector<Stage> reverse;
  std::size_t intercept_fwd = std::string::npos;
  std::size_t intercept_rev = std::string::npos;
};

Stage element_stage(const ElementTiming& e, bool cross) {
  return Stage{StageKind::Element, &e, nullptr, cross};
}

Stage interceptor_stage(const ElementTiming& e) {
  return Stage{StageKind::Interceptor, &e, nullptr, false};
}

Route build_route(const SimTopology& top, bool with_attack) {
  Route r;
  const auto& path = top.path;
  const std::size_t k = path.size();
  const AttackConfig* atk = (with_attack && top.attack) ? &*top.attack : nullptr;

  r.forward.push_back(element_stage(top.origin, false));
  for (std::size_t i = 0; i < k; ++i) {
    if (atk && i == atk->position) {
      switch (atk->kind) {
        case AttackKind::IlNb:
        case AttackKind::IlDh:
        case AttackKind::IpDh:
          r.intercept_fwd = r.forward.size();
          r.forward.push_back(interceptor_stage(atk->interceptor));
          r.forward.push_back(element_stage(path[i], true));
          break;
        case AttackKind::EpTd:
          // Diverted: switch -> attacker host -> same switch again.
          r.forward.push_back(element_stage(path[i], true));
          r.intercept_fwd = r.forward.size();
          r.forward.push_back(interceptor_stage(atk->interceptor));
          r.forward.push_back(element_stage(path[i], true));
          break;
      }
    } else {
      r.forward.push_back(element_stage(path[i], true));
    }
  }
  if (atk && atk->position == k) {
    // Only IL devices may sit on the last cable; validate() enforces it.
    r.intercept_fwd = r.forward.size();
    r.forward.push_back(interceptor_stage(atk->interceptor));
  }

  r.reverse.push_back(element_stage(top.responder.nic, false));
  if (atk && atk->position == k) {
    r.intercept_rev = r.reverse.size();
    r.reverse.push_back(interceptor_stage(atk->interceptor));
  }
  for (std::size_t ii = k; ii-- > 0;) {
    if (atk && ii == atk->position) {
      switch (atk->kind) {
        case AttackKind::IlNb:
        case AttackKind::IlDh:
          // The cable before path[ii] is crossed after the switch on the way back.
          r.reverse.push_back(element_stage(path[ii], true));
          r.intercept_rev = r.reverse.size();
          r.reverse.push_back(interceptor_stage(atk->interceptor));
          break;
        case AttackKind::IpDh:
          r.intercept_rev = r.reverse.size();
          r.reverse.push_back(interceptor_stage(atk->interceptor));
          r.reverse.push_back(element_stage(path[ii], true));
          break;
        case AttackKind::EpTd:
          r.reverse.push_back(element_stage(path[ii], true));
          r.intercept_rev = r.reverse.size();
          r.reverse.push_back(interceptor_stage(atk->interceptor));
          r.reverse.push_back(element_stage(path[ii], true));
          break;
      }
    } else {
      r.reverse.push_back(element_stage(path[ii], true));
    }
  }
  return r;
}

double nominal_stage_time(const Stage& st, std::uint32_t bytes) {
  if (st.kind == StageKind::Reply) return bytes * st.responder->reply_s_per_byte;
  return hop_time(*st.element, bytes, ElementState{});
}

struct Frame {
  std::size_t index = 0;
  std::uint32_t bytes = 0;
  double t = 0.0;
  bool alive = true;
  bool intercepted = false;
  bool answered = false;
};

/// One FIFO element serving probe frames and Poisson background frames.
class StageServer {
 public:
  StageServer(const Stage& st, const SimTopology& top, double load, RandomSource& rng)
      : st_(st), top_(top), load_(load), rng_(rng) {
    if (st.cross_traffic) {
      const auto& ct = top.cross_traffic;
      bg_rate_ = ct.rate_hz;
      if (ct.burst_probability > 0.0 && rng_.coin(ct.burst_probability)) bg_rate_ = ct.burst_rate_hz;
    }
  }

  /// Arrival time -> time the frame reaches the next element.
  double serve_probe(double arrival, std::uint32_t bytes, std::size_t burst_pos) {
    if (bg_rate_ > 0.0) {
      if (!bg_started_) {
        // Background already flowing before the first probe frame arrives.
        next_bg_ = arrival - 2e-3 + rng_.exponential(bg_rate_);
        bg_started_ = true;
      }
      while (next_bg_ < arrival) {
        const auto& ct = top_.cross_traffic;
        const auto span = static_cast<std::uint64_t>(ct.max_bytes - ct.min_bytes + 1);
        const auto b = ct.min_bytes + static_cast<std::uint32_t>(rng_.below(span));
        serve(next_bg_, b, top_.warmup_packets);
        next_bg_ += rng_.exponential(bg_rate_);
      }
    }
    return serve(arrival, bytes, burst_pos);
  }

 private:
  double serve(double arrival, std::uint32_t bytes, std::size_t burst_pos) {
    while (!in_system_.empty() && in_system_.front() <= arrival) in_system_.pop_front();
    const std::size_t depth = in_system_.size();
    double service = 0.0;
    double warmup = 0.0;
    double latency = 0.0;
    if (st_.kind == StageKind::Reply) {
      const auto& r = *st_.responder;
      const double noise = rng_.lognormal_unit_mean(r.reply_noise_scale);
      service = bytes * r.reply_s_per_byte * (1.0 + r.reply_load_gain * depth) * load_ * noise;
      warmup = r.warmup_penalty_s;
    } else {
      const auto& e = *st_.element;
      const double noise = rng_.lognormal_unit_mean(e.noise_scale);
      service = bytes * (e.trans_s_per_byte +
                         e.proc_base_s_per_byte * (1.0 + e.proc_load_gain * depth) * load_ * noise);
      warmup = e.warmup_penalty_s;
      latency = e.prop_s;
    }
    const std::size_t w = top_.warmup_packets;
    if (warmup > 0.0 && burst_pos < w) {
      service += warmup * static_cast<double>(w - burst_pos) / static_cast<double>(w) *
                 2.0 * rng_.uniform01();
    }
    const double start = std::max(arrival, last_departure_);
    const double departure = start + service;
    last_departure_ = departure;
    in_system_.push_back(departure);
    return departure + latency;
  }

  const Stage& st_;
  const SimTopology& top_;
  double load_;
  RandomSource& rng_;
  std::deque<double> in_system_;
  double last_departure_ = -std::numeric_limits<double>::infinity();
  double bg_rate_ = 0.0;
  double next_bg_ = 0.0;
  bool bg_started_ = false;
};

enum class InterceptMode { Active, Passive, FirstFrameOnly };

// Pushes frames through `stages`; frames are served in arrival order.
void run_stages(const std::vector<Stage>& stages, std::vector<Frame>& frames,
                const SimTopology& top, double load, RandomSource& rng, InterceptMode mode,
                double drop_fraction, bool forward) {
  std::vector<std::size_t> order(frames.size());
  for (const auto& st : stages) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frames[a].t < frames[b].t; });
    StageServer server(st, top, load, rng);
    std::size_t burst_pos = 0;
    for (std::size_t idx : order) {
      Frame& f = frames[idx];
      if (!f.alive) continue;
      if (st.kind == StageKind::Interceptor) {
        const bool active = mode == InterceptMode::Active ||
                            (mode == InterceptMode::FirstFrameOnly && forward && f.index == 0);
        if (!active) continue;  // passive wiretap: no buffering
        f.intercepted = true;
        if (drop_fraction > 0.0 && forward && rng.coin(drop_fraction)) {
          f.alive = false;
          continue;
        }
      }
      f.t = server.serve_probe(f.t, f.bytes, burst_pos++);
    }
  }
}

}  // namespace

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::EpTd: return "EP-TD";
    case AttackKind::IlNb: return "IL-NB";
    case AttackKind::IlDh: return "IL-DH";
    case AttackKind::IpDh: return "IP-DH";
  }
  return "?";
}

std::string to_string(Evasion e) {
  switch (e) {
    case Evasion::None: return "none";
    case Evasion::DoS: return "DoS";
    case Evasion::Spoof: return "Spoof";
    case Evasion::Replay: return "Replay";
    case Evasion::BypassA: return "BypassA";
    case Evasion::BypassB: return "BypassB";
  }
  return "?";
}

AttackKind attack_kind_from_string(const std::string& s) {
  for (auto k : {AttackKind::EpTd, AttackKind::IlNb, AttackKind::IlDh, AttackKind::IpDh}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown attack kind '" + s + "' (expected EP-TD, IL-NB, IL-DH or IP-DH)");
}

Evasion evasion_from_string(const std::string& s) {
  for (auto e : {Evasion::None, Evasion::DoS, Evasion::Spoof, Evasion::Replay, Evasion::BypassA,
                 Evasion::BypassB}) {
    if (to_string(e) == s) return e;
  }
  throw ConfigError("unknown evasion '" + s +
                    "' (expected none, DoS, Spoof, Replay, BypassA or BypassB)");
}

void ElementTiming::validate(const std::string& what) const {
  require_nonnegative(prop_s, what, "prop_s");
  require_nonnegative(trans_s_per_byte, what, "trans_s_per_byte");
  require_nonnegative(proc_base_s_per_byte, what, "proc_base_s_per_byte");
  require_nonnegative(proc_load_gain, what, "proc_load_gain");
  require_nonnegative(noise_scale, what, "noise_scale");
  require_nonnegative(warmup_penalty_s, what, "warmup_penalty_s");
}

void ResponderTiming::validate(const std::string& what) const {
  nic.validate(what + ".nic");
  if (!(reply_s_per_byte > 0.0) || !std::isfinite(reply_s_per_byte)) {
    throw ParameterError(what + ".reply_s_per_byte must be > 0");
  }
  require_nonnegative(reply_load_gain, what, "reply_load_gain");
  require_nonnegative(reply_noise_scale, what, "reply_noise_scale");
  require_nonnegative(warmup_penalty_s, what, "warmup_penalty_s");
}

void SimTopology::validate() const {
  origin.validate("origin");
  if (path.empty()) throw ParameterError("topology path must contain at least one element");
  for (std::size_t i = 0; i < path.size(); ++i) path[i].validate("path[" + std::to_string(i) + "]");
  responder.validate("responder");
  require_nonnegative(probe_load_sigma, "topology", "probe_load_sigma");
  require_nonnegative(cross_traffic.rate_hz, "cross_traffic", "rate_hz");
  require_nonnegative(cross_traffic.burst_rate_hz, "cross_traffic", "burst_rate_hz");
  if (cross_traffic.burst_probability < 0.0 || cross_traffic.burst_probability > 1.0) {
    throw ParameterError("cross_traffic.burst_probability must be in [0, 1]");
  }
  if (cross_traffic.min_bytes > cross_traffic.max_bytes) {
    throw ParameterError("cross_traffic.min_bytes exceeds max_bytes");
  }
  if (attack) {
    attack->interceptor.validate("attack.interceptor");
    const bool il = attack->kind == AttackKind::IlNb || attack->kind == AttackKind::IlDh;
    const std::size_t max_pos = il ? path.size() : path.size() - 1;
    if (attack->position > max_pos) {
      throw ParameterError("attack.position " + std::to_string(attack->position) +
                           " out of range for " + to_string(attack->kind));
    }
    const auto ev = attack->evasion;
    if (attack->kind == AttackKind::EpTd &&
        (ev == Evasion::BypassA || ev == Evasion::BypassB)) {
      throw ParameterError("bypass evasions need an in-line or in-point device, not EP-TD");
    }
    if (ev == Evasion::Spoof) attack->evasion_params.spoof_responder.validate("spoof_responder");
    const double dp = attack->evasion_params.dos_drop_fraction;
    if (dp < 0.0 || dp > 1.0) throw ParameterError("dos_drop_fraction must be in [0, 1]");
    if (ev == Evasion::BypassB && attack->evasion_params.bypass_active_probes +
                                         attack->evasion_params.bypass_passive_probes ==
                                     0) {
      throw ParameterError("BypassB schedule must have a nonzero period");
    }
  }
}

SimTopology SimTopology::noiseless() const {
  SimTopology t = *this;
  auto quiet = [](ElementTiming& e) {
    e.noise_scale = 0.0;
    e.warmup_penalty_s = 0.0;
  };
  quiet(t.origin);
  for (auto& e : t.path) quiet(e);
  quiet(t.responder.nic);
  t.responder.reply_noise_scale = 0.0;
  t.responder.warmup_penalty_s = 0.0;
  if (t.attack) {
    quiet(t.attack->interceptor);
    quiet(t.attack->evasion_params.spoof_responder.nic);
    t.attack->evasion_params.spoof_responder.reply_noise_scale = 0.0;
    t.attack->evasion_params.spoof_responder.warmup_penalty_s = 0.0;
  }
  t.cross_traffic = CrossTraffic{};
  t.probe_load_sigma = 0.0;
  return t;
}

double hop_time(const ElementTiming& e, std::uint32_t bytes, const ElementState& state,
                double noise_factor) {
  const double proc = e.proc_base_s_per_byte *
                      (1.0 + e.proc_load_gain * static_cast<double>(state.queue_depth)) *
                      noise_factor;
  return e.prop_s + bytes * (e.trans_s_per_byte + proc);
}

double closed_form_rtt(const SimTopology& top, std::uint32_t bytes) {
  const bool evading = top.attack && top.attack->evasion != Evasion::None;
  const Route r = build_route(top, top.attack.has_value() && !evading);
  double total = bytes * top.responder.reply_s_per_byte;
  for (const auto& st : r.forward) total += nominal_stage_time(st, bytes);
  for (const auto& st : r.reverse) total += nominal_stage_time(st, bytes);
  return total;
}

SimulatedProbe simulate_probe(const SimTopology& top, const signal::ExcitationSignal& x,
                              RandomSource& rng, std::int64_t epoch_ns,
                              AdversaryState* adversary, std::optional<double> timeout_s) {
  if (x.sizes.empty()) throw ParameterError("simulate_probe: empty excitation signal");
  if (!(x.rate_hz > 0.0)) throw ParameterError("simulate_probe: rate_hz must be > 0");
  top.validate();

  const std::size_t n = x.size();
  const double load = rng.lognormal_unit_mean(top.probe_load_sigma);
  std::vector<Frame> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    frames[i].index = i;
    frames[i].bytes = x.sizes[i];
    frames[i].t = static_cast<double>(i) / x.rate_hz;
  }

  const AttackConfig* atk = top.attack ? &*top.attack : nullptr;
  AdversaryState scratch;
  AdversaryState& adv = adversary ? *adversary : scratch;
  Evasion ev = atk ? atk->evasion : Evasion::None;
  InterceptMode mode = InterceptMode::Active;
  double drop = 0.0;
  bool replaying = false;
  bool spoofing = false;
  if (atk) {
    switch (ev) {
      case Evasion::None: break;
      case Evasion::DoS: drop = atk->evasion_params.dos_drop_fraction; break;
      case Evasion::Spoof: spoofing = true; break;
      case Evasion::Replay: replaying = adv.captured_rtt.has_value(); break;
      case Evasion::BypassA: mode = InterceptMode::FirstFrameOnly; break;
      case Evasion::BypassB: {
        const auto& p = atk->evasion_params;
        const std::size_t period = p.bypass_active_probes + p.bypass_passive_probes;
        mode = (adv.probes_seen % period) < p.bypass_active_probes ? InterceptMode::Active
                                                                    : InterceptMode::Passive;
        break;
      }
    }
  }

  const Route route = build_route(top, atk != nullptr);
  Stage reply{StageKind::Reply, nullptr, &top.responder, false};

  if (!spoofing && !replaying) {
    run_stages(route.forward, frames, top, load, rng, mode, drop, true);
    std::vector<Stage> back{reply};
    back.insert(back.end(), route.reverse.begin(), route.reverse.end());
    run_stages(back, frames, top, load, rng, mode, 0.0, false);
  } else {
    // The interceptor terminates the request and originates the reply.
    std::vector<Stage> fwd(route.forward.begin(),
                           route.forward.begin() + static_cast<std::ptrdiff_t>(route.intercept_fwd));
    std::vector<Stage> rev(route.reverse.begin() + static_cast<std::ptrdiff_t>(route.intercept_rev),
                           route.reverse.end());
    for (auto& f : frames) {
      f.intercepted = true;
      f.answered = true;
    }
    if (spoofing) {
      const auto& sp = atk->evasion_params.spoof_responder;
      run_stages(fwd, frames, top, load, rng, mode, 0.0, true);
      std::vector<Stage> back{Stage{StageKind::Reply, nullptr, &sp, false},
                              element_stage(sp.nic, false)};
      // Skip the interceptor's own forwarding stage: the spoofing NIC replaces it.
      back.insert(back.end(), rev.begin() + 1, rev.end());
      run_stages(back, frames, top, load, rng, mode, 0.0, false);
    } else {
      // Replay: buffer the request, then release the recorded reply timing,
      // re-based to this probe's transmit times, as early as physics allows.
      fwd.push_back(route.forward[route.intercept_fwd]);
      run_stages(fwd, frames, top, load, rng, mode, 0.0, true);
      const auto& captured = *adv.captured_rtt;
      for (auto& f : frames) {
        const double tx = static_cast<double>(f.index) / x.rate_hz;
        double nominal_return = 0.0;
        for (const auto& st : rev) nominal_return += nominal_stage_time(st, f.bytes);
        const double rec = f.index < captured.size() ? captured[f.index]
                                                     : std::numeric_limits<double>::quiet_NaN();
        if (std::isfinite(rec)) f.t = std::max(f.t, tx + rec - nominal_return);
      }
      run_stages(rev, frames, top, load, rng, mode, 0.0, false);
    }
  }

  SimulatedProbe out;
  out.raw.signal_id = x.signal_id;
  out.raw.epoch_ns = epoch_ns;
  out.raw.tx_ns.resize(n);
  out.raw.rx_ns.resize(n);
  out.trace.resize(n);
  bool complete = true;
  std::vector<double> rtt(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    const double tx = static_cast<double>(i) / x.rate_hz;
    auto& tr = out.trace[i];
    tr.tx_s = tx;
    tr.intercepted = frames[i].intercepted;
    tr.answered_by_interceptor = frames[i].answered;
    out.raw.tx_ns[i] = tx * 1e9;
    if (frames[i].alive && (!timeout_s || frames[i].t - tx <= *timeout_s)) {
      tr.rx_s = frames[i].t;
      out.raw.rx_ns[i] = frames[i].t * 1e9;
      rtt[i] = frames[i].t - tx;
    } else {
      complete = false;
    }
  }

  if (atk) {
    if (ev == Evasion::Replay && !replaying && complete) adv.captured_rtt = std::move(rtt);
    ++adv.probes_seen;
  }
  return out;
}

}  // namespace vesper::sim
