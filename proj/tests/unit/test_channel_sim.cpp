#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "vesper/channel_sim.hpp"
#include "vesper/signal.hpp"

namespace {

using namespace vesper;
using namespace vesper::sim;

ElementTiming element(RandomSource& rng, double noise = 0.0) {
  ElementTiming e;
  e.prop_s = 1e-7 * rng.uniform01();
  e.trans_s_per_byte = 8e-9 * (0.5 + rng.uniform01());
  e.proc_base_s_per_byte = 2e-9 * rng.uniform01();
  e.proc_load_gain = 0.2 * rng.uniform01();
  e.noise_scale = noise;
  return e;
}

SimTopology random_topology(RandomSource& rng, std::size_t switches, double noise = 0.0) {
  SimTopology t;
  t.origin = element(rng, noise);
  for (std::size_t i = 0; i < switches; ++i) t.path.push_back(element(rng, noise));
  t.responder.nic = element(rng, noise);
  t.responder.reply_s_per_byte = 5e-8 * (0.5 + rng.uniform01());
  t.responder.reply_noise_scale = noise;
  return t;
}

double hop(const ElementTiming& e, std::uint32_t b) {
  return e.prop_s + b * (e.trans_s_per_byte + e.proc_base_s_per_byte);
}

// Sum of per-hop terms along the benign round trip of one idle-network frame.
double benign_rtt(const SimTopology& t, std::uint32_t b) {
  double s = hop(t.origin, b) + b * t.responder.reply_s_per_byte + hop(t.responder.nic, b);
  for (const auto& e : t.path) s += 2.0 * hop(e, b);
  return s;
}

constexpr double kEps = std::numeric_limits<double>::epsilon();

signal::ExcitationSignal slow_probe(int m, std::uint64_t state, double rate_hz) {
  return signal::modulate(signal::generate_mls_from_state(m, state), 1, rate_hz);
}

std::vector<double> rtts(const SimulatedProbe& p) {
  std::vector<double> out;
  for (const auto& f : p.trace) out.push_back(f.rx_s ? *f.rx_s - f.tx_s : std::nan(""));
  return out;
}

TEST(HopTime, FollowsLoadModel) {
  ElementTiming e{1e-6, 1e-8, 2e-9, 0.5, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(hop_time(e, 1000, {0}), 1e-6 + 1000 * (1e-8 + 2e-9));
  EXPECT_DOUBLE_EQ(hop_time(e, 1000, {2}), 1e-6 + 1000 * (1e-8 + 2e-9 * 2.0));
  EXPECT_DOUBLE_EQ(hop_time(e, 1000, {0}, 1.5), 1e-6 + 1000 * (1e-8 + 3e-9));
}

TEST(ClosedForm, NoiselessSimulationMatchesPerPing) {
  SeededRandom topo_rng(1), sim_rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto top = random_topology(topo_rng, 1 + trial % 4, 0.1).noiseless();
    const auto x = slow_probe(6, 1 + trial, 200.0);
    const auto p = simulate_probe(top, x, sim_rng);
    const auto y = rtts(p);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double want = benign_rtt(top, x.sizes[i]);
      // Timestamps are absolute, so rounding scales with the arrival time.
      EXPECT_NEAR(y[i], want, 64 * kEps * *p.trace[i].rx_s);
      EXPECT_NEAR(closed_form_rtt(top, x.sizes[i]), want, 1e-12 * want);
    }
  }
}

TEST(ClosedForm, InLineAttackAddsTwoInterceptorHops) {
  SeededRandom rng(3);
  for (AttackKind kind : {AttackKind::IlNb, AttackKind::IlDh, AttackKind::IpDh}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto top = random_topology(rng, 3);
      AttackConfig a;
      a.kind = kind;
      a.position = static_cast<std::size_t>(trial % 3);
      a.interceptor = top.path[a.position];
      top.attack = a;
      const auto x = slow_probe(5, 3, 200.0);
      const auto y = rtts(simulate_probe(top, x, rng));
      auto benign = top;
      benign.attack.reset();
      const auto y0 = rtts(simulate_probe(benign, x, rng));
      double shift = 0.0;
      std::size_t large = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.sizes[i] != signal::kLargeFrameBytes) continue;
        shift += y[i] - y0[i];
        ++large;
      }
      shift /= static_cast<double>(large);
      const double want = 2.0 * hop_time(a.interceptor, signal::kLargeFrameBytes, {});
      EXPECT_NEAR(shift, want, 1e-12 * benign_rtt(top, 1542)) << to_string(kind);
      EXPECT_NEAR(closed_form_rtt(top, 1542) - closed_form_rtt(benign, 1542), want, 1e-18);
    }
  }
}

TEST(ClosedForm, EndPointDetourCrossesTheSwitchTwiceMore) {
  SeededRandom rng(4);
  auto top = random_topology(rng, 2);
  AttackConfig a;
  a.kind = AttackKind::EpTd;
  a.position = 1;
  a.interceptor = element(rng);
  top.attack = a;
  const double want = benign_rtt(top, 1542) + 2.0 * hop(a.interceptor, 1542) +
                      2.0 * hop(top.path[1], 1542);
  EXPECT_NEAR(closed_form_rtt(top, 1542), want, 1e-12 * want);
  const auto y = rtts(simulate_probe(top, slow_probe(3, 1, 100.0), rng));
  const auto x = slow_probe(3, 1, 100.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(y[i], closed_form_rtt(top, x.sizes[i]), 1e-12 * want);
  }
}

TEST(Queueing, BackToBackFramesWaitForTheServer) {
  SimTopology t;
  t.origin = ElementTiming{0.0, 1e-6, 0.0, 0.0, 0.0, 0.0};
  t.path = {ElementTiming{}};
  t.responder.reply_s_per_byte = 1e-12;
  signal::ExcitationSignal x;
  x.sizes = {1000, 1000};
  x.rate_hz = 1e6;  // second request leaves 1 us after the first
  SeededRandom rng(1);
  const auto y = rtts(simulate_probe(t, x, rng));
  // Origin serves 1 ms per frame: the second frame starts when the first leaves.
  EXPECT_NEAR(y[0], 1e-3, 1e-9);
  EXPECT_NEAR(y[1], 2e-3 - 1e-6, 1e-9);
}

TEST(Interceptor, ZeroCostInterceptorIsInvisible) {
  SeededRandom topo(5);
  auto top = random_topology(topo, 2, 0.1);
  top.cross_traffic.rate_hz = 2000.0;
  top.probe_load_sigma = 0.05;
  auto attacked = top;
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 1;
  attacked.attack = a;
  const auto x = slow_probe(8, 17, 20000.0);
  SeededRandom r1(9), r2(9);
  AdversaryState adv;
  const auto p0 = simulate_probe(top, x, r1);
  const auto p1 = simulate_probe(attacked, x, r2, 0, &adv);
  EXPECT_EQ(rtts(p0), rtts(p1));
  EXPECT_TRUE(p1.trace[0].intercepted);
}

TEST(Evasion, DoSDropsRequests) {
  SeededRandom rng(6);
  auto top = random_topology(rng, 1);
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 0;
  a.evasion = Evasion::DoS;
  a.evasion_params.dos_drop_fraction = 1.0;
  top.attack = a;
  const auto p = simulate_probe(top, slow_probe(5, 1, 1000.0), rng);
  for (const auto& f : p.trace) EXPECT_FALSE(f.rx_s);
  top.attack->evasion_params.dos_drop_fraction = 0.5;
  const auto q = simulate_probe(top, slow_probe(10, 1, 1e5), rng);
  std::size_t lost = 0;
  for (const auto& f : q.trace) lost += !f.rx_s;
  EXPECT_NEAR(static_cast<double>(lost), 1023 * 0.5, 4 * std::sqrt(1023 * 0.25));
}

TEST(Evasion, SpoofWithVictimTimingOnLastCableIsExact) {
  SeededRandom rng(7);
  auto top = random_topology(rng, 2);
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 2;
  a.interceptor = element(rng);
  a.evasion = Evasion::Spoof;
  a.evasion_params.spoof_responder = top.responder;
  top.attack = a;
  auto benign = top;
  benign.attack.reset();
  const auto x = slow_probe(5, 2, 500.0);
  const auto ys = rtts(simulate_probe(top, x, rng));
  const auto yb = rtts(simulate_probe(benign, x, rng));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(ys[i], yb[i], 1e-13);
}

TEST(Evasion, SpoofShortCircuitsTheRemainingPath) {
  SeededRandom rng(8);
  auto top = random_topology(rng, 3);
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 0;
  a.evasion = Evasion::Spoof;
  a.evasion_params.spoof_responder = top.responder;
  top.attack = a;
  const auto x = slow_probe(4, 2, 500.0);
  const auto p = simulate_probe(top, x, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto b = x.sizes[i];
    const double want = hop(top.origin, b) + b * top.responder.reply_s_per_byte +
                        hop(top.responder.nic, b);
    EXPECT_NEAR(*p.trace[i].rx_s - p.trace[i].tx_s, want, 1e-12 * want);
    EXPECT_TRUE(p.trace[i].answered_by_interceptor);
  }
}

TEST(Evasion, ReplayCapturesThenAnswersFromTheBuffer) {
  SeededRandom rng(9);
  auto top = random_topology(rng, 2);
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 1;
  a.interceptor = element(rng);
  a.evasion = Evasion::Replay;
  top.attack = a;
  AdversaryState adv;
  const auto x1 = slow_probe(5, 1, 500.0);
  const auto p1 = simulate_probe(top, x1, rng, 0, &adv);
  ASSERT_TRUE(adv.captured_rtt);
  EXPECT_FALSE(p1.trace[0].answered_by_interceptor);
  const auto recorded = *adv.captured_rtt;
  EXPECT_EQ(recorded, rtts(p1));
  const auto p2 = simulate_probe(top, x1, rng, 0, &adv);
  for (std::size_t i = 0; i < x1.size(); ++i) {
    EXPECT_TRUE(p2.trace[i].answered_by_interceptor);
    // Same excitation: the replayed timing is reproduced exactly.
    EXPECT_NEAR(*p2.trace[i].rx_s - p2.trace[i].tx_s, recorded[i], 1e-13);
  }
  // The buffer is not refreshed while replaying.
  EXPECT_EQ(*adv.captured_rtt, recorded);
  EXPECT_EQ(adv.probes_seen, 2u);
}

TEST(Evasion, BypassAInterceptsOnlyTheFirstRequest) {
  SeededRandom rng(10);
  auto top = random_topology(rng, 2);
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 1;
  a.interceptor = element(rng);
  a.evasion = Evasion::BypassA;
  top.attack = a;
  auto benign = top;
  benign.attack.reset();
  const auto x = slow_probe(4, 3, 500.0);
  const auto p = simulate_probe(top, x, rng);
  const auto y0 = rtts(simulate_probe(benign, x, rng));
  EXPECT_TRUE(p.trace[0].intercepted);
  EXPECT_NEAR(*p.trace[0].rx_s - p.trace[0].tx_s - y0[0], hop(a.interceptor, x.sizes[0]), 1e-13);
  for (std::size_t i = 1; i < x.size(); ++i) {
    EXPECT_FALSE(p.trace[i].intercepted);
    EXPECT_NEAR(*p.trace[i].rx_s - p.trace[i].tx_s, y0[i], 1e-13);
  }
}

TEST(Evasion, BypassBAlternatesWholeProbes) {
  SeededRandom rng(11);
  auto top = random_topology(rng, 1);
  AttackConfig a;
  a.kind = AttackKind::IlDh;
  a.position = 0;
  a.evasion = Evasion::BypassB;
  a.evasion_params.bypass_active_probes = 2;
  a.evasion_params.bypass_passive_probes = 1;
  top.attack = a;
  AdversaryState adv;
  const auto x = slow_probe(3, 1, 500.0);
  std::vector<bool> seen;
  for (int i = 0; i < 6; ++i) seen.push_back(simulate_probe(top, x, rng, 0, &adv).trace[0].intercepted);
  EXPECT_EQ(seen, (std::vector<bool>{true, true, false, true, true, false}));
}

TEST(Timeout, LateRepliesAreLost) {
  SeededRandom rng(12);
  const auto top = random_topology(rng, 1);
  const auto x = slow_probe(3, 1, 100.0);
  const auto p = simulate_probe(top, x, rng, 0, nullptr, 1e-9);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_FALSE(p.trace[i].rx_s);
    EXPECT_FALSE(p.raw.rx_ns[i]);
  }
}

TEST(Topology, Validation) {
  SeededRandom rng(13);
  auto top = random_topology(rng, 2);
  top.path[0].trans_s_per_byte = -1.0;
  EXPECT_THROW(top.validate(), ParameterError);
  top = random_topology(rng, 2);
  AttackConfig a;
  a.kind = AttackKind::IpDh;
  a.position = 2;
  top.attack = a;
  EXPECT_THROW(top.validate(), ParameterError);
  top.attack->kind = AttackKind::IlDh;
  EXPECT_NO_THROW(top.validate());
  top.attack->kind = AttackKind::EpTd;
  top.attack->position = 0;
  top.attack->evasion = Evasion::BypassA;
  EXPECT_THROW(top.validate(), ParameterError);
  EXPECT_THROW(evasion_from_string("bogus"), ConfigError);
  EXPECT_EQ(attack_kind_from_string("IP-DH"), AttackKind::IpDh);
}

}  // namespace
