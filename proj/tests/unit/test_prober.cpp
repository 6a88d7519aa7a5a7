#include <gtest/gtest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "vesper/prober.hpp"
#include "vesper/signal.hpp"

namespace {

using namespace vesper;
using namespace vesper::prober;

RawProbe make_probe(std::vector<double> tx, std::vector<std::optional<double>> rx) {
  RawProbe p;
  p.tx_ns = std::move(tx);
  p.rx_ns = std::move(rx);
  return p;
}

TEST(Response, RttAndJitter) {
  const auto p = make_probe({0, 1000, 2000, 3000}, {500, 1800, std::nullopt, 3100});
  const auto r = compute_response(p);
  ASSERT_EQ(r.y.size(), 4u);
  EXPECT_DOUBLE_EQ(r.y[0], 500e-9);
  EXPECT_DOUBLE_EQ(r.y[1], 800e-9);
  EXPECT_TRUE(std::isnan(r.y[2]));
  EXPECT_DOUBLE_EQ(r.y[3], 100e-9);
  EXPECT_EQ(r.losses, std::vector<std::size_t>{2});
  ASSERT_EQ(r.z.size(), 2u);
  EXPECT_DOUBLE_EQ(r.z[0], 1300e-9);
  EXPECT_DOUBLE_EQ(r.z[1], 1300e-9);
}

TEST(Response, JitterUsesArrivalOrder) {
  // Reply 0 overtaken by reply 1.
  const auto r = compute_response(make_probe({0, 10}, {100, 50}));
  ASSERT_EQ(r.z.size(), 1u);
  EXPECT_DOUBLE_EQ(r.z[0], 50e-9);
}

TEST(Response, RejectsInvalidProbes) {
  EXPECT_THROW(compute_response(make_probe({0, 0}, {1, 2})), ParameterError);
  EXPECT_THROW(compute_response(make_probe({0, 10}, {1, 5})), ParameterError);
  EXPECT_THROW(compute_response(make_probe({0, 10}, {std::nullopt, std::nullopt})),
               EmptyResponseError);
}

TEST(Response, ImputeTimeouts) {
  const auto p = make_probe({0, 1000}, {200, std::nullopt});
  const auto q = impute_timeouts(p, 2e-6);
  EXPECT_DOUBLE_EQ(*q.rx_ns[0], 200);
  EXPECT_DOUBLE_EQ(*q.rx_ns[1], 3000);
  EXPECT_DOUBLE_EQ(p.loss_fraction(), 0.5);
  EXPECT_DOUBLE_EQ(q.loss_fraction(), 0.0);
}

TEST(Rate, TwoOverMeanRtt) {
  EXPECT_NEAR(rate_from_mean_rtt(0.0001763151), 11343.33, 0.005);
  EXPECT_THROW(rate_from_mean_rtt(0.0), CalibrationError);
  EXPECT_THROW(rate_from_mean_rtt(std::nan("")), CalibrationError);
}

TEST(MatchTable, RejectsForeignDuplicateAndUnsent) {
  MatchTable t(7, 4);
  t.record_tx(0, 10);
  t.record_tx(1, 20);
  EXPECT_TRUE(t.record_rx(7, 0, 15));
  EXPECT_FALSE(t.record_rx(7, 0, 16));
  EXPECT_FALSE(t.record_rx(8, 1, 25));
  EXPECT_FALSE(t.record_rx(7, 2, 30));
  EXPECT_FALSE(t.record_rx(7, 9, 30));
  EXPECT_EQ(t.received(), 1u);
  EXPECT_EQ(t.rejected(), 4u);
  const auto p = t.snapshot("h", 5);
  EXPECT_EQ(p.signal_id, 7);
  EXPECT_EQ(p.epoch_ns, 5);
  EXPECT_DOUBLE_EQ(*p.rx_ns[0], 15);
  EXPECT_FALSE(p.rx_ns[1]);
}

TEST(MatchTable, ConcurrentEmitterAndReceiver) {
  const std::size_t n = 4000;
  MatchTable t(1, n);
  for (std::size_t i = 0; i < n; ++i) t.record_tx(static_cast<std::uint16_t>(i), static_cast<double>(i));
  std::thread a([&] {
    for (std::size_t i = 0; i < n; i += 2) t.record_rx(1, static_cast<std::uint16_t>(i), i + 0.5);
  });
  std::thread b([&] {
    for (std::size_t i = 1; i < n; i += 2) t.record_rx(1, static_cast<std::uint16_t>(i), i + 0.5);
    for (std::size_t i = 0; i < n; ++i) t.record_rx(2, static_cast<std::uint16_t>(i), 0);
  });
  a.join();
  b.join();
  EXPECT_EQ(t.received(), n);
  EXPECT_EQ(t.rejected(), n);
}

class FakeTransport : public Transport {
 public:
  RawProbe send_probe(const std::string& target, const signal::ExcitationSignal& x,
                      const ProbeOptions& opts) override {
    RawProbe p;
    p.target = target;
    p.signal_id = x.signal_id;
    for (std::size_t i = 0; i < x.size(); ++i) {
      p.tx_ns.push_back(1e9 * static_cast<double>(i) / opts.rate_hz);
      if (i % drop_every == 0) p.rx_ns.push_back(std::nullopt);
      else p.rx_ns.push_back(p.tx_ns.back() + 100e3);
    }
    p.aborted = abort;
    return p;
  }
  std::vector<std::optional<double>> isolated_pings(const std::string&, std::uint32_t bytes,
                                                    std::size_t count) override {
    EXPECT_EQ(bytes, signal::kLargeFrameBytes);
    std::vector<std::optional<double>> out(count, 2e-4);
    out[0] = std::nullopt;
    return out;
  }
  std::int64_t now_ns() override { return 0; }
  void wait(double) override {}

  std::size_t drop_every = 1000;
  bool abort = false;
};

TEST(Probe, DegradedFlagAndAbort) {
  FakeTransport t;
  const auto x = signal::modulate(signal::generate_mls_from_state(4, 1));
  ProbeOptions o;
  o.rate_hz = 1000.0;
  o.degraded_loss_fraction = 0.1;
  EXPECT_FALSE(probe(t, "h", x, o).degraded);
  t.drop_every = 5;  // 3 of 15
  EXPECT_TRUE(probe(t, "h", x, o).degraded);
  t.abort = true;
  EXPECT_THROW(probe(t, "h", x, o), TransportError);
  o.rate_hz = 0.0;
  EXPECT_THROW(probe(t, "h", x, o), ParameterError);
}

TEST(Probe, CalibrationIgnoresLostPings) {
  FakeTransport t;
  EXPECT_DOUBLE_EQ(calibrate_rate(t, "h", 5), 2.0 / 2e-4);
  EXPECT_THROW(calibrate_rate(t, "h", 0), ParameterError);
}

TEST(Probe, PayloadBytes) {
  EXPECT_EQ(icmp_payload_bytes(42), 0u);
  EXPECT_EQ(icmp_payload_bytes(1542), 1500u);
  EXPECT_THROW(icmp_payload_bytes(41), ParameterError);
}

}  // namespace
