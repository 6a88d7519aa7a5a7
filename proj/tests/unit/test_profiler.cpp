#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "vesper/profiler.hpp"

namespace {

using namespace vesper;
using namespace vesper::profiler;

std::vector<double> random_input(RandomSource& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform01();
  return v;
}

TEST(Autoencoder, GradientMatchesCentralDifferences) {
  SeededRandom rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Autoencoder ae(3, 1 + trial % 2, 0.1);
    ae.initialize(rng);
    auto p = ae.parameters();
    for (auto& w : p) w += 0.5 * rng.normal();  // move off the initial scale
    ae.set_parameters(p);
    const auto v = random_input(rng, 3);
    const auto g = ae.gradient(v);
    ASSERT_EQ(g.size(), p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-5;
      auto q = p;
      q[i] = p[i] + h;
      ae.set_parameters(q);
      const double up = ae.loss(v);
      q[i] = p[i] - h;
      ae.set_parameters(q);
      const double down = ae.loss(v);
      ae.set_parameters(p);
      const double fd = (up - down) / (2 * h);
      EXPECT_LE(std::abs(fd - g[i]), 1e-5 * std::max(std::abs(fd), 1e-6)) << trial << ":" << i;
    }
  }
}

TEST(Autoencoder, SmallStepsDescend) {
  SeededRandom rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Autoencoder ae(3, 2, 1e-3);
    ae.initialize(rng);
    const auto v = random_input(rng, 3);
    const double before = ae.loss(v);
    ASSERT_TRUE(ae.train_step(v));
    EXPECT_LT(ae.loss(v), before);
  }
}

TEST(Autoencoder, ParameterLayoutAndJson) {
  SeededRandom rng(3);
  Autoencoder ae(3, 2, 0.1);
  ae.initialize(rng);
  EXPECT_EQ(ae.parameters().size(), 2u * 3 + 2 + 3 * 2 + 3);
  const auto back = Autoencoder::from_json(ae.to_json());
  EXPECT_EQ(back.parameters(), ae.parameters());
  EXPECT_EQ(back.hidden(), 2u);
  const double bound = 1.0 / std::sqrt(3.0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_LE(std::abs(ae.parameters()[i]), bound);
}

TEST(Autoencoder, NonFiniteInputIsRejected) {
  SeededRandom rng(4);
  Autoencoder ae;
  ae.initialize(rng);
  const auto before = ae.parameters();
  const std::vector<double> bad = {1.0, std::nan(""), 0.0};
  EXPECT_THROW(ae.train_step(bad), ParameterError);
  EXPECT_EQ(ae.parameters(), before);
}

TEST(RunningStats, AgreesWithTwoPass) {
  SeededRandom rng(5);
  std::vector<double> xs(1000);
  RunningStats s;
  for (auto& x : xs) {
    x = 1e3 + rng.normal();
    s.add(x);
  }
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(s.mean(), mean, 1e-9);
  EXPECT_NEAR(s.stddev(), std::sqrt(ss / (xs.size() - 1)), 1e-9);
  const auto back = RunningStats::from_json(s.to_json());
  EXPECT_EQ(back.mean(), s.mean());
  EXPECT_EQ(back.stddev(), s.stddev());
}

TEST(MinMax, ScalesIntoUnitRange) {
  MinMaxNormalizer n(2);
  EXPECT_EQ(n.normalize(std::vector<double>{5, 5}), (std::vector<double>{0, 0}));
  n.update(std::vector<double>{1, 10});
  EXPECT_EQ(n.normalize(std::vector<double>{1, 10}), (std::vector<double>{0, 0}));
  n.update(std::vector<double>{3, 20});
  const auto v = n.normalize(std::vector<double>{2, 15});
  EXPECT_DOUBLE_EQ(v[0], 0.5);
  EXPECT_DOUBLE_EQ(v[1], 0.5);
  EXPECT_THROW(n.update(std::vector<double>{1}), ParameterError);
}

TEST(Tail, ThresholdAndTailRulesAgree) {
  EXPECT_NEAR(upper_tail_quantile(0.05), 1.6448536269514722, 1e-12);
  EXPECT_NEAR(upper_tail_probability(1.6448536269514722, 0.0, 1.0), 0.05, 1e-12);
  EXPECT_THROW(upper_tail_quantile(0.0), ParameterError);

  SeededRandom rng(6);
  ProfilerConfig cfg;
  cfg.grace_n = 50;
  HostProfile p(cfg, 7);
  for (int i = 0; i < 200; ++i) {
    p.evaluate({1.0 + 0.01 * rng.normal(), 2.0 + 0.01 * rng.normal(), -rng.uniform01()});
  }
  for (double r = 0.0; r < 1.0; r += 0.001) {
    for (double pt : {1e-2, 1e-4}) {
      EXPECT_EQ(p.alert_by_tail(r, pt), p.alert_by_threshold(r, pt)) << r;
    }
  }
}

features::FeatureVector benign(RandomSource& rng) {
  return {1e-14 * (1.0 + 0.05 * rng.normal()), 2e-4 * (1.0 + 0.02 * rng.normal()),
          -0.3 * rng.uniform01()};
}

TEST(HostProfile, GraceSuppressesAlerts) {
  SeededRandom rng(8);
  ProfilerConfig cfg;
  cfg.grace_n = 100;
  HostProfile p(cfg, 1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_TRUE(p.in_grace());
    const auto v = p.evaluate(i == 50 ? features::FeatureVector{1.0, 1.0, -50.0} : benign(rng));
    EXPECT_FALSE(v.is_alert);
    EXPECT_TRUE(v.in_grace);
  }
  EXPECT_FALSE(p.in_grace());
  EXPECT_EQ(p.count(), 100u);
}

TEST(HostProfile, AlertsNeverMoveTheBaseline) {
  SeededRandom rng(9);
  ProfilerConfig cfg;
  HostProfile p(cfg, 2);
  for (int i = 0; i < 1000; ++i) p.evaluate(benign(rng));
  const double mu = p.rmse_stats().mean();
  const double sigma = p.rmse_stats().stddev();
  const auto n = p.rmse_stats().count();
  const auto params = p.model().parameters();
  const auto lo = p.normalizer().min();
  const auto hi = p.normalizer().max();
  for (int i = 0; i < 1000; ++i) {
    auto a = benign(rng);
    a.v_rtt_star *= 1.5;
    a.v_eh *= 3.0;
    a.v_jit = -30.0;
    const auto v = p.evaluate(a);
    EXPECT_TRUE(v.is_alert);
    EXPECT_FALSE(v.trained);
  }
  EXPECT_EQ(p.rmse_stats().mean(), mu);
  EXPECT_EQ(p.rmse_stats().stddev(), sigma);
  EXPECT_EQ(p.rmse_stats().count(), n);
  EXPECT_EQ(p.model().parameters(), params);
  EXPECT_EQ(p.normalizer().min(), lo);
  EXPECT_EQ(p.normalizer().max(), hi);
}

TEST(HostProfile, GuardSkipsTrainingAfterAnAlert) {
  SeededRandom rng(10);
  ProfilerConfig cfg;
  cfg.alert_guard = 3;
  HostProfile p(cfg, 3);
  for (int i = 0; i < 300; ++i) p.evaluate(benign(rng));
  ASSERT_TRUE(p.evaluate({1.0, 1.0, -40.0}).is_alert);
  // The next three verdicts still see the alert in the guard window.
  for (int i = 0; i < 3; ++i) {
    const auto v = p.evaluate(benign(rng));
    EXPECT_FALSE(v.is_alert);
    EXPECT_FALSE(v.trained);
  }
  EXPECT_TRUE(p.evaluate(benign(rng)).trained);
}

TEST(HostProfile, JsonRoundTripIsExact) {
  SeededRandom rng(11);
  HostProfile p(ProfilerConfig{}, 4);
  for (int i = 0; i < 150; ++i) p.evaluate(benign(rng));
  const auto path = std::filesystem::temp_directory_path() / "vesper_profile_rt.json";
  p.save(path);
  auto q = HostProfile::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(q.to_json(), p.to_json());
  SeededRandom r1(12), r2(12);
  for (int i = 0; i < 50; ++i) {
    const auto a = p.evaluate(benign(r1));
    const auto b = q.evaluate(benign(r2));
    EXPECT_EQ(a.score, b.score);
    EXPECT_EQ(a.is_alert, b.is_alert);
  }
}

TEST(HostProfile, RejectsForeignFiles) {
  EXPECT_THROW(HostProfile::from_json({{"format", "other"}}), ConfigError);
  auto j = HostProfile(ProfilerConfig{}, 1).to_json();
  j["version"] = 99;
  EXPECT_THROW(HostProfile::from_json(j), ConfigError);
}

TEST(Windowed, TrailingMean) {
  const std::vector<double> s = {1, 2, 3, 4, 5};
  EXPECT_EQ(windowed_score(s, 2), (std::vector<double>{1, 1.5, 2.5, 3.5, 4.5}));
  EXPECT_EQ(windowed_score(s, 1), s);
  EXPECT_EQ(windowed_score(s, 10), (std::vector<double>{1, 1.5, 2, 2.5, 3}));
  EXPECT_THROW(windowed_score(s, 0), ParameterError);
}

}  // namespace
