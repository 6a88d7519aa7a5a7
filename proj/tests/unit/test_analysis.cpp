#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vesper/analysis.hpp"
#include "vesper/common.hpp"

namespace {

using namespace vesper;
using namespace vesper::analysis;

// O(n^2) Mann-Whitney: P(score+ > score-) + 0.5 P(tie).
double pairwise_auc(const std::vector<ScoredSample>& s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& a : s) {
    if (!a.positive) continue;
    for (const auto& b : s) {
      if (b.positive) continue;
      wins += a.score > b.score ? 1.0 : (a.score == b.score ? 0.5 : 0.0);
      pairs += 1.0;
    }
  }
  return wins / pairs;
}

TEST(Auc, MatchesPairwiseOracleExactly) {
  SeededRandom rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ScoredSample> s(50);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i].positive = i < 20 || rng.coin(0.2);
      // Coarse grid so ties are common.
      s[i].score = std::round((rng.normal() + (s[i].positive ? 0.7 : 0.0)) * 4.0) / 4.0;
    }
    s[0].positive = true;
    s[49].positive = false;
    EXPECT_EQ(auc(s), pairwise_auc(s)) << trial;
  }
}

TEST(Auc, Extremes) {
  std::vector<ScoredSample> s = {{1, false}, {2, false}, {3, true}, {4, true}};
  EXPECT_EQ(auc(s), 1.0);
  for (auto& v : s) v.score = -v.score;
  EXPECT_EQ(auc(s), 0.0);
  for (auto& v : s) v.score = 0.0;
  EXPECT_EQ(auc(s), 0.5);
  EXPECT_THROW(auc({{1, true}}), ParameterError);
}

TEST(ScoreRun, OperatingPointAndDelay) {
  std::vector<ScoredSample> s;
  for (int i = 0; i < 10; ++i) s.push_back({static_cast<double>(i), i >= 5, static_cast<double>(i), i >= 6});
  const auto r = score_run(s, std::nullopt, 5.0);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.eer, 0.0);
  EXPECT_DOUBLE_EQ(r.tpr, 0.8);
  EXPECT_DOUBLE_EQ(r.fpr, 0.0);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.9);
  ASSERT_TRUE(r.detection_delay_s);
  EXPECT_DOUBLE_EQ(*r.detection_delay_s, 1.0);
  const auto t = score_run(s, 2.5);
  EXPECT_DOUBLE_EQ(t.fpr, 0.4);
  EXPECT_DOUBLE_EQ(t.tpr, 1.0);
  const auto none = score_run(s, 100.0);
  EXPECT_TRUE(std::isnan(none.precision));
  EXPECT_THROW(score_run({{1, true}, {2, true}}), ParameterError);
}

TEST(ScoreRun, EqualErrorRateOnOverlap) {
  // Negatives 0..9, positives 5..14: at threshold 7 both error rates are 0.25 or 0.3.
  std::vector<ScoredSample> s;
  for (int i = 0; i < 10; ++i) s.push_back({static_cast<double>(i), false});
  for (int i = 5; i < 15; ++i) s.push_back({static_cast<double>(i) + 0.5, true});
  const auto r = score_run(s);
  EXPECT_NEAR(r.eer, 0.25, 0.051);
}

TEST(Ols, RecoversPlantedModelExactly) {
  SeededRandom rng(2);
  const int n = 300, k = 4;
  Eigen::MatrixXd x(n, k);
  Eigen::VectorXd y(n);
  const double beta[] = {0.5, 2.0, -1.0, 0.0, 3.0};
  for (int i = 0; i < n; ++i) {
    y(i) = beta[0];
    for (int j = 0; j < k; ++j) {
      x(i, j) = rng.normal();
      y(i) += beta[j + 1] * x(i, j);
    }
  }
  const auto r = ols(x, y);
  EXPECT_NEAR(r.r_squared, 1.0, 1e-12);
  for (int j = 0; j <= k; ++j) EXPECT_NEAR(r.coefficients[j], beta[j], 1e-10);
  EXPECT_EQ(r.degrees_of_freedom, static_cast<std::size_t>(n - k - 1));
  EXPECT_TRUE(r.dropped_columns.empty());
}

TEST(Ols, CoefficientsWithinThreeStandardErrors) {
  SeededRandom rng(3);
  int covered = 0, total = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 150;
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.normal();
      x(i, 1) = rng.uniform01();
      y(i) = 1.0 + 0.3 * x(i, 0) - 2.0 * x(i, 1) + 0.5 * rng.normal();
    }
    const auto r = ols(x, y);
    const double truth[] = {1.0, 0.3, -2.0};
    for (int j = 0; j < 3; ++j) {
      covered += std::abs(r.coefficients[j] - truth[j]) <= 3.0 * r.std_errors[j];
      ++total;
    }
    EXPECT_GT(r.p_values[2], 0.0);
    EXPECT_LT(r.p_values[2], 1e-6);
  }
  EXPECT_GE(covered, total - 2);
}

TEST(Ols, DropsCollinearColumns) {
  Eigen::MatrixXd x(6, 2);
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = i;
    x(i, 1) = 2.0 * i;
    y(i) = 1.0 + i + 0.01 * (i % 2);
  }
  const auto r = ols(x, y);
  EXPECT_EQ(r.dropped_columns, std::vector<std::size_t>{2});
  EXPECT_TRUE(std::isnan(r.coefficients[2]));
  EXPECT_FALSE(std::isnan(r.coefficients[1]));
}

TEST(Ols, SmallSamplesUseStudentT) {
  Eigen::MatrixXd x(5, 1);
  Eigen::VectorXd y(5);
  x << 1, 2, 3, 4, 5;
  y << 1.1, 1.9, 3.2, 3.8, 5.1;
  const auto r = ols(x, y);
  // Reference: two-sided t test with 3 degrees of freedom.
  const double t = r.t_values[1];
  EXPECT_GT(t, 10.0);
  EXPECT_GT(r.p_values[1], 2.0 * 0.5 * std::erfc(t / std::sqrt(2.0)));
}

TEST(Regression, LagRegressionShapesAndErrorReduction) {
  // y[k] depends on x[k] and x[k-1]; adding earlier lags must help.
  SeededRandom rng(4);
  std::vector<std::vector<double>> xs, ys;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> x(4), y(4);
    for (auto& v : x) v = rng.coin(0.5) ? 1542.0 : 42.0;
    for (int k = 0; k < 4; ++k) y[k] = 1e-7 * x[k] + (k ? 4e-8 * x[k - 1] : 0.0) + 1e-6 * rng.normal();
    xs.push_back(x);
    ys.push_back(y);
  }
  const auto r = rtt_dependency_regression(xs, ys, 3);
  ASSERT_EQ(r.coefficients.size(), 4u);
  EXPECT_EQ(r.names[3], "x[3]");
  EXPECT_NEAR(r.coefficients[3], 1e-7, 1e-8);
  EXPECT_NEAR(r.coefficients[2], 4e-8, 1e-8);
  EXPECT_GT(error_reduction(xs, ys, 3), 0.0);
  EXPECT_THROW(rtt_dependency_regression(xs, ys, 5), ParameterError);
  EXPECT_THROW(rtt_dependency_regression(xs, ys, 0), ParameterError);
}

const char* kLog =
    R"({"type":"probe","t":0.1,"host":"h","rmse":0.5,"threshold":null,"alert":false,"grace":true,"windowed":0.5,"windowed_alert":false,"features":{"v_eh":1,"v_rtt":2,"v_jit":-1},"jitter_bin_s":1e-5,"jitter_hist":[1,2]}
{"type":"probe","t":1.0,"host":"h","rmse":0.2,"threshold":0.9,"alert":false,"grace":false,"windowed":0.2,"windowed_alert":false,"features":{"v_eh":1,"v_rtt":2,"v_jit":-1},"jitter_bin_s":1e-5,"jitter_hist":[3,4]}
not json
{"type":"onset","host":"h","t":1.5}
{"type":"probe","t":2.0,"host":"h","rmse":2.0,"threshold":0.9,"alert":true,"grace":false,"windowed":1.1,"windowed_alert":true,"features":{"v_eh":1,"v_rtt":3,"v_jit":-9},"jitter_bin_s":1e-5,"jitter_hist":[0,9]}
{"type":"alert","host":"h","t":2.0}
{"type":"probe","t":3.0,"host":"h","error":"lost"}
{"type":"mystery"}
)";

TEST(Logs, ParseAndLabel) {
  std::istringstream in(kLog);
  const auto log = parse_log(in);
  EXPECT_EQ(log.probes.size(), 4u);
  EXPECT_EQ(log.malformed, 2u);
  EXPECT_EQ(log.alerts, 1u);
  EXPECT_DOUBLE_EQ(log.onsets.at("h"), 1.5);
  const auto s = labeled_scores(log);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_FALSE(s[0].positive);
  EXPECT_TRUE(s[1].positive);
  EXPECT_TRUE(s[1].alert);
  EXPECT_DOUBLE_EQ(labeled_scores(log, "h", true)[1].score, 1.1);
  EXPECT_TRUE(labeled_scores(log, "other").empty());
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

TEST(Export, WritesHeadersEvenWhenEmpty) {
  const auto dir = std::filesystem::temp_directory_path() / "vesper_export_empty";
  std::filesystem::remove_all(dir);
  std::istringstream in("");
  const auto s = export_report(in, dir);
  EXPECT_EQ(s.files.size(), 4u);
  for (const auto& f : s.files) {
    const auto l = lines_of(f);
    ASSERT_EQ(l.size(), 1u) << f;
    EXPECT_EQ(l[0][0], '#');
  }
  std::filesystem::remove_all(dir);
}

TEST(Export, RowsPerSection) {
  const auto dir = std::filesystem::temp_directory_path() / "vesper_export_rows";
  std::filesystem::remove_all(dir);
  std::istringstream in(kLog);
  const auto s = export_report(in, dir);
  EXPECT_EQ(s.score_rows, 3u);
  EXPECT_EQ(s.feature_rows, 3u);
  EXPECT_EQ(s.jitter_rows, 4u);
  EXPECT_EQ(s.onset_rows, 1u);
  EXPECT_EQ(s.malformed, 2u);
  const auto jitter = lines_of(dir / "jitter.dat");
  EXPECT_EQ(jitter[1], "h attack 0 1.0000000000000001e-05 0");
  EXPECT_EQ(jitter[3], "h benign 0 1.0000000000000001e-05 4");
  EXPECT_EQ(lines_of(dir / "onset.dat")[1], "1.5 h");
  std::filesystem::remove_all(dir);
}

}  // namespace
