#include "vesper/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"

#include "vesper/common.hpp"

namespace vesper::analysis {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kNormalApproxAbove = 200;

double two_sided_p(double t, std::size_t n, std::size_t df) {
  if (!std::isfinite(t)) return std::isnan(t) ? kNaN : 0.0;
  if (n > kNormalApproxAbove) {
    return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(t)));
  }
  if (df == 0) return kNaN;
  const boost::math::students_t dist(static_cast<double>(df));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

void check_signals(const std::vector<std::vector<double>>& xs,
                   const std::vector<std::vector<double>>& ys, std::size_t k) {
  if (xs.size() != ys.size()) throw ParameterError("regression: |X| != |Y|");
  if (xs.empty()) throw ParameterError("regression: no signals");
  if (k == 0) throw ParameterError("regression: lag k must be >= 1");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() < k || ys[i].size() < k) {
      throw ParameterError("regression: signal " + std::to_string(i) + " shorter than k");
    }
  }
}

}  // namespace

RegressionReport ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                     std::vector<std::string> names) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto k = static_cast<std::size_t>(x.cols());
  if (static_cast<std::size_t>(y.size()) != n) throw ParameterError("ols: row count mismatch");
  if (n == 0) throw ParameterError("ols: no observations");
  if (names.empty()) {
    names.push_back("intercept");
    for (std::size_t j = 1; j <= k; ++j) names.push_back("x" + std::to_string(j));
  }
  if (names.size() != k + 1) throw ParameterError("ols: need one name per coefficient");

  Eigen::MatrixXd full(n, k + 1);
  full.col(0).setOnes();
  full.rightCols(k) = x;

  // Keep a column only if it raises the rank of the columns kept so far.
  RegressionReport r;
  r.names = std::move(names);
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j <= k; ++j) {
    Eigen::MatrixXd trial(n, kept.size() + 1);
    for (std::size_t c = 0; c < kept.size(); ++c) trial.col(c) = full.col(kept[c]);
    trial.col(kept.size()) = full.col(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
    if (static_cast<std::size_t>(qr.rank()) == kept.size() + 1) {
      kept.push_back(j);
    } else {
      r.dropped_columns.push_back(j);
    }
  }

  Eigen::MatrixXd a(n, kept.size());
  for (std::size_t c = 0; c < kept.size(); ++c) a.col(c) = full.col(kept[c]);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - a * beta;
  const double rss = resid.squaredNorm();
  const double mean = y.mean();
  const double tss = (y.array() - mean).matrix().squaredNorm();

  const std::size_t p = kept.size();
  r.observations = n;
  r.degrees_of_freedom = n > p ? n - p : 0;
  const double sigma2 = r.degrees_of_freedom > 0 ? rss / static_cast<double>(r.degrees_of_freedom) : kNaN;
  r.residual_error = std::sqrt(sigma2);
  r.r_squared = tss > 0.0 ? 1.0 - rss / tss : (rss == 0.0 ? 1.0 : 0.0);

  const Eigen::MatrixXd cov = sigma2 * (a.transpose() * a).inverse();
  r.coefficients.assign(k + 1, kNaN);
  r.std_errors.assign(k + 1, kNaN);
  r.t_values.assign(k + 1, kNaN);
  r.p_values.assign(k + 1, kNaN);
  for (std::size_t c = 0; c < p; ++c) {
    const std::size_t j = kept[c];
    r.coefficients[j] = beta(static_cast<Eigen::Index>(c));
    const double se = std::sqrt(cov(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)));
    r.std_errors[j] = se;
    if (se > 0.0) {
      r.t_values[j] = r.coefficients[j] / se;
    } else if (se == 0.0) {
      // Exact fit: t is infinite unless the coefficient is exactly zero.
      r.t_values[j] = r.coefficients[j] == 0.0 ? 0.0
                                               : std::copysign(std::numeric_limits<double>::infinity(),
                                                               r.coefficients[j]);
    }
    r.p_values[j] = std::isnan(r.t_values[j]) ? kNaN : two_sided_p(r.t_values[j], n, r.degrees_of_freedom);
  }
  return r;
}

RegressionReport rtt_dependency_regression(const std::vector<std::vector<double>>& xs,
                                           const std::vector<std::vector<double>>& ys,
                                           std::size_t k) {
  check_signals(xs, ys, k);
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) x(i, static_cast<Eigen::Index>(j)) = xs[i][j];
    y(i) = ys[i][k - 1];
  }
  std::vector<std::string> names{"intercept"};
  for (std::size_t j = 1; j <= k; ++j) names.push_back("x[" + std::to_string(j) + "]");
  return ols(x, y, names);
}

double error_reduction(const std::vector<std::vector<double>>& xs,
                       const std::vector<std::vector<double>>& ys, std::size_t k) {
  check_signals(xs, ys, k);
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd single(n, 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    single(i, 0) = xs[i][k - 1];
    y(i) = ys[i][k - 1];
  }
  const double e1 = ols(single, y).residual_error;
  const double ek = rtt_dependency_regression(xs, ys, k).residual_error;
  if (!(e1 > 0.0)) return 0.0;
  return (e1 - ek) / e1;
}

// ----------------------------------------------------------------- scoring

double auc(const std::vector<ScoredSample>& samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && samples[idx[j]].score == samples[idx[i]].score) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (samples[idx[t]].positive) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = samples.size() - pos;
  if (pos == 0 || neg == 0) throw ParameterError("AUC needs both positive and negative samples");
  const double np = static_cast<double>(pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(neg));
}

DetectionReport score_run(const std::vector<ScoredSample>& samples, std::optional<double> threshold,
                          std::optional<double> onset_s) {
  DetectionReport r;
  for (const auto& s : samples) (s.positive ? r.positives : r.negatives)++;
  if (r.positives == 0 || r.negatives == 0) {
    throw ParameterError("score_run: metrics are undefined without both classes");
  }
  r.auc = auc(samples);

  // EER: walk thresholds from above every score downwards.
  std::vector<double> levels;
  for (const auto& s : samples) levels.push_back(s.score);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  const double np = static_cast<double>(r.positives);
  const double nn = static_cast<double>(r.negatives);
  double best_gap = std::numeric_limits<double>::infinity();
  auto consider = [&](double thr, bool inclusive) {
    std::size_t tp = 0, fp = 0;
    for (const auto& s : samples) {
      const bool flag = inclusive ? s.score >= thr : s.score > thr;
      if (flag) (s.positive ? tp : fp)++;
    }
    const double fpr = static_cast<double>(fp) / nn;
    const double fnr = 1.0 - static_cast<double>(tp) / np;
    const double gap = std::abs(fpr - fnr);
    if (gap < best_gap) {
      best_gap = gap;
      r.eer = (fpr + fnr) / 2.0;
      r.eer_threshold = thr;
    }
  };
  consider(levels.back(), false);
  for (auto it = levels.rbegin(); it != levels.rend(); ++it) consider(*it, true);

  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> first_alert;
  for (const auto& s : samples) {
    const bool flag = threshold ? s.score > *threshold : s.alert;
    if (flag && s.positive) ++tp;
    if (flag && !s.positive) ++fp;
    if (!flag && s.positive) ++fn;
    if (!flag && !s.positive) ++tn;
    if (flag && onset_s && s.time_s >= *onset_s && (!first_alert || s.time_s < *first_alert)) {
      first_alert = s.time_s;
    }
  }
  r.tpr = static_cast<double>(tp) / np;
  r.fpr = static_cast<double>(fp) / nn;
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(samples.size());
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : kNaN;
  if (first_alert) r.detection_delay_s = *first_alert - *onset_s;
  return r;
}

// ------------------------------------------------------------------- logs

ParsedLog parse_log(std::istream& in) {
  ParsedLog out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "onset") {
        out.onsets[j.at("host").get<std::string>()] = j.at("t").get<double>();
      } else if (type == "alert") {
        ++out.alerts;
      } else if (type == "probe") {
        LogProbe p;
        p.t = j.at("t").get<double>();
        p.host = j.at("host").get<std::string>();
        if (j.contains("rmse")) {
          p.scored = true;
          p.rmse = j.at("rmse").get<double>();
          if (!j.at("threshold").is_null()) p.threshold = j.at("threshold").get<double>();
          p.alert = j.at("alert").get<bool>();
          p.grace = j.at("grace").get<bool>();
          p.windowed = j.at("windowed").get<double>();
          p.windowed_alert = j.at("windowed_alert").get<bool>();
        }
        if (j.contains("features")) {
          const auto& f = j.at("features");
          p.has_features = true;
          p.v_eh = f.at("v_eh").get<double>();
          p.v_rtt = f.at("v_rtt").get<double>();
          p.v_jit = f.at("v_jit").get<double>();
        }
        if (j.contains("jitter_hist")) {
          p.jitter_hist = j.at("jitter_hist").get<std::vector<double>>();
          p.jitter_bin_s = j.at("jitter_bin_s").get<double>();
        }
        out.probes.push_back(std::move(p));
      } else {
        ++out.malformed;
      }
    } catch (const nlohmann::json::exception&) {
      ++out.malformed;
    }
  }
  return out;
}

std::vector<ScoredSample> labeled_scores(const ParsedLog& log, const std::string& host,
                                         bool windowed) {
  std::vector<ScoredSample> out;
  for (const auto& p : log.probes) {
    if (!p.scored || p.grace) continue;
    if (!host.empty() && p.host != host) continue;
    auto on = log.onsets.find(p.host);
    ScoredSample s;
    s.score = windowed ? p.windowed : p.rmse;
    s.positive = on != log.onsets.end() && p.t >= on->second;
    s.time_s = p.t;
    s.alert = windowed ? p.windowed_alert : p.alert;
    out.push_back(s);
  }
  return out;
}

ExportSummary export_report(std::istream& in, const std::filesystem::path& out_dir) {
  return export_report(parse_log(in), out_dir);
}

ExportSummary export_report(const ParsedLog& log, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ExportSummary s;
  s.malformed = log.malformed;
  auto open = [&](const std::string& name, const std::string& header) {
    const auto path = out_dir / name;
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f.precision(17);
    f << header << '\n';
    s.files.push_back(path);
    return f;
  };

  {
    auto f = open("scores.dat", "# t host rmse threshold alert windowed windowed_alert grace");
    for (const auto& p : log.probes) {
      if (!p.scored) continue;
      f << p.t << ' ' << p.host << ' ' << p.rmse << ' ';
      if (p.threshold) {
        f << *p.threshold;
      } else {
        f << "nan";
      }
      f << ' ' << p.alert << ' ' << p.windowed << ' ' << p.windowed_alert << ' ' << p.grace << '\n';
      ++s.score_rows;
    }
  }
  {
    auto f = open("features.dat", "# t host v_eh v_rtt v_jit");
    for (const auto& p : log.probes) {
      if (!p.has_features) continue;
      f << p.t << ' ' << p.host << ' ' << p.v_eh << ' ' << p.v_rtt << ' ' << p.v_jit << '\n';
      ++s.feature_rows;
    }
  }
  {
    // Summed per host and phase (before / after the host's attack onset).
    std::map<std::pair<std::string, std::string>, std::vector<double>> sums;
    std::map<std::pair<std::string, std::string>, double> widths;
    for (const auto& p : log.probes) {
      if (p.jitter_hist.empty()) continue;
      auto on = log.onsets.find(p.host);
      const std::string phase = on != log.onsets.end() && p.t >= on->second ? "attack" : "benign";
      auto& acc = sums[{p.host, phase}];
      if (acc.size() < p.jitter_hist.size()) acc.resize(p.jitter_hist.size(), 0.0);
      for (std::size_t i = 0; i < p.jitter_hist.size(); ++i) acc[i] += p.jitter_hist[i];
      widths[{p.host, phase}] = p.jitter_bin_s;
    }
    auto f = open("jitter.dat", "# host phase bin_lo_s bin_hi_s count");
    for (const auto& [key, counts] : sums) {
      const double w = widths[key];
      for (std::size_t i = 0; i < counts.size(); ++i) {
        f << key.first << ' ' << key.second << ' ' << w * static_cast<double>(i) << ' '
          << w * static_cast<double>(i + 1) << ' ' << counts[i] << '\n';
        ++s.jitter_rows;
      }
    }
  }
  {
    auto f = open("onset.dat", "# t host");
    for (const auto& [host, t] : log.onsets) {
      f << t << ' ' << host << '\n';
      ++s.onset_rows;
    }
  }
  return s;
}

}  // namespace vesper::analysis
