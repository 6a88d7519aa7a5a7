#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

/// Offline analysis: RTT dependency regression, ROC scoring, plot data.
namespace vesper::analysis {

struct RegressionReport {
  /// Intercept first, then one entry per descriptor. NaN for dropped columns.
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> t_values;
  std::vector<double> p_values;
  std::vector<std::string> names;
  /// Descriptor columns (1-based, intercept is 0) removed for collinearity.
  std::vector<std::size_t> dropped_columns;
  /// sqrt(RSS / (n - p)).
  double residual_error = 0.0;
  double r_squared = 0.0;
  std::size_t observations = 0;
  std::size_t degrees_of_freedom = 0;
};

/// OLS of y on [1, X]. p-values are two-sided: normal approximation above
/// 200 observations, Student t otherwise.
RegressionReport ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                     std::vector<std::string> names = {});

/// y_i[k] ~ x_i[1] + ... + x_i[k] (1-based lags) over all signal pairs.
RegressionReport rtt_dependency_regression(const std::vector<std::vector<double>>& xs,
                                           const std::vector<std::vector<double>>& ys,
                                           std::size_t k);

/// (e_1 - e_k) / e_1 where e_1 is the residual error of y[k] ~ x[k] and
/// e_k that of y[k] ~ x[1..k].
double error_reduction(const std::vector<std::vector<double>>& xs,
                       const std::vector<std::vector<double>>& ys, std::size_t k);

struct ScoredSample {
  double score = 0.0;
  bool positive = false;
  double time_s = 0.0;
  /// The detector's own decision, used when no threshold is given.
  bool alert = false;
};

struct DetectionReport {
  double auc = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double accuracy = 0.0;
  /// NaN when nothing was flagged.
  double precision = 0.0;
  std::optional<double> detection_delay_s;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Mann-Whitney AUC with tied scores counted as one half.
double auc(const std::vector<ScoredSample>& samples);

/// Throws ParameterError unless both classes are present. Operating point:
/// score > threshold, or the recorded alert flags when threshold is absent.
DetectionReport score_run(const std::vector<ScoredSample>& samples,
                          std::optional<double> threshold = std::nullopt,
                          std::optional<double> onset_s = std::nullopt);

/// Probe record of a score log.
struct LogProbe {
  double t = 0.0;
  std::string host;
  bool scored = false;
  double rmse = 0.0;
  std::optional<double> threshold;
  bool alert = false;
  bool grace = true;
  double windowed = 0.0;
  bool windowed_alert = false;
  bool has_features = false;
  double v_eh = 0.0, v_rtt = 0.0, v_jit = 0.0;
  double jitter_bin_s = 0.0;
  std::vector<double> jitter_hist;
};

struct ParsedLog {
  std::vector<LogProbe> probes;
  std::map<std::string, double> onsets;
  std::size_t alerts = 0;
  std::size_t malformed = 0;
};

ParsedLog parse_log(std::istream& in);

/// Post-grace scored probes labeled by onset; `host` empty means every host.
std::vector<ScoredSample> labeled_scores(const ParsedLog& log, const std::string& host = {},
                                         bool windowed = false);

struct ExportSummary {
  std::size_t score_rows = 0;
  std::size_t feature_rows = 0;
  std::size_t jitter_rows = 0;
  std::size_t onset_rows = 0;
  std::size_t malformed = 0;
  std::vector<std::filesystem::path> files;
};

/// Writes scores.dat, features.dat, jitter.dat and onset.dat into out_dir:
/// whitespace-separated columns with a '#' header line.
ExportSummary export_report(std::istream& log, const std::filesystem::path& out_dir);
ExportSummary export_report(const ParsedLog& log, const std::filesystem::path& out_dir);

}  // namespace vesper::analysis
