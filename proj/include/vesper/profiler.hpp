#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "vesper/common.hpp"
#include "vesper/features.hpp"

/// Host profiler: per-host autoencoder trained online on benign feature
/// vectors, scored by reconstruction RMSE against a Gaussian tail.
namespace vesper::profiler {

inline constexpr std::size_t kFeatureCount = 3;

/// Fully connected n-b-n network with logistic activations on both layers.
class Autoencoder {
 public:
  Autoencoder(std::size_t inputs = kFeatureCount, std::size_t hidden = 2,
              double learning_rate = 0.1);

  /// Weights uniform in +-1/sqrt(fan_in), biases zero.
  void initialize(RandomSource& rng);

  std::size_t inputs() const { return inputs_; }
  std::size_t hidden() const { return hidden_; }
  double learning_rate() const { return learning_rate_; }

  std::vector<double> forward(std::span<const double> v) const;
  /// 0.5 * ||forward(v) - v||^2.
  double loss(std::span<const double> v) const;
  /// Gradient of loss() with respect to parameters(), by back-propagation.
  std::vector<double> gradient(std::span<const double> v) const;
  /// One SGD step. Returns false (model untouched) if the gradient is not finite.
  bool train_step(std::span<const double> v);

  /// Flat view: encoder weights (hidden x inputs, row-major), encoder
  /// biases, decoder weights (inputs x hidden), decoder biases.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);

  nlohmann::json to_json() const;
  static Autoencoder from_json(const nlohmann::json& j);

 private:
  struct Activations {
    std::vector<double> hidden;
    std::vector<double> output;
  };
  Activations run(std::span<const double> v) const;
  void check_input(std::span<const double> v) const;

  std::size_t inputs_;
  std::size_t hidden_;
  double learning_rate_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

/// sqrt(sum (a_i - b_i)^2 / n).
double rmse(std::span<const double> a, std::span<const double> b);

/// Welford running mean / sample standard deviation.
class RunningStats {
 public:
  void add(double x);
  std::uint64_t count() const { return n_; }
  double mean() const { return mean_; }
  double stddev() const;

  nlohmann::json to_json() const;
  static RunningStats from_json(const nlohmann::json& j);

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Per-feature running min/max scaling to [0, 1]. Bounds only grow and are
/// moved only by observations the model learns from.
class MinMaxNormalizer {
 public:
  explicit MinMaxNormalizer(std::size_t dims = kFeatureCount);
  void update(std::span<const double> v);
  std::vector<double> normalize(std::span<const double> v) const;
  bool empty() const { return !seen_; }
  const std::vector<double>& min() const { return min_; }
  const std::vector<double>& max() const { return max_; }

  nlohmann::json to_json() const;
  static MinMaxNormalizer from_json(const nlohmann::json& j);

 private:
  bool seen_ = false;
  std::vector<double> min_, max_;
};

/// P(X > r) for X ~ Normal(mu, sigma).
double upper_tail_probability(double r, double mu, double sigma);
/// z such that P(Z > z) = p for a standard normal Z.
double upper_tail_quantile(double p);

struct ProfilerConfig {
  std::size_t hidden = 2;
  double learning_rate = 0.1;
  std::size_t grace_n = 100;
  double p_thr = 1e-4;
  /// Training is skipped if any of the last `alert_guard` verdicts alerted.
  std::size_t alert_guard = 5;
};

struct Verdict {
  double score = 0.0;
  bool is_alert = false;
  bool trained = false;
  bool in_grace = true;
  /// mu_r + z(p_thr) * sigma_r at decision time (infinite while undefined).
  double threshold = 0.0;
};

std::array<double, kFeatureCount> as_array(const features::FeatureVector& v);

class HostProfile {
 public:
  static constexpr int kFormatVersion = 1;

  HostProfile(const ProfilerConfig& config, std::uint64_t seed);

  /// Normalize, reconstruct, score; alert iff past grace and the RMSE is in
  /// the p_thr upper tail of the benign RMSE distribution; otherwise (absent
  /// recent alerts) learn from v and fold its RMSE into mu_r / sigma_r.
  Verdict evaluate(const features::FeatureVector& v, double p_thr);
  Verdict evaluate(const features::FeatureVector& v) { return evaluate(v, config_.p_thr); }

  /// Same alert rule written as a threshold comparison, r > mu + z * sigma.
  bool alert_by_threshold(double r, double p_thr) const;
  bool alert_by_tail(double r, double p_thr) const;
  double threshold(double p_thr) const;

  const ProfilerConfig& config() const { return config_; }
  const Autoencoder& model() const { return model_; }
  const MinMaxNormalizer& normalizer() const { return normalizer_; }
  const RunningStats& rmse_stats() const { return stats_; }
  std::uint64_t count() const { return count_; }
  bool in_grace() const { return count_ < config_.grace_n; }
  const std::deque<bool>& recent_alerts() const { return recent_alerts_; }

  nlohmann::json to_json() const;
  static HostProfile from_json(const nlohmann::json& j);
  /// Written to a temporary sibling and renamed into place.
  void save(const std::filesystem::path& path) const;
  static HostProfile load(const std::filesystem::path& path);

 private:
  HostProfile() = default;

  ProfilerConfig config_;
  Autoencoder model_;
  MinMaxNormalizer normalizer_;
  RunningStats stats_;
  std::uint64_t count_ = 0;
  std::uint64_t skipped_steps_ = 0;
  std::deque<bool> recent_alerts_;
};

/// Trailing moving average; the first window-1 outputs average what is available.
std::vector<double> windowed_score(std::span<const double> scores, std::size_t window);

/// Atomically replace `path` with `text`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace vesper::profiler
