#include "vesper/profiler.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace vesper::profiler {
namespace {

double logistic(double a) { return 1.0 / (1.0 + std::exp(-a)); }

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::vector<double> json_vector(const nlohmann::json& j) { return j.get<std::vector<double>>(); }

}  // namespace

// ---------------------------------------------------------------- Autoencoder

Autoencoder::Autoencoder(std::size_t inputs, std::size_t hidden, double learning_rate)
    : inputs_(inputs),
      hidden_(hidden),
      learning_rate_(learning_rate),
      w1_(hidden * inputs, 0.0),
      b1_(hidden, 0.0),
      w2_(inputs * hidden, 0.0),
      b2_(inputs, 0.0) {
  if (inputs == 0 || hidden == 0) throw ParameterError("autoencoder layers must be nonempty");
  if (hidden >= inputs) throw ParameterError("autoencoder bottleneck must be narrower than its input");
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
}

void Autoencoder::initialize(RandomSource& rng) {
  const double a1 = 1.0 / std::sqrt(static_cast<double>(inputs_));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (auto& w : w1_) w = a1 * (2.0 * rng.uniform01() - 1.0);
  for (auto& w : w2_) w = a2 * (2.0 * rng.uniform01() - 1.0);
  std::fill(b1_.begin(), b1_.end(), 0.0);
  std::fill(b2_.begin(), b2_.end(), 0.0);
}

void Autoencoder::check_input(std::span<const double> v) const {
  if (v.size() != inputs_) throw ParameterError("autoencoder input has wrong dimension");
  if (!all_finite(v)) throw ParameterError("autoencoder input is not finite");
}

Autoencoder::Activations Autoencoder::run(std::span<const double> v) const {
  Activations a{std::vector<double>(hidden_), std::vector<double>(inputs_)};
  for (std::size_t h = 0; h < hidden_; ++h) {
    double s = b1_[h];
    for (std::size_t i = 0; i < inputs_; ++i) s += w1_[h * inputs_ + i] * v[i];
    a.hidden[h] = logistic(s);
  }
  for (std::size_t o = 0; o < inputs_; ++o) {
    double s = b2_[o];
    for (std::size_t h = 0; h < hidden_; ++h) s += w2_[o * hidden_ + h] * a.hidden[h];
    a.output[o] = logistic(s);
  }
  return a;
}

std::vector<double> Autoencoder::forward(std::span<const double> v) const {
  check_input(v);
  return run(v).output;
}

double Autoencoder::loss(std::span<const double> v) const {
  const auto out = forward(v);
  double s = 0.0;
  for (std::size_t i = 0; i < inputs_; ++i) s += (out[i] - v[i]) * (out[i] - v[i]);
  return 0.5 * s;
}

std::vector<double> Autoencoder::gradient(std::span<const double> v) const {
  check_input(v);
  const auto a = run(v);
  std::vector<double> g(w1_.size() + b1_.size() + w2_.size() + b2_.size(), 0.0);
  double* gw1 = g.data();
  double* gb1 = gw1 + w1_.size();
  double* gw2 = gb1 + b1_.size();
  double* gb2 = gw2 + w2_.size();

  std::vector<double> delta_out(inputs_);
  for (std::size_t o = 0; o < inputs_; ++o) {
    const double y = a.output[o];
    delta_out[o] = (y - v[o]) * y * (1.0 - y);
    gb2[o] = delta_out[o];
    for (std::size_t h = 0; h < hidden_; ++h) gw2[o * hidden_ + h] = delta_out[o] * a.hidden[h];
  }
  for (std::size_t h = 0; h < hidden_; ++h) {
    double back = 0.0;
    for (std::size_t o = 0; o < inputs_; ++o) back += w2_[o * hidden_ + h] * delta_out[o];
    const double z = a.hidden[h];
    const double delta = back * z * (1.0 - z);
    gb1[h] = delta;
    for (std::size_t i = 0; i < inputs_; ++i) gw1[h * inputs_ + i] = delta * v[i];
  }
  return g;
}

bool Autoencoder::train_step(std::span<const double> v) {
  const auto g = gradient(v);
  if (!all_finite(g)) return false;
  auto p = parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate_ * g[i];
  if (!all_finite(p)) return false;
  set_parameters(p);
  return true;
}

std::vector<double> Autoencoder::parameters() const {
  std::vector<double> p;
  p.reserve(w1_.size() + b1_.size() + w2_.size() + b2_.size());
  p.insert(p.end(), w1_.begin(), w1_.end());
  p.insert(p.end(), b1_.begin(), b1_.end());
  p.insert(p.end(), w2_.begin(), w2_.end());
  p.insert(p.end(), b2_.begin(), b2_.end());
  return p;
}

void Autoencoder::set_parameters(std::span<const double> p) {
  if (p.size() != w1_.size() + b1_.size() + w2_.size() + b2_.size()) {
    throw ParameterError("autoencoder parameter vector has wrong length");
  }
  auto it = p.begin();
  for (auto* v : {&w1_, &b1_, &w2_, &b2_}) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
    it += static_cast<std::ptrdiff_t>(v->size());
  }
}

nlohmann::json Autoencoder::to_json() const {
  return {{"inputs", inputs_}, {"hidden", hidden_}, {"learning_rate", learning_rate_},
          {"w1", w1_},         {"b1", b1_},         {"w2", w2_},
          {"b2", b2_}};
}

Autoencoder Autoencoder::from_json(const nlohmann::json& j) {
  Autoencoder a(j.at("inputs").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                j.at("learning_rate").get<double>());
  std::vector<double> p;
  for (const char* k : {"w1", "b1", "w2", "b2"}) {
    const auto part = json_vector(j.at(k));
    p.insert(p.end(), part.begin(), part.end());
  }
  a.set_parameters(p);
  return a;
}

// ---------------------------------------------------------------- statistics

double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ParameterError("rmse: dimension mismatch");
  if (a.empty()) throw ParameterError("rmse: empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

void RunningStats::add(double x) {
  ++n_;
  const double d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d * (x - mean_);
}

double RunningStats::stddev() const {
  if (n_ < 2) return 0.0;
  return std::sqrt(m2_ / static_cast<double>(n_ - 1));
}

nlohmann::json RunningStats::to_json() const { return {{"n", n_}, {"mean", mean_}, {"m2", m2_}}; }

RunningStats RunningStats::from_json(const nlohmann::json& j) {
  RunningStats s;
  s.n_ = j.at("n").get<std::uint64_t>();
  s.mean_ = j.at("mean").get<double>();
  s.m2_ = j.at("m2").get<double>();
  return s;
}

MinMaxNormalizer::MinMaxNormalizer(std::size_t dims) : min_(dims, 0.0), max_(dims, 0.0) {}

void MinMaxNormalizer::update(std::span<const double> v) {
  if (v.size() != min_.size()) throw ParameterError("normalizer: dimension mismatch");
  if (!seen_) {
    min_.assign(v.begin(), v.end());
    max_.assign(v.begin(), v.end());
    seen_ = true;
    return;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    min_[i] = std::min(min_[i], v[i]);
    max_[i] = std::max(max_[i], v[i]);
  }
}

std::vector<double> MinMaxNormalizer::normalize(std::span<const double> v) const {
  if (v.size() != min_.size()) throw ParameterError("normalizer: dimension mismatch");
  std::vector<double> out(v.size(), 0.0);
  if (!seen_) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double range = max_[i] - min_[i];
    out[i] = range > 0.0 ? (v[i] - min_[i]) / range : 0.0;
  }
  return out;
}

nlohmann::json MinMaxNormalizer::to_json() const {
  return {{"seen", seen_}, {"min", min_}, {"max", max_}};
}

MinMaxNormalizer MinMaxNormalizer::from_json(const nlohmann::json& j) {
  MinMaxNormalizer n(j.at("min").size());
  n.seen_ = j.at("seen").get<bool>();
  n.min_ = json_vector(j.at("min"));
  n.max_ = json_vector(j.at("max"));
  if (n.min_.size() != n.max_.size()) throw ConfigError("normalizer bounds differ in length");
  return n;
}

double upper_tail_probability(double r, double mu, double sigma) {
  if (sigma <= 0.0) return r > mu ? 0.0 : 1.0;
  return 0.5 * std::erfc((r - mu) / (sigma * std::sqrt(2.0)));
}

double upper_tail_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("tail probability must be in (0, 1)");
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<>(), p));
}

std::array<double, kFeatureCount> as_array(const features::FeatureVector& v) {
  return {v.v_eh, v.v_rtt_star, v.v_jit};
}

// ---------------------------------------------------------------- HostProfile

HostProfile::HostProfile(const ProfilerConfig& config, std::uint64_t seed)
    : config_(config), model_(kFeatureCount, config.hidden, config.learning_rate) {
  if (!(config.p_thr > 0.0 && config.p_thr < 1.0)) throw ParameterError("p_thr must be in (0, 1)");
  SeededRandom rng(seed);
  model_.initialize(rng);
}

bool HostProfile::alert_by_tail(double r, double p_thr) const {
  return upper_tail_probability(r, stats_.mean(), stats_.stddev()) < p_thr;
}

double HostProfile::threshold(double p_thr) const {
  if (stats_.count() == 0) return std::numeric_limits<double>::infinity();
  return stats_.mean() + upper_tail_quantile(p_thr) * stats_.stddev();
}

bool HostProfile::alert_by_threshold(double r, double p_thr) const {
  if (stats_.count() == 0) return false;
  return r > threshold(p_thr);
}

Verdict HostProfile::evaluate(const features::FeatureVector& fv, double p_thr) {
  const auto raw = as_array(fv);
  if (!all_finite(raw)) throw ParameterError("feature vector is not finite");

  Verdict v;
  const auto x = normalizer_.normalize(raw);
  const auto out = model_.forward(x);
  v.score = rmse(x, out);
  v.in_grace = in_grace();
  v.threshold = threshold(p_thr);

  if (!v.in_grace && stats_.count() > 0) v.is_alert = alert_by_tail(v.score, p_thr);

  const bool recent = std::find(recent_alerts_.begin(), recent_alerts_.end(), true) !=
                      recent_alerts_.end();
  if (!v.is_alert && !recent) {
    normalizer_.update(raw);
    const auto xn = normalizer_.normalize(raw);
    // The baseline takes v's error as the model sees it for training, inside
    // bounds that include v; early on the old bounds are nearly empty.
    const double r_fit = rmse(xn, model_.forward(xn));
    if (model_.train_step(xn)) {
      stats_.add(r_fit);
      ++count_;
      v.trained = true;
    } else {
      ++skipped_steps_;
    }
  }

  recent_alerts_.push_back(v.is_alert);
  while (recent_alerts_.size() > config_.alert_guard) recent_alerts_.pop_front();
  return v;
}

nlohmann::json HostProfile::to_json() const {
  return {{"format", "vesper-host-profile"},
          {"version", kFormatVersion},
          {"config",
           {{"hidden", config_.hidden},
            {"learning_rate", config_.learning_rate},
            {"grace_n", config_.grace_n},
            {"p_thr", config_.p_thr},
            {"alert_guard", config_.alert_guard}}},
          {"model", model_.to_json()},
          {"normalizer", normalizer_.to_json()},
          {"rmse_stats", stats_.to_json()},
          {"count", count_},
          {"skipped_steps", skipped_steps_},
          {"recent_alerts", recent_alerts_}};
}

HostProfile HostProfile::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "vesper-host-profile") throw ConfigError("not a host profile");
  if (j.at("version").get<int>() != kFormatVersion) {
    throw ConfigError("unsupported host profile version " + j.at("version").dump());
  }
  HostProfile p;
  const auto& c = j.at("config");
  p.config_.hidden = c.at("hidden").get<std::size_t>();
  p.config_.learning_rate = c.at("learning_rate").get<double>();
  p.config_.grace_n = c.at("grace_n").get<std::size_t>();
  p.config_.p_thr = c.at("p_thr").get<double>();
  p.config_.alert_guard = c.at("alert_guard").get<std::size_t>();
  p.model_ = Autoencoder::from_json(j.at("model"));
  p.normalizer_ = MinMaxNormalizer::from_json(j.at("normalizer"));
  p.stats_ = RunningStats::from_json(j.at("rmse_stats"));
  p.count_ = j.at("count").get<std::uint64_t>();
  p.skipped_steps_ = j.at("skipped_steps").get<std::uint64_t>();
  for (bool b : j.at("recent_alerts")) p.recent_alerts_.push_back(b);
  return p;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void HostProfile::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump(2) + "\n");
}

HostProfile HostProfile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profile " + path.string());
  return from_json(nlohmann::json::parse(in));
}

std::vector<double> windowed_score(std::span<const double> scores, std::size_t window) {
  if (window == 0) throw ParameterError("window must be >= 1");
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t first = i + 1 >= window ? i + 1 - window : 0;
    double sum = 0.0;
    for (std::size_t j = first; j <= i; ++j) sum += scores[j];
    out[i] = sum / static_cast<double>(i + 1 - first);
  }
  return out;
}

}  // namespace vesper::profiler
