#include "addd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "addd/errors.hpp"
#include "addd/serialize.hpp"

namespace addd {

void DriftThresholds::validate() const {
  if (!(low >= 0.0) || !(low < upp) || !std::isfinite(upp)) {
    throw ConfigError("drift thresholds must satisfy 0 <= low < upp");
  }
}

double compute_threshold(std::span<const double> losses) {
  if (losses.empty()) throw InvalidInput("compute_threshold: empty loss set");
  const double n = static_cast<double>(losses.size());
  double mean = 0.0;
  double max = losses[0];
  for (double l : losses) {
    mean += l;
    max = std::max(max, l);
  }
  mean /= n;
  double ss = 0.0;
  for (double l : losses) ss += (l - mean) * (l - mean);
  return max + std::sqrt(ss / n);
}

double window_distance(const Tensor2& ref, const Tensor2& mov) {
  if (!ref.same_shape(mov)) throw ContractViolation("window_distance: window shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = ref[i] - mov[i];
    s += d * d;
  }
  return std::sqrt(s);
}

bool drift_alarm(double distance, const DriftThresholds& t) {
  return t.upp > distance && distance > t.low;
}

void EncodingWindow::push(std::span<const double> encoding) {
  if (encoding.size() != dim_) throw ShapeError("EncodingWindow: encoding dimension");
  if (capacity_ == 0) return;
  if (rows_.size() == capacity_) rows_.pop_front();
  rows_.emplace_back(encoding.begin(), encoding.end());
}

Tensor2 EncodingWindow::to_tensor() const {
  Tensor2 t(rows_.size(), dim_);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    std::copy(rows_[i].begin(), rows_[i].end(), t.row(i).begin());
  }
  return t;
}

double window_distance(const EncodingWindow& ref, const EncodingWindow& mov) {
  if (!ref.full() || !mov.full()) throw ContractViolation("window_distance: window not full");
  if (ref.capacity() != mov.capacity() || ref.dim() != mov.dim()) {
    throw ContractViolation("window_distance: window shapes differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& a = ref.row(i);
    const auto& b = mov.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  }
  return std::sqrt(s);
}

void DetectorConfig::validate() const {
  vae.validate();
  if (drift_window == 0) throw ConfigError("drift_window must be positive");
  if (retrain_window < vae.time_step ||
      retrain_window - vae.time_step + 1 < drift_window) {
    throw ConfigError("retrain_window must yield at least drift_window sequences");
  }
  if (period == 0) throw ConfigError("period must be positive");
  if (!(calibration_quantile > 0.0 && calibration_quantile <= 1.0)) {
    throw ConfigError("calibration_quantile must lie in (0, 1]");
  }
  if (!(calibration_low_factor > 0.0 && calibration_upper_factor > calibration_low_factor)) {
    throw ConfigError("calibration factors must satisfy 0 < low_factor < upper_factor");
  }
  if (!(drift_tolerance >= 0.0 && drift_tolerance < 1.0)) {
    throw ConfigError("drift_tolerance must lie in [0, 1)");
  }
  if (!(calibration_min_ratio > 1.0)) throw ConfigError("calibration_min_ratio must be > 1");
}

namespace {

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<std::vector<double>> normalised_sequences(std::span<const double> adjusted,
                                                      const Normalizer& norm,
                                                      std::size_t length) {
  std::vector<double> scaled(adjusted.size());
  for (std::size_t i = 0; i < adjusted.size(); ++i) scaled[i] = norm.apply(adjusted[i]);
  return sliding_sequences(scaled, length);
}

// Median distance between the reference window and earlier non-overlapping
// windows whose adjusted values were lowered by `shift`.
double shifted_window_distance(const VaeModel& model, std::span<const double> adjusted,
                               const Normalizer& norm, const EncodingWindow& reference,
                               double shift) {
  const std::size_t T = model.config.time_step;
  const std::size_t W = reference.capacity();
  const std::size_t n_seq = adjusted.size() - T + 1;
  std::vector<double> distances;
  std::vector<double> seq(T);
  for (std::size_t start = 0; start + 2 * W <= n_seq; start += W) {
    double s = 0.0;
    for (std::size_t i = 0; i < W; ++i) {
      for (std::size_t k = 0; k < T; ++k) seq[k] = norm.apply(adjusted[start + i + k] - shift);
      const auto e = encode(model, seq).mu;
      const auto& r = reference.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) s += (r[j] - e[j]) * (r[j] - e[j]);
    }
    distances.push_back(std::sqrt(s));
  }
  return quantile(distances, 0.5);
}

}  // namespace

ThresholdCalibration calibrate_thresholds(const std::vector<std::vector<double>>& encodings,
                                          std::size_t window, double quantile_level,
                                          double low_factor, double upper_factor) {
  if (window == 0 || encodings.size() < 2 * window) {
    throw InvalidInput("calibrate_thresholds: need at least two windows of encodings");
  }
  const std::size_t n = encodings.size();
  const std::size_t ref_start = n - window;
  ThresholdCalibration out;
  for (std::size_t start = 0; start + window <= ref_start; ++start) {
    double s = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
      const auto& a = encodings[ref_start + i];
      const auto& b = encodings[start + i];
      for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    }
    out.distances.push_back(std::sqrt(s));
  }
  const double q = quantile(out.distances, quantile_level);
  out.thresholds = {q * low_factor, q * upper_factor};
  if (!(out.thresholds.upp > out.thresholds.low)) {
    throw InvalidInput("calibrate_thresholds: degenerate (zero) distances");
  }
  return out;
}

void Detector::refresh_from_sequences(const std::vector<std::vector<double>>& sequences) {
  threshold_losses_.clear();
  threshold_losses_.reserve(sequences.size());
  reference_ = EncodingWindow(config_.drift_window, config_.vae.latent_dim);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const Inference inf = infer(model_, sequences[i]);
    threshold_losses_.push_back(inf.loss);
    if (i + config_.drift_window >= sequences.size()) reference_.push(inf.encoding);
  }
  theta_ = compute_threshold(threshold_losses_);
}

Detector Detector::init_offline(std::span<const double> pretrain, const DetectorConfig& config,
                                std::optional<DriftThresholds> thresholds) {
  config.validate();
  if (thresholds) thresholds->validate();
  const std::size_t T = config.vae.time_step;
  if (pretrain.size() < 2 * config.period ||
      pretrain.size() < T - 1 + config.drift_window + config.vae.batch_size) {
    throw InvalidInput("init_offline: pretraining series too short (" +
                       std::to_string(pretrain.size()) + " samples)");
  }

  Detector d;
  d.config_ = config;
  d.adjuster_ = StreamAdjuster(stl_decompose(pretrain, config.period), config.adjust_mode);
  std::vector<double> adjusted(pretrain.size());
  for (std::size_t i = 0; i < pretrain.size(); ++i) adjusted[i] = d.adjuster_(pretrain[i], i);
  d.normalizer_ = Normalizer::fit(adjusted);
  const auto sequences = normalised_sequences(adjusted, d.normalizer_, T);

  d.model_ = train(make_vae(config.vae), sequences, config.vae).model;
  d.refresh_from_sequences(sequences);
  d.moving_ = d.reference_;

  if (thresholds) {
    d.thresholds_ = *thresholds;
  } else {
    std::vector<std::vector<double>> encodings;
    encodings.reserve(sequences.size());
    for (const auto& s : sequences) encodings.push_back(infer(d.model_, s).encoding);
    auto cal = calibrate_thresholds(encodings, config.drift_window, config.calibration_quantile,
                                    config.calibration_low_factor, config.calibration_upper_factor);
    d.thresholds_ = cal.thresholds;
    if (config.drift_tolerance > 0.0) {
      double level = 0.0;
      for (double v : pretrain) level += v;
      level /= static_cast<double>(pretrain.size());
      const double response = shifted_window_distance(d.model_, adjusted, d.normalizer_,
                                                      d.reference_, config.drift_tolerance * level);
      d.thresholds_.upp = std::max(response, d.thresholds_.low * config.calibration_min_ratio);
    }
    d.calibration_distances_ = std::move(cal.distances);
  }
  d.base_index_ = pretrain.size();
  d.initialized_ = true;
  return d;
}

void Detector::require_initialized() const {
  if (!initialized_) throw ContractViolation("detector used before offline initialisation");
}

StepOutput Detector::step(double value) {
  require_initialized();
  const std::size_t T = config_.vae.time_step;
  const double adjusted = adjuster_(value, static_cast<std::size_t>(base_index_ + steps_));
  ++steps_;
  recent_.push_back(normalizer_.apply(adjusted));
  if (recent_.size() > T) recent_.pop_front();

  StepOutput out;
  if (recent_.size() < T) return out;

  const std::vector<double> sequence(recent_.begin(), recent_.end());
  const Inference inf = infer(model_, sequence);
  out.loss = inf.loss;
  out.y_hat = inf.loss > theta_ ? 1 : 0;
  moving_.push(inf.encoding);

  if (moving_.full()) out.distance = window_distance(reference_, moving_);

  if (mode_ == DetectorMode::kMonitoring && out.distance &&
      drift_alarm(*out.distance, thresholds_)) {
    out.drift_alarm = true;
    mode_ = DetectorMode::kCollectingRetrain;
    retrain_buffer_.clear();
  }

  if (mode_ == DetectorMode::kCollectingRetrain) {
    if (config_.guard_collection && out.distance && *out.distance >= thresholds_.upp) {
      mode_ = DetectorMode::kMonitoring;
      retrain_buffer_.clear();
      out.collection_aborted = true;
      return out;
    }
    retrain_buffer_.push_back(adjusted);
    if (retrain_buffer_.size() == config_.retrain_window) {
      retrain();
      out.retrained = true;
    }
  }
  return out;
}

void Detector::retrain() {
  require_initialized();
  if (retrain_buffer_.size() != config_.retrain_window) {
    throw ContractViolation("retrain: retraining window holds " +
                            std::to_string(retrain_buffer_.size()) + " of " +
                            std::to_string(config_.retrain_window) + " values");
  }
  ++retrain_count_;
  const auto sequences =
      normalised_sequences(retrain_buffer_, normalizer_, config_.vae.time_step);

  VaeConfig cfg = config_.vae;
  cfg.seed = mix_seed(config_.vae.seed, retrain_count_);
  const VaeModel start = config_.warm_start ? model_ : make_vae(cfg);
  model_ = train(start, sequences, cfg).model;

  refresh_from_sequences(sequences);
  moving_.clear();
  retrain_buffer_.clear();
  mode_ = DetectorMode::kMonitoring;
}

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr const char* kDetectorFormat = "addd-detector/1";

nlohmann::json window_to_json(const EncodingWindow& w) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < w.size(); ++i) rows.push_back(w.row(i));
  return {{"capacity", w.capacity()}, {"dim", w.dim()}, {"rows", rows}};
}

EncodingWindow window_from_json(const nlohmann::json& j) {
  EncodingWindow w(j.at("capacity").get<std::size_t>(), j.at("dim").get<std::size_t>());
  for (const auto& r : j.at("rows")) w.push(r.get<std::vector<double>>());
  return w;
}

}  // namespace

nlohmann::json Detector::checkpoint() const {
  require_initialized();
  const auto& c = config_;
  nlohmann::json j;
  j["format"] = kDetectorFormat;
  j["config"] = {{"drift_window", c.drift_window},
                 {"retrain_window", c.retrain_window},
                 {"period", c.period},
                 {"adjust_mode", to_string(c.adjust_mode)},
                 {"warm_start", c.warm_start},
                 {"guard_collection", c.guard_collection},
                 {"calibration_quantile", c.calibration_quantile},
                 {"calibration_low_factor", c.calibration_low_factor},
                 {"calibration_upper_factor", c.calibration_upper_factor},
                 {"drift_tolerance", c.drift_tolerance},
                 {"calibration_min_ratio", c.calibration_min_ratio},
                 {"vae_seed", c.vae.seed}};
  j["model"] = vae_to_json(model_);
  j["adjuster"] = {{"profile", adjuster_.profile()}, {"level", adjuster_.level()}};
  j["normalizer"] = {normalizer_.min(), normalizer_.max()};
  j["theta"] = theta_;
  j["thresholds"] = {thresholds_.low, thresholds_.upp};
  j["mode"] = mode_ == DetectorMode::kMonitoring ? "MONITORING" : "COLLECTING_RETRAIN";
  j["reference"] = window_to_json(reference_);
  j["moving"] = window_to_json(moving_);
  j["retrain_buffer"] = retrain_buffer_;
  j["recent"] = std::vector<double>(recent_.begin(), recent_.end());
  j["base_index"] = base_index_;
  j["steps"] = steps_;
  j["retrain_count"] = retrain_count_;
  return j;
}

Detector Detector::restore(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kDetectorFormat) {
    throw ParseError("unsupported detector checkpoint format");
  }
  Detector d;
  d.model_ = vae_from_json(j.at("model"));
  const auto& jc = j.at("config");
  d.config_.vae = d.model_.config;
  d.config_.vae.seed = jc.at("vae_seed").get<std::uint64_t>();
  d.config_.drift_window = jc.at("drift_window").get<std::size_t>();
  d.config_.retrain_window = jc.at("retrain_window").get<std::size_t>();
  d.config_.period = jc.at("period").get<std::size_t>();
  d.config_.adjust_mode = parse_adjust_mode(jc.at("adjust_mode").get<std::string>());
  d.config_.warm_start = jc.at("warm_start").get<bool>();
  d.config_.guard_collection = jc.at("guard_collection").get<bool>();
  d.config_.calibration_quantile = jc.at("calibration_quantile").get<double>();
  d.config_.calibration_low_factor = jc.at("calibration_low_factor").get<double>();
  d.config_.calibration_upper_factor = jc.at("calibration_upper_factor").get<double>();
  d.config_.drift_tolerance = jc.at("drift_tolerance").get<double>();
  d.config_.calibration_min_ratio = jc.at("calibration_min_ratio").get<double>();
  d.config_.validate();

  d.adjuster_ = StreamAdjuster(j.at("adjuster").at("profile").get<std::vector<double>>(),
                               j.at("adjuster").at("level").get<double>(),
                               d.config_.adjust_mode);
  d.normalizer_ = Normalizer(j.at("normalizer")[0].get<double>(),
                             j.at("normalizer")[1].get<double>());
  d.theta_ = j.at("theta").get<double>();
  d.thresholds_ = {j.at("thresholds")[0].get<double>(), j.at("thresholds")[1].get<double>()};
  d.thresholds_.validate();
  d.mode_ = j.at("mode").get<std::string>() == "MONITORING" ? DetectorMode::kMonitoring
                                                            : DetectorMode::kCollectingRetrain;
  d.reference_ = window_from_json(j.at("reference"));
  d.moving_ = window_from_json(j.at("moving"));
  d.retrain_buffer_ = j.at("retrain_buffer").get<std::vector<double>>();
  const auto recent = j.at("recent").get<std::vector<double>>();
  d.recent_.assign(recent.begin(), recent.end());
  d.base_index_ = j.at("base_index").get<std::uint64_t>();
  d.steps_ = j.at("steps").get<std::uint64_t>();
  d.retrain_count_ = j.at("retrain_count").get<std::uint64_t>();
  d.initialized_ = true;
  return d;
}

void Detector::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint().dump() << '\n';
}

Detector Detector::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return restore(nlohmann::json::parse(in));
}

}  // namespace addd
