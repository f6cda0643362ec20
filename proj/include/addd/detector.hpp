#pragma once

// Per-sensor anomaly and drift detector: LSTM-VAE reconstruction loss against
// an adaptive threshold, plus a dual-threshold distance test between a
// reference window and a moving window of latent encodings.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "addd/preprocess.hpp"
#include "addd/tensor.hpp"
#include "addd/vae.hpp"

namespace addd {

struct DriftThresholds {
  double low = 0.0;
  double upp = 0.0;

  void validate() const;
  friend bool operator==(const DriftThresholds&, const DriftThresholds&) = default;
};

/// max(L) + std(L), population standard deviation.
double compute_threshold(std::span<const double> losses);

/// Frobenius distance between index-aligned windows (oldest row first).
double window_distance(const Tensor2& ref, const Tensor2& mov);

/// True iff low < distance < upp. Distances at or above `upp` are
/// contamination-scale and never count as drift.
bool drift_alarm(double distance, const DriftThresholds& thresholds);

/// Fixed-capacity FIFO of equally sized vectors.
class EncodingWindow {
 public:
  EncodingWindow() = default;
  EncodingWindow(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {}

  void push(std::span<const double> encoding);
  void clear() { rows_.clear(); }
  bool full() const { return rows_.size() == capacity_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  const std::vector<double>& row(std::size_t i) const { return rows_[i]; }

  Tensor2 to_tensor() const;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::deque<std::vector<double>> rows_;
};

/// Distance between two full windows of the same shape.
double window_distance(const EncodingWindow& ref, const EncodingWindow& mov);

struct DetectorConfig {
  VaeConfig vae;
  std::size_t drift_window = 200;
  std::size_t retrain_window = 500;
  std::size_t period = 336;  // one week at 30-minute sampling
  AdjustMode adjust_mode = AdjustMode::kRemoveSeasonal;
  bool warm_start = true;
  // While collecting retraining data, a distance at or above thre_upp
  // abandons the collection instead of retraining on contaminated data.
  bool guard_collection = true;
  // Automatic drift thresholds: (q * low_factor, q * upper_factor), where q
  // is a quantile of offline reference-vs-sliding window distances.
  double calibration_quantile = 0.99;
  double calibration_low_factor = 1.25;
  double calibration_upper_factor = 4.0;
  // When positive, thre_upp is instead the median distance produced by
  // lowering pretraining windows by this fraction of the mean level: level
  // shifts smaller than the tolerance stay inside the drift band. The result
  // is kept at least calibration_min_ratio * thre_low.
  double drift_tolerance = 0.03;
  double calibration_min_ratio = 1.5;

  void validate() const;
};

enum class DetectorMode { kMonitoring, kCollectingRetrain };

struct StepOutput {
  int y_hat = 0;
  double loss = 0.0;
  bool drift_alarm = false;
  std::optional<double> distance;
  bool retrained = false;
  bool collection_aborted = false;
};

struct ThresholdCalibration {
  DriftThresholds thresholds;
  std::vector<double> distances;
};

/// Distances between the last `window` rows of `encodings` and every earlier
/// non-overlapping sliding window; thresholds from their quantile.
ThresholdCalibration calibrate_thresholds(const std::vector<std::vector<double>>& encodings,
                                          std::size_t window, double quantile,
                                          double low_factor, double upper_factor);

class Detector {
 public:
  Detector() = default;

  /// Fits preprocessing, trains the VAE on every pretraining sequence, sets
  /// the initial loss threshold and fills both encoding windows. Drift
  /// thresholds are calibrated from the pretraining encodings when absent.
  static Detector init_offline(std::span<const double> pretrain, const DetectorConfig& config,
                               std::optional<DriftThresholds> thresholds = std::nullopt);

  StepOutput step(double value);

  /// Retrains on the full retraining buffer. Called by step(); public so the
  /// precondition can be exercised directly.
  void retrain();

  bool initialized() const { return initialized_; }
  const DetectorConfig& config() const { return config_; }
  const VaeModel& model() const { return model_; }
  double theta() const { return theta_; }
  const DriftThresholds& thresholds() const { return thresholds_; }
  DetectorMode mode() const { return mode_; }
  const EncodingWindow& reference() const { return reference_; }
  const EncodingWindow& moving() const { return moving_; }
  const std::vector<double>& retrain_buffer() const { return retrain_buffer_; }
  const Normalizer& normalizer() const { return normalizer_; }
  const StreamAdjuster& adjuster() const { return adjuster_; }
  std::uint64_t steps_seen() const { return steps_; }
  std::uint64_t retrain_count() const { return retrain_count_; }
  /// Losses the current theta was computed from.
  const std::vector<double>& threshold_losses() const { return threshold_losses_; }
  /// Offline distances used for calibration (empty if thresholds were given).
  const std::vector<double>& calibration_distances() const { return calibration_distances_; }

  nlohmann::json checkpoint() const;
  static Detector restore(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Detector load(const std::filesystem::path& path);

 private:
  void refresh_from_sequences(const std::vector<std::vector<double>>& sequences);
  void require_initialized() const;

  bool initialized_ = false;
  DetectorConfig config_;
  VaeModel model_;
  StreamAdjuster adjuster_;
  Normalizer normalizer_;
  double theta_ = 0.0;
  DriftThresholds thresholds_;
  DetectorMode mode_ = DetectorMode::kMonitoring;
  EncodingWindow reference_;
  EncodingWindow moving_;
  std::vector<double> retrain_buffer_;  // adjusted, not normalised
  std::deque<double> recent_;           // normalised
  std::uint64_t base_index_ = 0;
  std::uint64_t steps_ = 0;
  std::uint64_t retrain_count_ = 0;
  std::vector<double> threshold_losses_;
  std::vector<double> calibration_distances_;
};

}  // namespace addd
