#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "addd/localization.hpp"
#include "addd/simulator.hpp"

namespace addd {

/// sqrt(r_pos * r_neg); ValidationError outside [0, 1].
double gmean(double r_pos, double r_neg);

/// Faded per-class recalls. A class not yet observed has recall 1.
class PrequentialState {
 public:
  explicit PrequentialState(double alpha = 0.99);

  /// Folds in one labelled prediction and returns the current G-mean.
  double update(int y_true, int y_hat);

  double recall_pos() const { return recall(1); }
  double recall_neg() const { return recall(0); }
  double faded_total(int cls) const { return total_[cls]; }
  double faded_correct(int cls) const { return correct_[cls]; }
  double alpha() const { return alpha_; }

 private:
  double recall(int cls) const;

  double alpha_;
  double correct_[2] = {0.0, 0.0};
  double total_[2] = {0.0, 0.0};
};

struct Confusion {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct SensorEvaluation {
  std::string sensor;
  std::vector<double> gmean;  // prequential, one value per online step
  Confusion confusion;
};

struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  double alpha = 0.99;
  std::vector<SensorEvaluation> sensors;
  std::optional<LocalizationMetrics> localization;
};

/// Predictions per sensor (topology sensor order), each aligned with the
/// stream's online labels. ValidationError names the first offending step.
RunReport evaluate_predictions(const std::vector<std::string>& sensors,
                               const std::vector<std::vector<int>>& predictions,
                               const LabeledStream& stream, double alpha);

/// Prediction file helpers: `t,sensor_id,y_hat`.
void write_predictions_csv(std::ostream& out, const std::string& provenance,
                           const std::vector<std::string>& sensors,
                           std::span<const PredictionSnapshot> snapshots);
/// Returns per-sensor series in first-appearance order of sensor ids.
std::pair<std::vector<std::string>, std::vector<std::vector<int>>> read_predictions_csv(
    const std::filesystem::path& path);

void write_regions_csv(std::ostream& out, const std::string& provenance, const Topology& topology,
                       std::span<const RegionReport> regions);
std::vector<RegionReport> read_regions_csv(const std::filesystem::path& path,
                                           const Topology& topology);

/// Writes gmean.csv (t plus one column per sensor), summary.csv (confusion
/// counts and final G-mean) and, when present, localization.csv.
void write_report(const std::filesystem::path& dir, const RunReport& report);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};
/// Mean and sample standard error (n - 1 denominator; 0 for one value).
MeanStderr mean_stderr(std::span<const double> values);

}  // namespace addd
