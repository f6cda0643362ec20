#pragma once

#include <span>
#include <string>
#include <vector>

namespace addd {

/// Additive split of a series: input = trend + seasonal + residual.
struct Decomposition {
  std::vector<double> trend;
  std::vector<double> seasonal;
  std::vector<double> residual;
  std::size_t period = 0;

  /// One period of the seasonal component, phase 0 first.
  std::vector<double> profile() const;
  double mean_trend() const;
};

/// Moving-average decomposition. The trend is a centred moving average over
/// one period (2 x period for even periods) with boundary values replicated;
/// the seasonal part is the per-phase mean of the detrended interior,
/// shifted to zero mean. Requires series.size() >= 2 * period.
Decomposition stl_decompose(std::span<const double> series, std::size_t period);

enum class AdjustMode {
  kKeepSeasonal,    // seasonal + mean trend: drops trend variation and residual
  kRemoveSeasonal,  // input - seasonal: keeps level changes and residual
  kNone,
};

AdjustMode parse_adjust_mode(const std::string& name);
const char* to_string(AdjustMode mode);

std::vector<double> adjust(std::span<const double> series, const Decomposition& decomposition,
                           AdjustMode mode = AdjustMode::kKeepSeasonal);

/// Causal per-sample adjustment using a decomposition fitted offline.
/// `index` is the sample's position counted from the start of the fitted
/// series, so phases continue across the offline/online boundary.
class StreamAdjuster {
 public:
  StreamAdjuster() = default;
  StreamAdjuster(const Decomposition& fitted, AdjustMode mode);
  StreamAdjuster(std::vector<double> profile, double level, AdjustMode mode);

  double operator()(double value, std::size_t index) const;

  const std::vector<double>& profile() const { return profile_; }
  double level() const { return level_; }
  AdjustMode mode() const { return mode_; }

 private:
  std::vector<double> profile_;
  double level_ = 0.0;
  AdjustMode mode_ = AdjustMode::kNone;
};

/// Min-max scaling into [0, 1], fitted once on pretraining data.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(double min, double max);

  static Normalizer fit(std::span<const double> values);

  double apply(double value) const;
  double min() const { return min_; }
  double max() const { return max_; }

 private:
  double min_ = 0.0;
  double max_ = 1.0;
};

}  // namespace addd
