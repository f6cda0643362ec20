#include "addd/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "addd/errors.hpp"

namespace addd {

std::vector<double> Decomposition::profile() const {
  return {seasonal.begin(), seasonal.begin() + static_cast<std::ptrdiff_t>(period)};
}

double Decomposition::mean_trend() const {
  return std::accumulate(trend.begin(), trend.end(), 0.0) / static_cast<double>(trend.size());
}

Decomposition stl_decompose(std::span<const double> series, std::size_t period) {
  if (period == 0) throw InvalidInput("stl_decompose: period must be positive");
  if (series.size() < 2 * period) {
    throw InvalidInput("stl_decompose: need at least two periods (" +
                       std::to_string(2 * period) + " samples), got " +
                       std::to_string(series.size()));
  }
  const std::size_t n = series.size();
  const std::size_t half = period / 2;
  const bool even = period % 2 == 0;

  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + series[i];

  Decomposition d;
  d.period = period;
  d.trend.assign(n, 0.0);
  const std::size_t first = half;
  const std::size_t last = n - half - 1;  // inclusive
  for (std::size_t i = first; i <= last; ++i) {
    if (even) {
      // 2 x period average: half weight on the two outermost samples.
      const double inner = prefix[i + half] - prefix[i - half + 1];
      d.trend[i] = (inner + 0.5 * (series[i - half] + series[i + half])) /
                   static_cast<double>(period);
    } else {
      d.trend[i] = (prefix[i + half + 1] - prefix[i - half]) / static_cast<double>(period);
    }
  }
  for (std::size_t i = 0; i < first; ++i) d.trend[i] = d.trend[first];
  for (std::size_t i = last + 1; i < n; ++i) d.trend[i] = d.trend[last];

  std::vector<double> phase_sum(period, 0.0);
  std::vector<std::size_t> phase_count(period, 0);
  for (std::size_t i = first; i <= last; ++i) {
    phase_sum[i % period] += series[i] - d.trend[i];
    ++phase_count[i % period];
  }
  std::vector<double> profile(period);
  for (std::size_t p = 0; p < period; ++p) {
    profile[p] = phase_sum[p] / static_cast<double>(phase_count[p]);
  }
  const double centre = std::accumulate(profile.begin(), profile.end(), 0.0) /
                        static_cast<double>(period);
  for (double& v : profile) v -= centre;

  d.seasonal.resize(n);
  d.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.seasonal[i] = profile[i % period];
    d.residual[i] = series[i] - d.trend[i] - d.seasonal[i];
  }
  return d;
}

AdjustMode parse_adjust_mode(const std::string& name) {
  if (name == "keep-seasonal") return AdjustMode::kKeepSeasonal;
  if (name == "remove-seasonal") return AdjustMode::kRemoveSeasonal;
  if (name == "none") return AdjustMode::kNone;
  throw ConfigError("unknown adjust mode '" + name + "'");
}

const char* to_string(AdjustMode mode) {
  switch (mode) {
    case AdjustMode::kKeepSeasonal: return "keep-seasonal";
    case AdjustMode::kRemoveSeasonal: return "remove-seasonal";
    case AdjustMode::kNone: return "none";
  }
  return "none";
}

std::vector<double> adjust(std::span<const double> series, const Decomposition& d,
                           AdjustMode mode) {
  if (series.size() != d.seasonal.size()) throw ShapeError("adjust: length mismatch");
  std::vector<double> out(series.size());
  const double level = d.mean_trend();
  for (std::size_t i = 0; i < series.size(); ++i) {
    switch (mode) {
      case AdjustMode::kKeepSeasonal: out[i] = d.seasonal[i] + level; break;
      case AdjustMode::kRemoveSeasonal: out[i] = series[i] - d.seasonal[i]; break;
      case AdjustMode::kNone: out[i] = series[i]; break;
    }
  }
  return out;
}

StreamAdjuster::StreamAdjuster(const Decomposition& fitted, AdjustMode mode)
    : StreamAdjuster(fitted.profile(), fitted.mean_trend(), mode) {}

StreamAdjuster::StreamAdjuster(std::vector<double> profile, double level, AdjustMode mode)
    : profile_(std::move(profile)), level_(level), mode_(mode) {
  if (profile_.empty() && mode_ != AdjustMode::kNone) {
    throw ConfigError("StreamAdjuster: empty seasonal profile");
  }
}

double StreamAdjuster::operator()(double value, std::size_t index) const {
  switch (mode_) {
    case AdjustMode::kKeepSeasonal: return profile_[index % profile_.size()] + level_;
    case AdjustMode::kRemoveSeasonal: return value - profile_[index % profile_.size()];
    case AdjustMode::kNone: break;
  }
  return value;
}

Normalizer::Normalizer(double min, double max) : min_(min), max_(max) {
  if (!(max > min)) throw InvalidInput("Normalizer: degenerate range");
}

Normalizer Normalizer::fit(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("Normalizer::fit: empty series");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) throw InvalidInput("Normalizer::fit: degenerate (constant) range");
  return Normalizer(*lo, *hi);
}

double Normalizer::apply(double value) const {
  return std::clamp((value - min_) / (max_ - min_), 0.0, 1.0);
}

}  // namespace addd
