#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "addd/detector.hpp"
#include "addd/evaluation.hpp"
#include "addd/runtime.hpp"
#include "addd/simulator.hpp"

namespace addd {

struct PipelineConfig {
  DetectorConfig detector;
  std::optional<DriftThresholds> thresholds;  // calibrated per sensor when absent
  RuntimeOptions runtime;
  double alpha = 0.99;
};

/// One offline-initialized detector per topology sensor, trained on that
/// sensor's pretraining values. Sensor k's VAE seed is mix(seed, k). The
/// detectors are independent and are trained on parallel threads.
std::vector<Detector> init_detectors(const LabeledStream& stream, const Topology& topology,
                                     const DetectorConfig& config,
                                     const std::optional<DriftThresholds>& thresholds,
                                     std::uint64_t seed);

/// Offline initialization followed by the online runtime.
RuntimeResult run_pipeline(const LabeledStream& stream, const Topology& topology,
                           const PipelineConfig& config, LogFn log = log_to_stderr);

/// predictions.csv, regions.csv and detector_log.csv under `dir`.
void write_run_outputs(const std::filesystem::path& dir, const LabeledStream& stream,
                       const Topology& topology, const RuntimeResult& result);

/// Topology of a named scenario's network.
Topology topology_for(const std::string& scenario);
/// Contamination locations of a named scenario; empty for unknown names.
std::vector<std::string> scenario_sources(const std::string& scenario);

/// Prequential G-mean per sensor plus localization metrics.
RunReport evaluate_result(const LabeledStream& stream, const Topology& topology,
                          const RuntimeResult& result, double alpha);

}  // namespace addd
