#include "addd/pipeline.hpp"

#include <exception>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "addd/errors.hpp"
#include "addd/rng.hpp"

namespace addd {

std::vector<Detector> init_detectors(const LabeledStream& stream, const Topology& topology,
                                     const DetectorConfig& config,
                                     const std::optional<DriftThresholds>& thresholds,
                                     std::uint64_t seed) {
  const auto sensors = topology.sensor_names();
  std::vector<Detector> detectors(sensors.size());
  std::vector<std::exception_ptr> errors(sensors.size());
  std::vector<std::thread> workers;
  for (std::size_t k = 0; k < sensors.size(); ++k) {
    workers.emplace_back([&, k] {
      try {
        DetectorConfig cfg = config;
        cfg.vae.seed = mix_seed(seed, k);
        const auto pretrain = stream.pretrain_values(stream.sensor_index(sensors[k]));
        detectors[k] = Detector::init_offline(pretrain, cfg, thresholds);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return detectors;
}

RuntimeResult run_pipeline(const LabeledStream& stream, const Topology& topology,
                           const PipelineConfig& config, LogFn log) {
  auto detectors = init_detectors(stream, topology, config.detector, config.thresholds, stream.seed);
  std::vector<std::vector<double>> online;
  for (const auto& s : topology.sensor_names()) {
    online.push_back(stream.online_values(stream.sensor_index(s)));
  }
  return run_runtime(topology, online, detectors, config.runtime, std::move(log));
}

void write_run_outputs(const std::filesystem::path& dir, const LabeledStream& stream,
                       const Topology& topology, const RuntimeResult& result) {
  std::filesystem::create_directories(dir);
  const std::string prov = provenance_line(stream.scenario, stream.seed);
  {
    std::ofstream out(dir / "predictions.csv");
    write_predictions_csv(out, prov, topology.sensor_names(), result.snapshots);
  }
  {
    std::ofstream out(dir / "regions.csv");
    write_regions_csv(out, prov, topology, result.regions);
  }
  std::ofstream out(dir / "detector_log.csv");
  out << prov << '\n'
      << "t,sensor_id,loss,theta,y_hat,distance,drift_alarm,retrained,collection_aborted\n";
  for (const auto& row : result.detector_log) {
    const auto& o = row.out;
    out << fmt::format("{},{},{:.9g},{:.9g},{},{},{},{},{}\n", row.t, row.sensor, o.loss,
                       row.theta, o.y_hat,
                       o.distance ? fmt::format("{:.9g}", *o.distance) : std::string(),
                       int{o.drift_alarm}, int{o.retrained}, int{o.collection_aborted});
  }
}

Topology topology_for(const std::string& scenario) { return find_scenario(scenario, 0).topology; }

std::vector<std::string> scenario_sources(const std::string& scenario) {
  std::vector<std::string> out;
  for (const auto& s : builtin_scenarios(0)) {
    if (s.name != scenario) continue;
    for (const auto& c : s.contaminations) out.push_back(c.location);
  }
  return out;
}

RunReport evaluate_result(const LabeledStream& stream, const Topology& topology,
                          const RuntimeResult& result, double alpha) {
  const auto sensors = topology.sensor_names();
  std::vector<std::vector<int>> predictions(sensors.size());
  for (const auto& snap : result.snapshots) {
    for (std::size_t k = 0; k < sensors.size(); ++k) predictions[k].push_back(snap.y_hat[k]);
  }
  RunReport report = evaluate_predictions(sensors, predictions, stream, alpha);
  if (!stream.true_region.empty()) {
    report.localization = localization_metrics(topology, result.regions, stream.true_region,
                                               scenario_sources(stream.scenario));
  }
  return report;
}

}  // namespace addd
