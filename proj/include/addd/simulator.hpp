#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "addd/topology.hpp"

namespace addd {

/// Knobs of the closed-form chlorine model. Times are in 30-minute steps.
struct SimParams {
  double base_chlorine = 0.7;     // mg/L injected at the reservoir
  double daily_amplitude = 0.1;   // demand pattern s(t) = 1 + a_d sin(day) + a_w sin(week)
  double weekly_amplitude = 0.05;
  std::size_t steps_per_day = 48;
  double decay_per_hop = 0.97;
  double noise_sigma = 0.01;
  std::size_t delay_per_hop = 2;
  double attenuation = 0.9;

  void validate() const;
};

struct Interval {
  std::int64_t start = 0;  // inclusive, online step index
  std::int64_t end = 0;    // exclusive
};

struct ContaminationEvent {
  std::string location;
  std::vector<Interval> periods;
  double depletion = 0.5;
};

struct OffsetEvent {
  std::string sensor;
  Interval period;
  double factor = 0.98;
};

struct Scenario {
  std::string name;
  Topology topology;
  std::int64_t pretrain_steps = 8640;
  std::int64_t online_steps = 8640;
  std::vector<ContaminationEvent> contaminations;
  std::vector<OffsetEvent> offsets;
  SimParams params;
  std::uint64_t seed = 0;

  /// ValidationError on unknown nodes, non-sensor offsets, overlapping or
  /// out-of-horizon periods, and out-of-range factors.
  void validate() const;
  std::int64_t horizon() const { return pretrain_steps + online_steps; }
};

struct SensorSeries {
  std::string sensor;
  std::vector<double> measured;
  std::vector<double> truth;
  std::vector<int> label;
};

/// Series are indexed by position i over the whole horizon; the scenario
/// step is t = i - pretrain_steps (negative during pretraining).
struct LabeledStream {
  std::string scenario;
  std::uint64_t seed = 0;
  std::int64_t pretrain_steps = 0;
  std::int64_t online_steps = 0;
  std::vector<SensorSeries> sensors;
  /// Online steps only: nodes whose chlorine is being depleted at step t.
  std::vector<std::vector<std::string>> true_region;

  std::size_t sensor_index(const std::string& sensor) const;
  std::vector<double> pretrain_values(std::size_t sensor) const;
  std::vector<double> online_values(std::size_t sensor) const;
  std::vector<int> online_labels(std::size_t sensor) const;
};

/// Weekly demand factor at absolute step i.
double demand_pattern(const SimParams& params, std::int64_t i);

LabeledStream generate(const Scenario& scenario);

/// Six contamination-plus-drift scenarios, single-effect variants and clean
/// runs ("hanoi-clean", "zj-clean"), all on the shipped topologies.
std::vector<Scenario> builtin_scenarios(std::uint64_t seed = 0);
std::vector<std::string> scenario_names();
/// Named scenario from builtin_scenarios; ValidationError listing the known
/// names otherwise.
Scenario find_scenario(const std::string& name, std::uint64_t seed);

/// Header comment line shared by every output file.
std::string provenance_line(const std::string& scenario, std::uint64_t seed);

/// `t,sensor_id,measured,true,label`, one row per (step, sensor).
void write_stream_csv(std::ostream& out, const LabeledStream& stream);
/// `t,region_nodes` for each online step, nodes joined by ';'.
void write_region_csv(std::ostream& out, const LabeledStream& stream);
void write_stream_files(const std::filesystem::path& stream_csv,
                        const std::filesystem::path& region_csv, const LabeledStream& stream);

/// Reads what write_stream_csv produced (plus the optional region file).
/// ParseError with a line number on malformed rows.
LabeledStream read_stream_csv(const std::filesystem::path& stream_csv);
std::vector<std::vector<std::string>> read_region_csv(const std::filesystem::path& region_csv);

}  // namespace addd
