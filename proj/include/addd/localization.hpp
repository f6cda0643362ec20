#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "addd/topology.hpp"

namespace addd {

/// Sorted node indices.
using NodeSet = std::vector<std::size_t>;

/// Nodes with a directed path to any of `sensors`, the sensors included.
/// Empty input gives the empty set. Non-sensor nodes raise ValidationError.
NodeSet upstream(const Topology& topology, std::span<const std::size_t> sensors);
/// Nodes reachable from any of `sensors`, the sensors included. Empty input
/// gives every node, the neutral element for the intersection below.
NodeSet downstream(const Topology& topology, std::span<const std::size_t> sensors);

/// One prediction per installed sensor, in topology sensor order.
struct PredictionSnapshot {
  std::int64_t t = 0;
  std::vector<int> y_hat;
};

struct RegionReport {
  std::int64_t t = 0;
  NodeSet region;
  NodeSet s1;  // alarmed sensors
  NodeSet s0;  // clean sensors
};

/// upstream(S1) intersected with downstream(S0).
RegionReport contamination_region(const Topology& topology, const PredictionSnapshot& snapshot);

/// Same as above with reachability precomputed once for repeated use.
class Localizer {
 public:
  explicit Localizer(const Topology& topology);
  RegionReport region(const PredictionSnapshot& snapshot) const;
  const Topology& topology() const { return topology_; }

 private:
  const Topology& topology_;
  std::vector<std::vector<char>> reaches_;  // reaches_[a][b]: path a -> b (a == b included)
};

struct LocalizationMetrics {
  std::size_t step_fp = 0;           // region non-empty, nothing contaminated
  std::size_t step_fn = 0;           // detectable step whose region misses an active source
  std::size_t detectable_steps = 0;  // an active source and a contaminated sensor node
  std::size_t contaminated_steps = 0;
  std::set<std::string> localized_nodes;  // union of regions over contaminated steps
};

/// `truth[t]` lists the nodes being depleted at step t; `sources` are the
/// contamination locations. A source is active while it is in truth[t].
LocalizationMetrics localization_metrics(const Topology& topology,
                                         std::span<const RegionReport> reports,
                                         const std::vector<std::vector<std::string>>& truth,
                                         const std::vector<std::string>& sources);

std::string join_nodes(const Topology& topology, const NodeSet& nodes);

}  // namespace addd
