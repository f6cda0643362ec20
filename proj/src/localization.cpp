#include "addd/localization.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "addd/errors.hpp"

namespace addd {

namespace {

void require_sensors(const Topology& t, std::span<const std::size_t> sensors) {
  for (std::size_t s : sensors) {
    if (s >= t.size() || !t.is_sensor(s)) {
      throw ValidationError(fmt::format("node index {} is not an installed sensor", s));
    }
  }
}

// Multi-source graph search along successors (forward) or predecessors.
NodeSet search(const Topology& t, std::span<const std::size_t> seeds, bool forward) {
  std::vector<char> seen(t.size(), 0);
  std::vector<std::size_t> stack(seeds.begin(), seeds.end());
  for (std::size_t s : seeds) seen[s] = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t w : forward ? t.successors(v) : t.predecessors(v)) {
      if (!seen[w]) {
        seen[w] = 1;
        stack.push_back(w);
      }
    }
  }
  NodeSet out;
  for (std::size_t v = 0; v < t.size(); ++v)
    if (seen[v]) out.push_back(v);
  return out;
}

void split_snapshot(const Topology& t, const PredictionSnapshot& snap, RegionReport& r) {
  if (snap.y_hat.size() != t.sensors().size()) {
    throw ContractViolation(fmt::format("snapshot at t={} has {} predictions for {} sensors",
                                        snap.t, snap.y_hat.size(), t.sensors().size()));
  }
  r.t = snap.t;
  for (std::size_t i = 0; i < snap.y_hat.size(); ++i) {
    (snap.y_hat[i] ? r.s1 : r.s0).push_back(t.sensors()[i]);
  }
  std::sort(r.s1.begin(), r.s1.end());
  std::sort(r.s0.begin(), r.s0.end());
}

}  // namespace

NodeSet upstream(const Topology& topology, std::span<const std::size_t> sensors) {
  require_sensors(topology, sensors);
  return search(topology, sensors, false);
}

NodeSet downstream(const Topology& topology, std::span<const std::size_t> sensors) {
  require_sensors(topology, sensors);
  if (sensors.empty()) {
    NodeSet all(topology.size());
    for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
    return all;
  }
  return search(topology, sensors, true);
}

RegionReport contamination_region(const Topology& topology, const PredictionSnapshot& snapshot) {
  RegionReport r;
  split_snapshot(topology, snapshot, r);
  if (r.s1.empty()) return r;
  const NodeSet up = upstream(topology, r.s1);
  const NodeSet down = downstream(topology, r.s0);
  std::set_intersection(up.begin(), up.end(), down.begin(), down.end(),
                        std::back_inserter(r.region));
  return r;
}

Localizer::Localizer(const Topology& topology) : topology_(topology) {
  reaches_.assign(topology.size(), std::vector<char>(topology.size(), 0));
  for (std::size_t v = 0; v < topology.size(); ++v) {
    const std::size_t seed[] = {v};
    for (std::size_t w : search(topology, seed, true)) reaches_[v][w] = 1;
  }
}

RegionReport Localizer::region(const PredictionSnapshot& snapshot) const {
  RegionReport r;
  split_snapshot(topology_, snapshot, r);
  if (r.s1.empty()) return r;
  for (std::size_t v = 0; v < topology_.size(); ++v) {
    const bool up = std::any_of(r.s1.begin(), r.s1.end(),
                                [&](std::size_t s) { return reaches_[v][s] != 0; });
    const bool down = r.s0.empty() || std::any_of(r.s0.begin(), r.s0.end(), [&](std::size_t s) {
                        return reaches_[s][v] != 0;
                      });
    if (up && down) r.region.push_back(v);
  }
  return r;
}

LocalizationMetrics localization_metrics(const Topology& topology,
                                         std::span<const RegionReport> reports,
                                         const std::vector<std::vector<std::string>>& truth,
                                         const std::vector<std::string>& sources) {
  if (reports.size() != truth.size()) {
    throw ValidationError(fmt::format("{} region reports but {} truth steps", reports.size(),
                                      truth.size()));
  }
  std::vector<std::size_t> source_idx;
  for (const auto& s : sources) source_idx.push_back(topology.index(s));

  LocalizationMetrics m;
  std::vector<char> in_truth(topology.size());
  for (std::size_t t = 0; t < reports.size(); ++t) {
    const auto& rep = reports[t];
    if (rep.t != static_cast<std::int64_t>(t)) {
      throw ValidationError(fmt::format("region report {} carries step {}", t, rep.t));
    }
    std::fill(in_truth.begin(), in_truth.end(), 0);
    for (const auto& name : truth[t]) in_truth[topology.index(name)] = 1;

    if (truth[t].empty()) {
      if (!rep.region.empty()) ++m.step_fp;
      continue;
    }
    ++m.contaminated_steps;
    for (std::size_t v : rep.region) m.localized_nodes.insert(topology.node(v));

    const bool sensor_hit = std::any_of(topology.sensors().begin(), topology.sensors().end(),
                                        [&](std::size_t s) { return in_truth[s] != 0; });
    bool any_active = false;
    bool missed = false;
    for (std::size_t s : source_idx) {
      if (!in_truth[s]) continue;
      any_active = true;
      if (!std::binary_search(rep.region.begin(), rep.region.end(), s)) missed = true;
    }
    if (sensor_hit && any_active) {
      ++m.detectable_steps;
      if (missed) ++m.step_fn;
    }
  }
  return m;
}

std::string join_nodes(const Topology& topology, const NodeSet& nodes) {
  std::string out;
  for (std::size_t v : nodes) {
    if (!out.empty()) out += ';';
    out += topology.node(v);
  }
  return out;
}

}  // namespace addd
