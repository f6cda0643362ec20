#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace addd {

/// Directed flow graph of a water network. Nodes are addressed by their
/// position in `nodes`; edges point in the direction of flow.
class Topology {
 public:
  using Edge = std::pair<std::size_t, std::size_t>;

  Topology() = default;
  /// Validates and indexes. Throws ValidationError on dangling references,
  /// duplicate nodes or edges, self loops, unknown sensors, or nodes the
  /// reservoir cannot reach.
  Topology(std::string name, std::vector<std::string> nodes, std::vector<Edge> edges,
           std::size_t reservoir, std::vector<std::size_t> sensors);

  const std::string& name() const { return name_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::string& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t reservoir() const { return reservoir_; }
  const std::vector<std::size_t>& sensors() const { return sensors_; }
  std::vector<std::string> sensor_names() const;

  std::optional<std::size_t> find(std::string_view name) const;
  /// Index of `name`; ValidationError naming it when absent.
  std::size_t index(std::string_view name) const;
  bool is_sensor(std::size_t node) const;

  const std::vector<std::size_t>& successors(std::size_t node) const { return out_.at(node); }
  const std::vector<std::size_t>& predecessors(std::size_t node) const { return in_.at(node); }

  /// Breadth-first hop counts along flow direction; nullopt for unreachable.
  std::vector<std::optional<std::size_t>> hops_from(std::size_t source) const;

 private:
  std::string name_;
  std::vector<std::string> nodes_;
  std::vector<Edge> edges_;
  std::size_t reservoir_ = 0;
  std::vector<std::size_t> sensors_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
};

/// Parses the `topo/1` text format. Errors carry the offending line number.
///
///   # comment
///   format topo/1
///   name hanoi
///   node N1
///   edge N1 N2          (flow from N1 to N2)
///   reservoir N1
///   sensors N4 N6 N7
Topology parse_topology(std::string_view text);
Topology load_topology(const std::filesystem::path& path);
std::string format_topology(const Topology& topology);

/// Path of a shipped topology ("hanoi", "zj") under the data directory.
std::filesystem::path shipped_topology_path(std::string_view name);

}  // namespace addd
