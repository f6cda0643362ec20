#include "addd/topology.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "addd/errors.hpp"

namespace addd {

Topology::Topology(std::string name, std::vector<std::string> nodes, std::vector<Edge> edges,
                   std::size_t reservoir, std::vector<std::size_t> sensors)
    : name_(std::move(name)),
      nodes_(std::move(nodes)),
      edges_(std::move(edges)),
      reservoir_(reservoir),
      sensors_(std::move(sensors)) {
  const std::size_t n = nodes_.size();
  if (n == 0) throw ValidationError("topology has no nodes");
  std::set<std::string_view> names;
  for (const auto& node : nodes_) {
    if (!names.insert(node).second) throw ValidationError("duplicate node " + node);
  }
  if (reservoir_ >= n) throw ValidationError("reservoir index out of range");
  out_.assign(n, {});
  in_.assign(n, {});
  std::set<Edge> seen;
  for (const auto& [a, b] : edges_) {
    if (a >= n || b >= n) throw ValidationError("edge references a missing node");
    if (a == b) throw ValidationError("self loop at " + nodes_[a]);
    if (!seen.insert({a, b}).second) {
      throw ValidationError(fmt::format("duplicate edge {} -> {}", nodes_[a], nodes_[b]));
    }
    out_[a].push_back(b);
    in_[b].push_back(a);
  }
  std::set<std::size_t> sensor_set;
  for (std::size_t s : sensors_) {
    if (s >= n) throw ValidationError("sensor index out of range");
    if (!sensor_set.insert(s).second) throw ValidationError("duplicate sensor " + nodes_[s]);
  }
  const auto hops = hops_from(reservoir_);
  for (std::size_t v = 0; v < n; ++v) {
    if (!hops[v]) throw ValidationError("node " + nodes_[v] + " is unreachable from the reservoir");
  }
}

std::vector<std::string> Topology::sensor_names() const {
  std::vector<std::string> out;
  for (std::size_t s : sensors_) out.push_back(nodes_[s]);
  return out;
}

std::optional<std::size_t> Topology::find(std::string_view name) const {
  const auto it = std::find(nodes_.begin(), nodes_.end(), name);
  if (it == nodes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - nodes_.begin());
}

std::size_t Topology::index(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ValidationError(fmt::format("unknown node {} in topology {}", name, name_));
}

bool Topology::is_sensor(std::size_t node) const {
  return std::find(sensors_.begin(), sensors_.end(), node) != sensors_.end();
}

std::vector<std::optional<std::size_t>> Topology::hops_from(std::size_t source) const {
  std::vector<std::optional<std::size_t>> hops(nodes_.size());
  std::deque<std::size_t> queue{source};
  hops.at(source) = 0;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t w : out_[v]) {
      if (!hops[w]) {
        hops[w] = *hops[v] + 1;
        queue.push_back(w);
      }
    }
  }
  return hops;
}

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace

Topology parse_topology(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string name;
  std::vector<std::string> nodes;
  std::map<std::string, std::size_t, std::less<>> index;
  std::map<std::string, std::size_t, std::less<>> declared_at;
  std::vector<Topology::Edge> edges;
  std::optional<std::size_t> reservoir;
  std::vector<std::size_t> sensors;
  bool have_format = false;

  auto lookup = [&](const std::string& node, std::size_t line) {
    const auto it = index.find(node);
    if (it == index.end()) throw ParseError("unknown node " + node, line);
    return it->second;
  };

  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto words = split_words(line);
    if (words.empty()) continue;
    const std::string& key = words[0];
    auto expect = [&](std::size_t count) {
      if (words.size() != count) {
        throw ParseError(fmt::format("'{}' takes {} field(s)", key, count - 1), lineno);
      }
    };
    if (!have_format) {
      if (key != "format" || words.size() != 2 || words[1] != "topo/1") {
        throw ParseError("expected 'format topo/1' as the first record", lineno);
      }
      have_format = true;
    } else if (key == "name") {
      expect(2);
      name = words[1];
    } else if (key == "node") {
      expect(2);
      if (index.count(words[1])) throw ParseError("duplicate node " + words[1], lineno);
      index.emplace(words[1], nodes.size());
      declared_at.emplace(words[1], lineno);
      nodes.push_back(words[1]);
    } else if (key == "edge") {
      expect(3);
      const std::size_t a = lookup(words[1], lineno);
      const std::size_t b = lookup(words[2], lineno);
      if (a == b) throw ParseError("self loop at " + words[1], lineno);
      if (std::find(edges.begin(), edges.end(), Topology::Edge{a, b}) != edges.end()) {
        throw ParseError("duplicate edge " + words[1] + " " + words[2], lineno);
      }
      edges.emplace_back(a, b);
    } else if (key == "reservoir") {
      expect(2);
      if (reservoir) throw ParseError("reservoir declared twice", lineno);
      reservoir = lookup(words[1], lineno);
    } else if (key == "sensors") {
      if (words.size() < 2) throw ParseError("'sensors' needs at least one node", lineno);
      for (std::size_t i = 1; i < words.size(); ++i) {
        const std::size_t s = lookup(words[i], lineno);
        if (std::find(sensors.begin(), sensors.end(), s) != sensors.end()) {
          throw ParseError("duplicate sensor " + words[i], lineno);
        }
        sensors.push_back(s);
      }
    } else {
      throw ParseError("unknown record '" + key + "'", lineno);
    }
  }
  if (!have_format) throw ParseError("empty topology file", lineno);
  if (nodes.empty()) throw ParseError("no nodes declared", lineno);
  if (!reservoir) throw ParseError("no reservoir declared", lineno);

  std::vector<std::vector<std::size_t>> out(nodes.size());
  for (const auto& [a, b] : edges) out[a].push_back(b);
  std::vector<bool> reached(nodes.size(), false);
  std::deque<std::size_t> queue{*reservoir};
  reached[*reservoir] = true;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t w : out[v]) {
      if (!reached[w]) {
        reached[w] = true;
        queue.push_back(w);
      }
    }
  }
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    if (!reached[v]) {
      throw ParseError("node " + nodes[v] + " is unreachable from the reservoir",
                       declared_at.at(nodes[v]));
    }
  }
  return Topology(name, nodes, edges, *reservoir, sensors);
}

Topology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open topology file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_topology(buffer.str());
}

std::string format_topology(const Topology& t) {
  std::string out = "format topo/1\nname " + t.name() + "\n";
  for (const auto& n : t.nodes()) out += "node " + n + "\n";
  for (const auto& [a, b] : t.edges()) out += "edge " + t.node(a) + " " + t.node(b) + "\n";
  out += "reservoir " + t.node(t.reservoir()) + "\n";
  if (!t.sensors().empty()) {
    out += "sensors";
    for (std::size_t s : t.sensors()) out += " " + t.node(s);
    out += "\n";
  }
  return out;
}

std::filesystem::path shipped_topology_path(std::string_view name) {
  return std::filesystem::path(ADDD_DATA_DIR) / (std::string(name) + ".topo");
}

}  // namespace addd
