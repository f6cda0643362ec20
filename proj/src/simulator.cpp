#include "addd/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "addd/errors.hpp"
#include "addd/rng.hpp"

namespace addd {

void SimParams::validate() const {
  if (!(base_chlorine > 0.0)) throw ValidationError("base_chlorine must be positive");
  if (!(daily_amplitude >= 0.0 && weekly_amplitude >= 0.0 &&
        daily_amplitude + weekly_amplitude < 1.0)) {
    throw ValidationError("demand amplitudes must be nonnegative and sum below 1");
  }
  if (steps_per_day == 0) throw ValidationError("steps_per_day must be positive");
  if (!(decay_per_hop > 0.0 && decay_per_hop <= 1.0)) {
    throw ValidationError("decay_per_hop must lie in (0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be nonnegative");
  if (!(attenuation > 0.0 && attenuation <= 1.0)) {
    throw ValidationError("attenuation must lie in (0, 1]");
  }
}

namespace {

void check_interval(const Interval& iv, std::int64_t horizon, const std::string& what) {
  if (iv.start < 0 || iv.end <= iv.start || iv.end > horizon) {
    throw ValidationError(fmt::format("{}: period [{}, {}) is outside [0, {})", what, iv.start,
                                      iv.end, horizon));
  }
}

}  // namespace

void Scenario::validate() const {
  params.validate();
  if (pretrain_steps < 0 || online_steps <= 0) throw ValidationError("invalid horizon");
  for (const auto& ev : contaminations) {
    topology.index(ev.location);
    if (!(ev.depletion > 0.0 && ev.depletion < 1.0)) {
      throw ValidationError("contamination depletion must lie in (0, 1)");
    }
    auto periods = ev.periods;
    std::sort(periods.begin(), periods.end(),
              [](const Interval& a, const Interval& b) { return a.start < b.start; });
    for (std::size_t i = 0; i < periods.size(); ++i) {
      check_interval(periods[i], online_steps, "contamination at " + ev.location);
      if (i > 0 && periods[i].start < periods[i - 1].end) {
        throw ValidationError("overlapping contamination periods at " + ev.location);
      }
    }
  }
  for (const auto& off : offsets) {
    if (!topology.is_sensor(topology.index(off.sensor))) {
      throw ValidationError("offset on " + off.sensor + ", which has no sensor");
    }
    if (!(off.factor > 0.0)) throw ValidationError("offset factor must be positive");
    check_interval(off.period, online_steps, "offset at " + off.sensor);
  }
}

double demand_pattern(const SimParams& p, std::int64_t i) {
  const double day = static_cast<double>(p.steps_per_day);
  const double x = static_cast<double>(i);
  return 1.0 + p.daily_amplitude * std::sin(2.0 * std::numbers::pi * x / day) +
         p.weekly_amplitude * std::sin(2.0 * std::numbers::pi * x / (7.0 * day));
}

std::size_t LabeledStream::sensor_index(const std::string& sensor) const {
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    if (sensors[i].sensor == sensor) return i;
  }
  throw ValidationError("stream has no sensor " + sensor);
}

std::vector<double> LabeledStream::pretrain_values(std::size_t s) const {
  const auto& m = sensors.at(s).measured;
  return {m.begin(), m.begin() + pretrain_steps};
}

std::vector<double> LabeledStream::online_values(std::size_t s) const {
  const auto& m = sensors.at(s).measured;
  return {m.begin() + pretrain_steps, m.end()};
}

std::vector<int> LabeledStream::online_labels(std::size_t s) const {
  const auto& l = sensors.at(s).label;
  return {l.begin() + pretrain_steps, l.end()};
}

LabeledStream generate(const Scenario& sc) {
  sc.validate();
  const auto& topo = sc.topology;
  const auto& p = sc.params;
  const std::size_t n_nodes = topo.size();
  const auto online = static_cast<std::size_t>(sc.online_steps);
  const auto pre = static_cast<std::size_t>(sc.pretrain_steps);

  // multiplier[v][t] over online steps, only for nodes an event reaches
  std::map<std::size_t, std::vector<double>> multiplier;
  for (const auto& ev : sc.contaminations) {
    const auto hops = topo.hops_from(topo.index(ev.location));
    for (std::size_t v = 0; v < n_nodes; ++v) {
      if (!hops[v]) continue;
      auto& m = multiplier.try_emplace(v, online, 1.0).first->second;
      const double factor = 1.0 - ev.depletion * std::pow(p.attenuation, *hops[v]);
      const auto delay = static_cast<std::int64_t>(p.delay_per_hop * *hops[v]);
      for (const auto& iv : ev.periods) {
        const auto lo = std::min<std::int64_t>(iv.start + delay, sc.online_steps);
        const auto hi = std::min<std::int64_t>(iv.end + delay, sc.online_steps);
        for (auto t = lo; t < hi; ++t) m[static_cast<std::size_t>(t)] *= factor;
      }
    }
  }

  LabeledStream out;
  out.scenario = sc.name;
  out.seed = sc.seed;
  out.pretrain_steps = sc.pretrain_steps;
  out.online_steps = sc.online_steps;
  out.true_region.assign(online, {});
  for (const auto& [v, m] : multiplier) {
    for (std::size_t t = 0; t < online; ++t) {
      if (m[t] != 1.0) out.true_region[t].push_back(topo.node(v));
    }
  }

  const auto from_reservoir = topo.hops_from(topo.reservoir());
  for (std::size_t v : topo.sensors()) {
    SensorSeries s;
    s.sensor = topo.node(v);
    s.measured.resize(pre + online);
    s.truth.resize(pre + online);
    s.label.assign(pre + online, 0);
    Rng rng(mix_seed(sc.seed, v));
    const double level = p.base_chlorine * std::pow(p.decay_per_hop, *from_reservoir[v]);
    const auto mult = multiplier.find(v);
    for (std::size_t i = 0; i < pre + online; ++i) {
      double c = level * demand_pattern(p, static_cast<std::int64_t>(i)) +
                 p.noise_sigma * rng.normal();
      if (i >= pre && mult != multiplier.end() && mult->second[i - pre] != 1.0) {
        c *= mult->second[i - pre];
        s.label[i] = 1;
      }
      s.truth[i] = c;
      s.measured[i] = c;
    }
    for (const auto& off : sc.offsets) {
      if (off.sensor != s.sensor) continue;
      for (auto t = off.period.start; t < off.period.end; ++t) {
        s.measured[pre + static_cast<std::size_t>(t)] *= off.factor;
      }
    }
    out.sensors.push_back(std::move(s));
  }
  return out;
}

std::vector<Scenario> builtin_scenarios(std::uint64_t seed) {
  const Topology hanoi = load_topology(shipped_topology_path("hanoi"));
  const Topology zj = load_topology(shipped_topology_path("zj"));
  const Interval drift{4000, 8640};

  auto make = [&](std::string name, const Topology& topo, std::string location,
                  std::vector<Interval> periods, std::vector<std::string> offset_sensors) {
    Scenario s;
    s.name = std::move(name);
    s.topology = topo;
    s.seed = seed;
    if (!location.empty()) s.contaminations.push_back({std::move(location), std::move(periods)});
    for (auto& o : offset_sensors) s.offsets.push_back({std::move(o), drift});
    return s;
  };

  return {
      make("hanoi-sce1", hanoi, "N5", {{960, 1440}, {5760, 6240}}, {"N11", "N7"}),
      make("hanoi-sce2", hanoi, "N19", {{1440, 1920}, {5280, 5760}}, {"N18", "N30"}),
      make("hanoi-sce3", hanoi, "N8", {{1200, 1680}, {5520, 6000}}, {"N11", "N18"}),
      make("zj-sce1", zj, "N4", {{1440, 1920}, {5280, 5760}}, {"N11", "N26"}),
      make("zj-sce2", zj, "N21", {{1200, 1680}, {5520, 6000}}, {"N6", "N11"}),
      make("zj-sce3", zj, "N33", {{960, 1440}, {5760, 6240}}, {"N38", "N43"}),
      make("hanoi-offset", hanoi, "", {}, {"N11", "N7"}),
      make("hanoi-contamination", hanoi, "N5", {{960, 1440}, {5760, 6240}}, {}),
      make("hanoi-clean", hanoi, "", {}, {}),
      make("zj-clean", zj, "", {}, {}),
  };
}

std::vector<std::string> scenario_names() {
  return {"hanoi-sce1",   "hanoi-sce2",          "hanoi-sce3",  "zj-sce1",  "zj-sce2",
          "zj-sce3",      "hanoi-offset",        "hanoi-contamination",
          "hanoi-clean",  "zj-clean"};
}

Scenario find_scenario(const std::string& name, std::uint64_t seed) {
  for (auto& s : builtin_scenarios(seed)) {
    if (s.name == name) return s;
  }
  std::string known;
  for (const auto& n : scenario_names()) known += (known.empty() ? "" : ", ") + n;
  throw ValidationError("unknown scenario '" + name + "' (known: " + known + ")");
}

std::string provenance_line(const std::string& scenario, std::uint64_t seed) {
  return fmt::format("# addd {} scenario={} seed={}", ADDD_VERSION, scenario, seed);
}

void write_stream_csv(std::ostream& out, const LabeledStream& s) {
  out << provenance_line(s.scenario, s.seed) << '\n' << "t,sensor_id,measured,true,label\n";
  const std::size_t total = static_cast<std::size_t>(s.pretrain_steps + s.online_steps);
  fmt::memory_buffer buf;
  for (std::size_t i = 0; i < total; ++i) {
    const auto t = static_cast<std::int64_t>(i) - s.pretrain_steps;
    for (const auto& sensor : s.sensors) {
      fmt::format_to(std::back_inserter(buf), "{},{},{:.9g},{:.9g},{}\n", t, sensor.sensor,
                     sensor.measured[i], sensor.truth[i], sensor.label[i]);
    }
    if (buf.size() > (1u << 16)) {
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_region_csv(std::ostream& out, const LabeledStream& s) {
  out << provenance_line(s.scenario, s.seed) << '\n' << "t,region_nodes\n";
  for (std::size_t t = 0; t < s.true_region.size(); ++t) {
    out << t << ',' << fmt::format("{}", fmt::join(s.true_region[t], ";")) << '\n';
  }
}

void write_stream_files(const std::filesystem::path& stream_csv,
                        const std::filesystem::path& region_csv, const LabeledStream& stream) {
  std::ofstream a(stream_csv);
  if (!a) throw ValidationError("cannot write " + stream_csv.string());
  write_stream_csv(a, stream);
  std::ofstream b(region_csv);
  if (!b) throw ValidationError("cannot write " + region_csv.string());
  write_region_csv(b, stream);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    T value;
    if constexpr (std::is_same_v<T, double>) {
      value = std::stod(text, &used);
    } else {
      value = static_cast<T>(std::stoll(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ParseError(fmt::format("bad {} '{}'", what, text), line);
  }
}

void read_provenance(const std::string& line, std::string& scenario, std::uint64_t& seed) {
  std::istringstream in(line);
  for (std::string word; in >> word;) {
    if (word.rfind("scenario=", 0) == 0) scenario = word.substr(9);
    if (word.rfind("seed=", 0) == 0) seed = std::stoull(word.substr(5));
  }
}

}  // namespace

LabeledStream read_stream_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open stream file " + path.string());
  LabeledStream s;
  std::map<std::string, std::size_t> index;
  std::vector<std::int64_t> next_t;
  std::optional<std::int64_t> first_t;
  std::size_t lineno = 0;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      read_provenance(line, s.scenario, s.seed);
      continue;
    }
    if (!header) {
      if (line != "t,sensor_id,measured,true,label") {
        throw ParseError("expected header t,sensor_id,measured,true,label", lineno);
      }
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 5) throw ParseError("expected 5 fields", lineno);
    const auto t = parse_number<std::int64_t>(f[0], lineno, "step");
    if (!first_t) first_t = t;
    auto [it, fresh] = index.try_emplace(f[1], s.sensors.size());
    if (fresh) {
      if (t != *first_t) throw ParseError("sensor " + f[1] + " starts late", lineno);
      s.sensors.push_back({f[1], {}, {}, {}});
      next_t.push_back(t);
    }
    auto& sensor = s.sensors[it->second];
    if (t != next_t[it->second]) {
      throw ParseError(fmt::format("sensor {} expected step {}, got {}", f[1],
                                   next_t[it->second], t),
                       lineno);
    }
    ++next_t[it->second];
    sensor.measured.push_back(parse_number<double>(f[2], lineno, "measured value"));
    sensor.truth.push_back(parse_number<double>(f[3], lineno, "true value"));
    const auto label = parse_number<int>(f[4], lineno, "label");
    if (label != 0 && label != 1) throw ParseError("label must be 0 or 1", lineno);
    sensor.label.push_back(label);
  }
  if (s.sensors.empty()) throw ParseError("stream file has no rows", lineno);
  for (const auto& sensor : s.sensors) {
    if (sensor.measured.size() != s.sensors.front().measured.size()) {
      throw ParseError("sensor " + sensor.sensor + " has a different number of rows");
    }
  }
  s.pretrain_steps = -std::min<std::int64_t>(*first_t, 0);
  s.online_steps = static_cast<std::int64_t>(s.sensors.front().measured.size()) - s.pretrain_steps;
  if (*first_t > 0) throw ParseError("stream must start at or before step 0");
  return s;
}

std::vector<std::vector<std::string>> read_region_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open region file " + path.string());
  std::vector<std::vector<std::string>> regions;
  std::size_t lineno = 0;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("expected t,region_nodes", lineno);
    const auto t = parse_number<std::int64_t>(line.substr(0, comma), lineno, "step");
    if (t != static_cast<std::int64_t>(regions.size())) {
      throw ParseError(fmt::format("expected step {}", regions.size()), lineno);
    }
    const std::string nodes = line.substr(comma + 1);
    std::vector<std::string> set;
    if (!nodes.empty()) set = split(nodes, ';');
    regions.push_back(std::move(set));
  }
  return regions;
}

}  // namespace addd
