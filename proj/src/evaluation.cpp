#include "addd/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "addd/errors.hpp"

namespace addd {

double gmean(double r_pos, double r_neg) {
  if (!(r_pos >= 0.0 && r_pos <= 1.0) || !(r_neg >= 0.0 && r_neg <= 1.0)) {
    throw ValidationError(fmt::format("recalls must lie in [0, 1], got {} and {}", r_pos, r_neg));
  }
  return std::sqrt(r_pos * r_neg);
}

PrequentialState::PrequentialState(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("fading factor must lie in (0, 1]");
}

double PrequentialState::recall(int cls) const {
  if (total_[cls] == 0.0) return 1.0;
  return std::clamp(correct_[cls] / total_[cls], 0.0, 1.0);
}

double PrequentialState::update(int y_true, int y_hat) {
  if ((y_true != 0 && y_true != 1) || (y_hat != 0 && y_hat != 1)) {
    throw ValidationError("labels and predictions must be 0 or 1");
  }
  total_[y_true] = alpha_ * total_[y_true] + 1.0;
  correct_[y_true] = alpha_ * correct_[y_true] + (y_hat == y_true ? 1.0 : 0.0);
  return gmean(recall_pos(), recall_neg());
}

RunReport evaluate_predictions(const std::vector<std::string>& sensors,
                               const std::vector<std::vector<int>>& predictions,
                               const LabeledStream& stream, double alpha) {
  if (sensors.size() != predictions.size()) {
    throw ValidationError("one prediction series per sensor expected");
  }
  RunReport report;
  report.scenario = stream.scenario;
  report.seed = stream.seed;
  report.alpha = alpha;
  const auto horizon = static_cast<std::size_t>(stream.online_steps);
  for (std::size_t k = 0; k < sensors.size(); ++k) {
    const auto labels = stream.online_labels(stream.sensor_index(sensors[k]));
    const auto& pred = predictions[k];
    if (pred.size() != horizon) {
      throw ValidationError(fmt::format("sensor {}: predictions end at step {}, labels at step {}",
                                        sensors[k], pred.size(), horizon));
    }
    SensorEvaluation ev;
    ev.sensor = sensors[k];
    ev.gmean.reserve(horizon);
    PrequentialState state(alpha);
    for (std::size_t t = 0; t < horizon; ++t) {
      if (pred[t] != 0 && pred[t] != 1) {
        throw ValidationError(fmt::format("sensor {}: invalid prediction at step {}", sensors[k], t));
      }
      ev.gmean.push_back(state.update(labels[t], pred[t]));
      auto& c = ev.confusion;
      if (labels[t]) {
        ++(pred[t] ? c.tp : c.fn);
      } else {
        ++(pred[t] ? c.fp : c.tn);
      }
    }
    report.sensors.push_back(std::move(ev));
  }
  return report;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::int64_t parse_step(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("bad step '" + text + "'", line);
}

NodeSet parse_node_list(const std::string& text, const Topology& topo, std::size_t line) {
  NodeSet out;
  if (text.empty()) return out;
  for (const auto& name : split(text, ';')) {
    const auto idx = topo.find(name);
    if (!idx) throw ParseError("unknown node " + name, line);
    out.push_back(*idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void write_predictions_csv(std::ostream& out, const std::string& provenance,
                           const std::vector<std::string>& sensors,
                           std::span<const PredictionSnapshot> snapshots) {
  out << provenance << '\n' << "t,sensor_id,y_hat\n";
  for (const auto& snap : snapshots) {
    for (std::size_t k = 0; k < sensors.size(); ++k) {
      out << snap.t << ',' << sensors[k] << ',' << snap.y_hat.at(k) << '\n';
    }
  }
}

std::pair<std::vector<std::string>, std::vector<std::vector<int>>> read_predictions_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open predictions file " + path.string());
  std::vector<std::string> sensors;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<int>> series;
  std::size_t lineno = 0;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "t,sensor_id,y_hat") throw ParseError("expected header t,sensor_id,y_hat", lineno);
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 3) throw ParseError("expected 3 fields", lineno);
    const auto t = parse_step(f[0], lineno);
    auto [it, fresh] = index.try_emplace(f[1], sensors.size());
    if (fresh) {
      sensors.push_back(f[1]);
      series.emplace_back();
    }
    auto& s = series[it->second];
    if (t != static_cast<std::int64_t>(s.size())) {
      throw ValidationError(fmt::format("predictions for {} misaligned at step {} (line {})", f[1],
                                        s.size(), lineno));
    }
    if (f[2] != "0" && f[2] != "1") throw ParseError("y_hat must be 0 or 1", lineno);
    s.push_back(f[2] == "1" ? 1 : 0);
  }
  return {sensors, series};
}

void write_regions_csv(std::ostream& out, const std::string& provenance, const Topology& topology,
                       std::span<const RegionReport> regions) {
  out << provenance << '\n' << "t,region_nodes,s1,s0\n";
  for (const auto& r : regions) {
    out << r.t << ',' << join_nodes(topology, r.region) << ',' << join_nodes(topology, r.s1) << ','
        << join_nodes(topology, r.s0) << '\n';
  }
}

std::vector<RegionReport> read_regions_csv(const std::filesystem::path& path,
                                           const Topology& topology) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open regions file " + path.string());
  std::vector<RegionReport> out;
  std::size_t lineno = 0;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 4) throw ParseError("expected 4 fields", lineno);
    RegionReport r;
    r.t = parse_step(f[0], lineno);
    r.region = parse_node_list(f[1], topology, lineno);
    r.s1 = parse_node_list(f[2], topology, lineno);
    r.s0 = parse_node_list(f[3], topology, lineno);
    out.push_back(std::move(r));
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const RunReport& report) {
  std::filesystem::create_directories(dir);
  const std::string prov = provenance_line(report.scenario, report.seed);
  {
    std::ofstream out(dir / "gmean.csv");
    out << prov << '\n' << 't';
    for (const auto& s : report.sensors) out << ',' << s.sensor;
    out << '\n';
    const std::size_t n = report.sensors.empty() ? 0 : report.sensors.front().gmean.size();
    for (std::size_t t = 0; t < n; ++t) {
      out << t;
      for (const auto& s : report.sensors) out << fmt::format(",{:.9g}", s.gmean[t]);
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "summary.csv");
    out << prov << '\n' << "sensor_id,tp,fn,fp,tn,final_gmean\n";
    for (const auto& s : report.sensors) {
      const auto& c = s.confusion;
      out << fmt::format("{},{},{},{},{},{:.9g}\n", s.sensor, c.tp, c.fn, c.fp, c.tn,
                         s.gmean.empty() ? 1.0 : s.gmean.back());
    }
  }
  if (report.localization) {
    const auto& m = *report.localization;
    std::ofstream out(dir / "localization.csv");
    out << prov << '\n'
        << "step_fp,step_fn,detectable_steps,contaminated_steps,localized_count,localized_nodes\n";
    std::string nodes;
    for (const auto& n : m.localized_nodes) nodes += (nodes.empty() ? "" : ";") + n;
    out << fmt::format("{},{},{},{},{},{}\n", m.step_fp, m.step_fn, m.detectable_steps,
                       m.contaminated_steps, m.localized_nodes.size(), nodes);
  }
}

MeanStderr mean_stderr(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean_stderr of an empty set");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace addd
