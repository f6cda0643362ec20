#include "addd/cli.hpp"

#include <fstream>
#include <map>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "addd/errors.hpp"
#include "addd/evaluation.hpp"
#include "addd/pipeline.hpp"
#include "addd/simulator.hpp"

namespace addd {

namespace {

struct DetectorFlags {
  std::size_t epochs = 100;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  double beta = 1.0;
  std::size_t drift_window = 200;
  std::size_t retrain_window = 500;
  std::size_t period = 336;
  std::string adjust_mode = "remove-seasonal";
  std::optional<double> thre_low;
  std::optional<double> thre_upp;
  double calibration_quantile = 0.99;
  double calibration_low_factor = 1.25;
  double drift_tolerance = 0.03;
  bool no_warm_start = false;
  bool no_guard = false;
  std::string mode = "inprocess";
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  int barrier_timeout_ms = 30000;

  void attach(CLI::App* app) {
    app->add_option("--epochs", epochs, "VAE training epochs")->capture_default_str();
    app->add_option("--learning-rate", learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--batch-size", batch_size, "mini-batch size")->capture_default_str();
    app->add_option("--beta", beta, "KL weight")->capture_default_str();
    app->add_option("--drift-window", drift_window, "reference/moving window length")
        ->capture_default_str();
    app->add_option("--retrain-window", retrain_window, "retraining buffer length")
        ->capture_default_str();
    app->add_option("--period", period, "seasonal period in steps")->capture_default_str();
    app->add_option("--adjust-mode", adjust_mode, "remove-seasonal | keep-seasonal | none")
        ->capture_default_str();
    app->add_option("--thre-low", thre_low, "lower drift threshold (with --thre-upp)");
    app->add_option("--thre-upp", thre_upp, "upper drift threshold (with --thre-low)");
    app->add_option("--calibration-quantile", calibration_quantile)->capture_default_str();
    app->add_option("--calibration-low-factor", calibration_low_factor)->capture_default_str();
    app->add_option("--drift-tolerance", drift_tolerance,
                    "relative level shift that still counts as drift")
        ->capture_default_str();
    app->add_flag("--no-warm-start", no_warm_start, "retrain from a fresh initialization");
    app->add_flag("--no-guard", no_guard, "keep collecting when the distance reaches thre_upp");
    app->add_option("--mode", mode, "inprocess | socket")->capture_default_str();
    app->add_option("--host", host, "center address for socket mode")->capture_default_str();
    app->add_option("--port", port, "center port for socket mode (0 = any)")
        ->capture_default_str();
    app->add_option("--barrier-timeout-ms", barrier_timeout_ms)->capture_default_str();
  }

  PipelineConfig pipeline() const {
    PipelineConfig p;
    auto& d = p.detector;
    d.vae.epochs = epochs;
    d.vae.learning_rate = learning_rate;
    d.vae.batch_size = batch_size;
    d.vae.beta = beta;
    d.drift_window = drift_window;
    d.retrain_window = retrain_window;
    d.period = period;
    d.adjust_mode = parse_adjust_mode(adjust_mode);
    d.calibration_quantile = calibration_quantile;
    d.calibration_low_factor = calibration_low_factor;
    d.drift_tolerance = drift_tolerance;
    d.warm_start = !no_warm_start;
    d.guard_collection = !no_guard;
    d.validate();
    if (thre_low.has_value() != thre_upp.has_value()) {
      throw ConfigError("--thre-low and --thre-upp must be given together");
    }
    if (thre_low) {
      p.thresholds = DriftThresholds{*thre_low, *thre_upp};
      p.thresholds->validate();
    }
    p.runtime.mode = parse_transport_mode(mode);
    p.runtime.host = host;
    p.runtime.port = port;
    if (barrier_timeout_ms <= 0) throw ConfigError("--barrier-timeout-ms must be positive");
    p.runtime.barrier_timeout = std::chrono::milliseconds(barrier_timeout_ms);
    return p;
  }
};

Topology resolve_topology(const std::string& path, const LabeledStream& stream) {
  if (!path.empty()) return load_topology(path);
  return topology_for(stream.scenario);
}

void write_repeat(const std::filesystem::path& dir, const std::string& scenario,
                  std::uint64_t base_seed, const std::vector<RunReport>& reports, std::ostream& out) {
  const auto& first = reports.front();
  const std::string prov = provenance_line(scenario, base_seed);
  std::ofstream csv(dir / "repeat.csv");
  csv << prov << '\n' << "t,sensor_id,gmean_mean,gmean_stderr\n";
  const std::size_t horizon = first.sensors.front().gmean.size();
  std::vector<double> values(reports.size());
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t k = 0; k < first.sensors.size(); ++k) {
      for (std::size_t r = 0; r < reports.size(); ++r) values[r] = reports[r].sensors[k].gmean[t];
      const auto ms = mean_stderr(values);
      csv << fmt::format("{},{},{:.9g},{:.9g}\n", t, first.sensors[k].sensor, ms.mean, ms.stderr_);
    }
  }

  std::ofstream summary(dir / "repeat_summary.csv");
  summary << prov << '\n' << "sensor_id,repetitions,final_gmean_mean,final_gmean_stderr\n";
  out << fmt::format("{} repetitions of {} (seeds {}..{})\n", reports.size(), scenario, base_seed,
                     base_seed + reports.size() - 1);
  for (std::size_t k = 0; k < first.sensors.size(); ++k) {
    for (std::size_t r = 0; r < reports.size(); ++r) values[r] = reports[r].sensors[k].gmean.back();
    const auto ms = mean_stderr(values);
    summary << fmt::format("{},{},{:.9g},{:.9g}\n", first.sensors[k].sensor, reports.size(),
                           ms.mean, ms.stderr_);
    out << fmt::format("  {:>5}  final G-mean {:.4f} +/- {:.4f}\n", first.sensors[k].sensor,
                       ms.mean, ms.stderr_);
  }
}

void merge_reports(const std::vector<std::string>& inputs, const std::string& output) {
  std::ofstream out(output);
  if (!out) throw ValidationError("cannot write " + output);
  out << provenance_line("merged", 0) << '\n'
      << "scenario,base_seed,t,sensor_id,gmean_mean,gmean_stderr\n";
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path);
    std::string scenario = "unknown", seed = "0";
    bool header = false;
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        std::istringstream words(line);
        for (std::string w; words >> w;) {
          if (w.rfind("scenario=", 0) == 0) scenario = w.substr(9);
          if (w.rfind("seed=", 0) == 0) seed = w.substr(5);
        }
        continue;
      }
      if (!header) {
        if (line != "t,sensor_id,gmean_mean,gmean_stderr") {
          throw ValidationError(path + " is not a repeat.csv file");
        }
        header = true;
        continue;
      }
      out << scenario << ',' << seed << ',' << line << '\n';
    }
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"AD&DD: online contamination and drift detection on simulated water networks",
               "addd"};
  app.set_config("--config", "", "TOML/INI file mirroring the command-line flags");
  app.set_version_flag("--version", std::string(ADDD_VERSION));
  app.require_subcommand(1);

  // generate
  std::string scenario;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  auto* gen = app.add_subcommand("generate", "write a scenario's stream and truth CSVs");
  gen->add_option("--scenario", scenario, "scenario name")->required();
  gen->add_option("--seed", seed, "noise seed")->capture_default_str();
  gen->add_option("--out", out_dir, "output directory")->capture_default_str();

  // run
  std::string stream_path, topology_path;
  std::optional<std::uint64_t> run_seed;
  DetectorFlags run_flags;
  auto* run = app.add_subcommand("run", "detect and localize over a stream CSV");
  run->add_option("--stream", stream_path, "stream.csv from generate")->required();
  run->add_option("--topology", topology_path, "topology file (default: scenario's network)");
  run->add_option("--seed", run_seed, "detector seed (default: the stream's seed)");
  run->add_option("--out", out_dir, "output directory")->capture_default_str();
  run_flags.attach(run);

  // evaluate
  std::string predictions_path, regions_path;
  double alpha = 0.99;
  auto* eval = app.add_subcommand("evaluate", "prequential G-mean and localization metrics");
  eval->add_option("--stream", stream_path, "stream.csv with labels")->required();
  eval->add_option("--predictions", predictions_path, "predictions.csv from run")->required();
  eval->add_option("--regions", regions_path, "regions.csv from run");
  eval->add_option("--truth", regions_path, "alias of --regions")->excludes("--regions");
  eval->add_option("--topology", topology_path, "topology file");
  eval->add_option("--alpha", alpha, "fading factor")->capture_default_str();
  eval->add_option("--out", out_dir, "report directory")->capture_default_str();

  // repeat
  std::size_t repetitions = 10;
  DetectorFlags rep_flags;
  auto* rep = app.add_subcommand("repeat", "seeded repetitions with mean and standard error");
  rep->add_option("--scenario", scenario, "scenario name")->required();
  rep->add_option("--n", repetitions, "number of repetitions")->capture_default_str();
  rep->add_option("--base-seed", seed, "seed of the first repetition")->capture_default_str();
  rep->add_option("--alpha", alpha, "fading factor")->capture_default_str();
  rep->add_option("--out", out_dir, "output directory")->capture_default_str();
  rep_flags.attach(rep);

  // report
  std::vector<std::string> inputs;
  std::string merged = "report.csv";
  auto* report = app.add_subcommand("report", "merge repeat.csv files into one plot-ready CSV");
  report->add_option("--inputs", inputs, "repeat.csv files")->required();
  report->add_option("--out", merged, "merged CSV path")->capture_default_str();

  std::vector<const char*> args(argv, argv + argc);
  try {
    app.parse(argc, args.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << ADDD_VERSION << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "addd: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      const auto sc = find_scenario(scenario, seed);
      const auto stream = generate(sc);
      std::filesystem::create_directories(out_dir);
      write_stream_files(std::filesystem::path(out_dir) / "stream.csv",
                         std::filesystem::path(out_dir) / "truth_regions.csv", stream);
      out << fmt::format("wrote {} sensors x {} steps to {}\n", stream.sensors.size(),
                         stream.pretrain_steps + stream.online_steps, out_dir);
    } else if (*run) {
      auto stream = read_stream_csv(stream_path);
      const auto topo = resolve_topology(topology_path, stream);
      const auto cfg = run_flags.pipeline();
      const auto detector_seed = run_seed.value_or(stream.seed);
      auto detectors = init_detectors(stream, topo, cfg.detector, cfg.thresholds, detector_seed);
      std::vector<std::vector<double>> online;
      for (const auto& s : topo.sensor_names()) {
        online.push_back(stream.online_values(stream.sensor_index(s)));
      }
      const auto result = run_runtime(topo, online, detectors, cfg.runtime);
      write_run_outputs(out_dir, stream, topo, result);
      out << fmt::format("wrote predictions, regions and detector log for {} steps to {}\n",
                         result.snapshots.size(), out_dir);
    } else if (*eval) {
      auto stream = read_stream_csv(stream_path);
      const auto topo = resolve_topology(topology_path, stream);
      auto [sensors, predictions] = read_predictions_csv(predictions_path);
      RunReport rr = evaluate_predictions(sensors, predictions, stream, alpha);
      if (!regions_path.empty()) {
        const auto truth_path = std::filesystem::path(stream_path).parent_path() / "truth_regions.csv";
        stream.true_region = read_region_csv(truth_path);
        const auto regions = read_regions_csv(regions_path, topo);
        rr.localization = localization_metrics(topo, regions, stream.true_region,
                                               scenario_sources(stream.scenario));
      }
      write_report(out_dir, rr);
      for (const auto& s : rr.sensors) {
        const auto& c = s.confusion;
        out << fmt::format("{:>5}  G-mean {:.4f}  tp {} fn {} fp {} tn {}\n", s.sensor,
                           s.gmean.back(), c.tp, c.fn, c.fp, c.tn);
      }
      if (rr.localization) {
        out << fmt::format("localization: step_fp {} step_fn {} localized {}\n",
                           rr.localization->step_fp, rr.localization->step_fn,
                           rr.localization->localized_nodes.size());
      }
    } else if (*rep) {
      if (repetitions == 0) throw ConfigError("--n must be positive");
      const auto cfg = rep_flags.pipeline();
      std::vector<RunReport> reports;
      for (std::size_t i = 0; i < repetitions; ++i) {
        const auto sc = find_scenario(scenario, seed + i);
        const auto stream = generate(sc);
        const auto result = run_pipeline(stream, sc.topology, cfg);
        const auto dir = std::filesystem::path(out_dir) / fmt::format("seed_{}", seed + i);
        write_run_outputs(dir, stream, sc.topology, result);
        reports.push_back(evaluate_result(stream, sc.topology, result, alpha));
        write_report(dir, reports.back());
      }
      write_repeat(out_dir, scenario, seed, reports, out);
    } else if (*report) {
      merge_reports(inputs, merged);
      out << "wrote " << merged << '\n';
    }
  } catch (const std::exception& e) {
    err << "addd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace addd
