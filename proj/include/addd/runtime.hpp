#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "addd/detector.hpp"
#include "addd/localization.hpp"
#include "addd/topology.hpp"

namespace addd {

enum class EnvelopeKind { kReading, kPrediction, kRegion, kEnd };

/// One protocol message. Wire form is a single JSON object per line with a
/// fixed key order, e.g. {"kind":"PREDICTION","sensor":"N7","t":1234,"y":1}.
struct Envelope {
  EnvelopeKind kind = EnvelopeKind::kPrediction;
  std::string sensor;              // empty for REGION
  std::int64_t t = 0;              // END carries the number of steps sent
  double value = 0.0;              // READING
  int y = 0;                       // PREDICTION
  std::vector<std::string> nodes;  // REGION

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

std::string encode_envelope(const Envelope& e);
/// ProtocolError on malformed lines, unknown kinds, missing payloads or
/// negative steps.
Envelope decode_envelope(std::string_view line);

using LogFn = std::function<void(const std::string&)>;
/// Writes "addd: <message>" to standard error.
void log_to_stderr(const std::string& message);

/// Line sink used by agents. Throwing signals a delivery failure.
using LineSink = std::function<void(const std::string&)>;

struct AgentOptions {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{5};
};

/// Observer for per-step detector output (local logging only).
using StepObserver = std::function<void(std::int64_t t, const StepOutput&)>;

/// Steps the detector over `readings` and emits one PREDICTION per reading
/// followed by END. Each send is retried with doubling backoff; the last
/// failure is rethrown as ProtocolError.
void run_sensor_agent(const std::string& sensor, std::span<const double> readings,
                      Detector& detector, const LineSink& sink,
                      const StepObserver& observer = {}, const AgentOptions& options = {});

using Clock = std::chrono::steady_clock;

/// Collects predictions per step and releases complete snapshots in step
/// order. A step still incomplete `timeout` after its first prediction
/// arrived is released with the missing sensors treated as clean.
class BarrierState {
 public:
  BarrierState(std::vector<std::string> sensors, Clock::duration timeout, LogFn log);

  /// Feeds a PREDICTION or END. Duplicates, unknown sensors and other
  /// kinds are rejected with a log line and leave the state unchanged.
  /// Returns true when accepted.
  bool accept(const Envelope& e, Clock::time_point now);
  /// Snapshots ready at `now`, in step order. Each step is returned once.
  std::vector<PredictionSnapshot> release(Clock::time_point now);
  /// Releases every remaining step up to the largest END or prediction seen.
  std::vector<PredictionSnapshot> flush();

  bool all_ended() const;
  std::int64_t next_step() const { return next_; }
  /// Earliest time a pending step could time out, if any is pending.
  std::optional<Clock::time_point> next_deadline() const;

 private:
  struct Pending {
    std::vector<std::optional<int>> y;
    std::size_t received = 0;
    Clock::time_point first_arrival;
  };
  PredictionSnapshot complete(std::int64_t t, Pending& p, const char* reason);

  std::vector<std::string> sensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Clock::duration timeout_;
  LogFn log_;
  std::map<std::int64_t, Pending> pending_;
  std::vector<std::optional<std::int64_t>> ended_;
  std::int64_t next_ = 0;
  std::int64_t horizon_ = 0;
};

/// Center side: decodes lines, runs the barrier and localizes each
/// released snapshot.
class MonitoringCenter {
 public:
  MonitoringCenter(const Topology& topology, Clock::duration timeout, LogFn log = log_to_stderr);

  /// Protocol errors are logged and the line is dropped.
  void handle_line(const std::string& line, Clock::time_point now = Clock::now());
  void tick(Clock::time_point now = Clock::now());
  void finish();
  bool all_ended() const { return barrier_.all_ended(); }
  std::optional<Clock::time_point> next_deadline() const { return barrier_.next_deadline(); }

  const std::vector<PredictionSnapshot>& snapshots() const { return snapshots_; }
  const std::vector<RegionReport>& regions() const { return regions_; }
  /// REGION envelopes in step order.
  const std::vector<std::string>& region_lines() const { return region_lines_; }

 private:
  void absorb(std::vector<PredictionSnapshot> ready);

  const Topology& topology_;
  Localizer localizer_;
  LogFn log_;
  BarrierState barrier_;
  std::vector<PredictionSnapshot> snapshots_;
  std::vector<RegionReport> regions_;
  std::vector<std::string> region_lines_;
};

/// Multi-producer single-consumer line queue for in-process transport.
class LineChannel {
 public:
  explicit LineChannel(std::size_t producers) : open_producers_(producers) {}
  void push(std::string line);
  void close_producer();
  /// Waits until a line arrives, all producers closed (nullopt), or `until`.
  std::optional<std::string> pop(Clock::time_point until, bool& closed);

 private:
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::string> lines_;
  std::size_t open_producers_;
};

enum class TransportMode { kInProcess, kSocket };
TransportMode parse_transport_mode(const std::string& text);
std::string to_string(TransportMode mode);

struct RuntimeOptions {
  TransportMode mode = TransportMode::kInProcess;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::chrono::milliseconds barrier_timeout{30000};
  AgentOptions agent;
};

struct DetectorLogRow {
  std::int64_t t = 0;
  std::string sensor;
  StepOutput out;
  double theta = 0.0;
};

struct RuntimeResult {
  std::vector<PredictionSnapshot> snapshots;
  std::vector<RegionReport> regions;
  std::vector<DetectorLogRow> detector_log;  // sensor order, then step order
};

/// Streams each sensor's online readings through its own agent thread and
/// detector into one monitoring center over the chosen transport.
/// `detectors` must hold one initialized detector per topology sensor.
RuntimeResult run_runtime(const Topology& topology,
                          const std::vector<std::vector<double>>& online_readings,
                          std::vector<Detector>& detectors, const RuntimeOptions& options,
                          LogFn log = log_to_stderr);

}  // namespace addd
