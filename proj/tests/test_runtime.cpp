#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "addd/errors.hpp"
#include "addd/rng.hpp"
#include "addd/runtime.hpp"
#include "test_support.hpp"

using namespace addd;
using namespace std::chrono_literals;

namespace {

DetectorConfig small_config(std::uint64_t seed) {
  DetectorConfig c;
  c.vae.epochs = 2;
  c.vae.learning_rate = 1e-2;
  c.vae.seed = seed;
  c.drift_window = 40;
  c.retrain_window = 80;
  c.period = 48;
  return c;
}

std::vector<double> wave(std::size_t n, std::uint64_t seed, std::size_t offset = 0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i + offset);
    v[i] = 0.7 + 0.07 * std::sin(2.0 * std::numbers::pi * x / 48.0) + rng.normal(0.0, 0.01);
  }
  return v;
}

Detector small_detector(std::uint64_t seed) {
  return Detector::init_offline(wave(400, seed), small_config(seed));
}

Topology two_sensor_chain() {
  return Topology("chain", {"r", "a", "b"}, {{0, 1}, {1, 2}}, 0, {1, 2});
}

Envelope prediction(const std::string& s, std::int64_t t, int y) {
  Envelope e;
  e.kind = EnvelopeKind::kPrediction;
  e.sensor = s;
  e.t = t;
  e.y = y;
  return e;
}

struct CapturedLog {
  std::vector<std::string> lines;
  LogFn fn() {
    return [this](const std::string& m) { lines.push_back(m); };
  }
};

}  // namespace

TEST_CASE("envelope wire format") {
  CHECK(encode_envelope(prediction("N7", 1234, 1)) ==
        R"({"kind":"PREDICTION","sensor":"N7","t":1234,"y":1})");
  Envelope end;
  end.kind = EnvelopeKind::kEnd;
  end.sensor = "N7";
  end.t = 8640;
  CHECK(encode_envelope(end) == R"({"kind":"END","sensor":"N7","t":8640})");
  Envelope region;
  region.kind = EnvelopeKind::kRegion;
  region.t = 3;
  region.nodes = {"N4", "N5"};
  CHECK(encode_envelope(region) == R"({"kind":"REGION","t":3,"nodes":["N4","N5"]})");
  Envelope reading;
  reading.kind = EnvelopeKind::kReading;
  reading.sensor = "N4";
  reading.t = 0;
  reading.value = 0.123456789012345;
  for (const auto& e : {prediction("N7", 1234, 1), end, region, reading}) {
    CHECK(decode_envelope(encode_envelope(e)) == e);
  }
}

TEST_CASE("malformed envelopes are protocol errors") {
  for (const char* bad : {"", "not json", "[1]", R"({"kind":"PING","sensor":"a","t":0})",
                          R"({"kind":"PREDICTION","sensor":"a","t":-1,"y":0})",
                          R"({"kind":"PREDICTION","sensor":"a","t":0,"y":2})",
                          R"({"kind":"PREDICTION","sensor":"a","t":0})",
                          R"({"kind":"PREDICTION","t":0,"y":1})",
                          R"({"kind":"READING","sensor":"a","t":0,"value":"x"})"}) {
    CHECK_THROWS_AS(decode_envelope(bad), ProtocolError);
  }
}

TEST_CASE("agent emits one prediction per reading, then END") {
  Detector a = small_detector(1);
  Detector b = a;
  const auto readings = wave(100, 9, 400);
  std::vector<std::string> lines;
  run_sensor_agent("a", readings, a, [&](const std::string& l) { lines.push_back(l); });
  REQUIRE(lines.size() == 101);
  for (std::size_t i = 0; i < 100; ++i) {
    const Envelope e = decode_envelope(lines[i]);
    CHECK(e.kind == EnvelopeKind::kPrediction);
    CHECK(e.t == static_cast<std::int64_t>(i));
    CHECK(e.y == b.step(readings[i]).y_hat);
  }
  const Envelope last = decode_envelope(lines.back());
  CHECK(last.kind == EnvelopeKind::kEnd);
  CHECK(last.t == 100);
}

TEST_CASE("agent retries a failing sink with bounded attempts") {
  Detector d = small_detector(2);
  const auto readings = wave(5, 3);
  int failures = 2;
  std::size_t delivered = 0;
  AgentOptions fast{3, 1ms};
  run_sensor_agent(
      "a", readings, d,
      [&](const std::string&) {
        if (failures-- > 0) throw std::runtime_error("transient");
        ++delivered;
      },
      {}, fast);
  CHECK(delivered == 6);
  CHECK_THROWS_AS(run_sensor_agent(
                      "a", readings, d,
                      [](const std::string&) { throw std::runtime_error("down"); }, {}, fast),
                  ProtocolError);
}

TEST_CASE("barrier output does not depend on arrival order") {
  const std::vector<std::string> sensors{"a", "b", "c"};
  Rng rng(31);
  std::vector<Envelope> envelopes;
  for (std::int64_t t = 0; t < 30; ++t)
    for (const auto& s : sensors) envelopes.push_back(prediction(s, t, static_cast<int>(rng.below(2))));
  for (const auto& s : sensors) {
    Envelope end;
    end.kind = EnvelopeKind::kEnd;
    end.sensor = s;
    end.t = 30;
    envelopes.push_back(end);
  }

  auto run = [&](std::vector<Envelope> order) {
    CapturedLog log;
    BarrierState barrier(sensors, 1h, log.fn());
    std::vector<PredictionSnapshot> out;
    const auto now = Clock::now();
    for (const auto& e : order) {
      REQUIRE(barrier.accept(e, now));
      for (auto& s : barrier.release(now)) out.push_back(std::move(s));
    }
    for (auto& s : barrier.flush()) out.push_back(std::move(s));
    CHECK(log.lines.empty());
    return out;
  };

  const auto reference = run(envelopes);
  REQUIRE(reference.size() == 30);
  for (std::int64_t t = 0; t < 30; ++t) CHECK(reference[static_cast<std::size_t>(t)].t == t);
  for (int trial = 0; trial < 20; ++trial) {
    // per-sender order is preserved; senders interleave arbitrarily
    std::vector<std::vector<Envelope>> per(sensors.size());
    for (const auto& e : envelopes)
      per[static_cast<std::size_t>(std::find(sensors.begin(), sensors.end(), e.sensor) -
                                   sensors.begin())]
          .push_back(e);
    std::vector<Envelope> order;
    std::vector<std::size_t> pos(sensors.size(), 0);
    while (order.size() < envelopes.size()) {
      const auto s = static_cast<std::size_t>(rng.below(sensors.size()));
      if (pos[s] < per[s].size()) order.push_back(per[s][pos[s]++]);
    }
    const auto got = run(order);
    REQUIRE(got.size() == reference.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].t == reference[i].t);
      CHECK(got[i].y_hat == reference[i].y_hat);
    }
  }
}

TEST_CASE("duplicates and strangers are rejected and logged") {
  CapturedLog log;
  BarrierState barrier({"a", "b"}, 1h, log.fn());
  const auto now = Clock::now();
  CHECK(barrier.accept(prediction("a", 0, 1), now));
  CHECK_FALSE(barrier.accept(prediction("a", 0, 0), now));
  CHECK_FALSE(barrier.accept(prediction("zz", 0, 0), now));
  CHECK(barrier.accept(prediction("b", 0, 0), now));
  const auto out = barrier.release(now);
  REQUIRE(out.size() == 1);
  CHECK(out[0].y_hat == std::vector<int>{1, 0});
  CHECK_FALSE(barrier.accept(prediction("b", 0, 1), now));
  CHECK(log.lines.size() == 3);
}

TEST_CASE("a silent sensor times out and counts as clean") {
  CapturedLog log;
  BarrierState barrier({"a", "b"}, 50ms, log.fn());
  const auto t0 = Clock::now();
  for (std::int64_t t = 0; t < 3; ++t) barrier.accept(prediction("a", t, 1), t0);
  CHECK(barrier.release(t0 + 10ms).empty());
  const auto out = barrier.release(t0 + 60ms);
  REQUIRE(out.size() == 3);
  for (const auto& s : out) CHECK(s.y_hat == std::vector<int>{1, 0});
  CHECK(log.lines.size() == 3);
  CHECK(log.lines[0].find("b") != std::string::npos);
}

TEST_CASE("center with one sensor alternates between empty and upstream") {
  const Topology t("line", {"r", "a", "b"}, {{0, 1}, {1, 2}}, 0, {1});
  CapturedLog log;
  MonitoringCenter center(t, 1h, log.fn());
  for (std::int64_t step = 0; step < 6; ++step) {
    center.handle_line(encode_envelope(prediction("a", step, static_cast<int>(step % 2))));
  }
  center.handle_line("garbage");
  center.finish();
  REQUIRE(center.regions().size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    if (i % 2) {
      CHECK(center.regions()[i].region == NodeSet{0, 1});
    } else {
      CHECK(center.regions()[i].region.empty());
    }
  }
  CHECK(center.region_lines()[1] == R"({"kind":"REGION","t":1,"nodes":["r","a"]})");
  CHECK(log.lines.size() == 1);
}

TEST_CASE("in-process and socket transports agree") {
  const Topology topo = two_sensor_chain();
  const std::vector<std::vector<double>> readings{wave(300, 5, 400), wave(300, 6, 400)};
  auto run = [&](TransportMode mode) {
    std::vector<Detector> detectors{small_detector(1), small_detector(2)};
    RuntimeOptions opts;
    opts.mode = mode;
    return run_runtime(topo, readings, detectors, opts);
  };
  const auto a = run(TransportMode::kInProcess);
  const auto b = run(TransportMode::kSocket);
  REQUIRE(a.snapshots.size() == 300);
  REQUIRE(b.snapshots.size() == 300);
  for (std::size_t i = 0; i < 300; ++i) {
    CHECK(a.snapshots[i].t == static_cast<std::int64_t>(i));
    CHECK(a.snapshots[i].y_hat == b.snapshots[i].y_hat);
    CHECK(a.regions[i].region == b.regions[i].region);
  }
  CHECK(a.detector_log.size() == 600);

  // Each agent's predictions equal stepping its detector directly.
  Detector direct = small_detector(2);
  for (std::size_t i = 0; i < 300; ++i) {
    CHECK(a.snapshots[i].y_hat[1] == direct.step(readings[1][i]).y_hat);
  }
}

TEST_CASE("transport mode names") {
  CHECK(parse_transport_mode("socket") == TransportMode::kSocket);
  CHECK(to_string(TransportMode::kInProcess) == "inprocess");
  CHECK_THROWS_AS(parse_transport_mode("carrier-pigeon"), ConfigError);
}
