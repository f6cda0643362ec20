#include <doctest.h>

#include <cmath>
#include <numbers>

#include "addd/detector.hpp"
#include "addd/errors.hpp"
#include "addd/rng.hpp"

using namespace addd;

namespace {

DetectorConfig small_config() {
  DetectorConfig c;
  c.vae.epochs = 3;
  c.vae.learning_rate = 1e-2;
  c.vae.seed = 11;
  c.drift_window = 40;
  c.retrain_window = 80;
  c.period = 48;
  return c;
}

std::vector<double> seasonal_noise(std::size_t n, std::uint64_t seed, double level = 0.7) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = level * (1.0 + 0.1 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 48.0)) +
           rng.normal(0.0, 0.01);
  }
  return v;
}

double brute_distance(const Tensor2& a, const Tensor2& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) s += std::pow(a(r, c) - b(r, c), 2);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("compute_threshold: max plus population deviation") {
  const std::vector<double> one{0.3};
  CHECK(compute_threshold(one) == doctest::Approx(0.3));
  const std::vector<double> flat{0.25, 0.25, 0.25};
  CHECK(compute_threshold(flat) == doctest::Approx(0.25));
  const std::vector<double> three{0.1, 0.2, 0.3};
  CHECK(compute_threshold(three) == doctest::Approx(0.3816497).epsilon(1e-7));
  CHECK_THROWS_AS(compute_threshold(std::vector<double>{}), InvalidInput);
}

TEST_CASE("compute_threshold never falls below the largest loss") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> losses(1 + rng.below(30));
    for (double& l : losses) l = rng.uniform();
    CHECK(compute_threshold(losses) >= *std::max_element(losses.begin(), losses.end()));
  }
}

TEST_CASE("window_distance examples") {
  Tensor2 a(1, 1), b(1, 1);
  a(0, 0) = 1.0;
  b(0, 0) = 4.0;
  CHECK(window_distance(a, b) == doctest::Approx(3.0));
  CHECK(window_distance(a, a) == 0.0);

  Tensor2 c(2, 2), d(2, 2);
  c(0, 0) = 1;  // diff vector (2, 1, 2, 0) -> 3
  d(0, 0) = 3;
  d(0, 1) = 1;
  c(1, 0) = 2;
  d(1, 0) = 4;
  CHECK(window_distance(c, d) == doctest::Approx(3.0));
  CHECK_THROWS_AS(window_distance(a, c), ContractViolation);
}

TEST_CASE("window_distance matches brute force and is symmetric") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 1 + rng.below(40);
    EncodingWindow ref(w, 2), mov(w, 2);
    for (std::size_t i = 0; i < w + 5; ++i) {
      ref.push(std::vector<double>{rng.normal(0, 1), rng.normal(0, 1)});
      mov.push(std::vector<double>{rng.normal(0, 1), rng.normal(0, 1)});
    }
    const double expected = brute_distance(ref.to_tensor(), mov.to_tensor());
    CHECK(std::abs(window_distance(ref, mov) - expected) < 1e-9);
    CHECK(window_distance(ref, mov) == window_distance(mov, ref));
  }
}

TEST_CASE("EncodingWindow keeps the newest rows in order") {
  EncodingWindow w(3, 1);
  for (double v : {1.0, 2.0, 3.0, 4.0}) w.push(std::vector<double>{v});
  REQUIRE(w.full());
  CHECK(w.row(0)[0] == 2.0);
  CHECK(w.row(2)[0] == 4.0);
  CHECK_THROWS_AS(w.push(std::vector<double>{1.0, 2.0}), ShapeError);
  EncodingWindow partial(3, 1);
  partial.push(std::vector<double>{0.0});
  CHECK_THROWS_AS(window_distance(partial, w), ContractViolation);
}

TEST_CASE("drift_alarm is strict on both boundaries") {
  const DriftThresholds t{0.5, 1.5};
  CHECK_FALSE(drift_alarm(0.5, t));
  CHECK(drift_alarm(0.5000001, t));
  CHECK(drift_alarm(1.4999999, t));
  CHECK_FALSE(drift_alarm(1.5, t));
  CHECK_FALSE(drift_alarm(10.0, t));
  CHECK_FALSE(drift_alarm(0.0, t));
  CHECK_THROWS_AS((DriftThresholds{1.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((DriftThresholds{-0.1, 1.0}.validate()), ConfigError);
}

TEST_CASE("calibrate_thresholds uses a quantile of reference distances") {
  std::vector<std::vector<double>> enc;
  for (int i = 0; i < 6; ++i) enc.push_back({static_cast<double>(i), 0.0});
  // window 2: ref rows {4,5}; candidate starts 0,1,2 -> distances sqrt(32), sqrt(18), sqrt(8)
  const auto cal = calibrate_thresholds(enc, 2, 1.0, 1.0, 2.0);
  REQUIRE(cal.distances.size() == 3);
  CHECK(cal.distances[0] == doctest::Approx(std::sqrt(32.0)));
  CHECK(cal.thresholds.low == doctest::Approx(std::sqrt(32.0)));
  CHECK(cal.thresholds.upp == doctest::Approx(2.0 * std::sqrt(32.0)));
  const auto median = calibrate_thresholds(enc, 2, 0.5, 1.0, 2.0);
  CHECK(median.thresholds.low == doctest::Approx(std::sqrt(18.0)));
  CHECK_THROWS_AS(calibrate_thresholds(enc, 4, 0.5, 1.0, 2.0), InvalidInput);
}

TEST_CASE("uninitialised detector refuses to step") {
  Detector d;
  CHECK_THROWS_AS(d.step(0.5), ContractViolation);
  CHECK_THROWS_AS(d.retrain(), ContractViolation);
}

TEST_CASE("init_offline rejects short or invalid input") {
  const auto cfg = small_config();
  CHECK_THROWS_AS(Detector::init_offline(seasonal_noise(90, 1), cfg), InvalidInput);
  auto bad = cfg;
  bad.retrain_window = 30;
  CHECK_THROWS_AS(Detector::init_offline(seasonal_noise(400, 1), bad), ConfigError);
}

TEST_CASE("init_offline establishes a consistent state") {
  const auto cfg = small_config();
  const auto series = seasonal_noise(600, 3);
  const Detector d = Detector::init_offline(series, cfg);

  CHECK(d.initialized());
  CHECK(d.mode() == DetectorMode::kMonitoring);
  CHECK(d.reference().full());
  CHECK(d.moving().full());
  CHECK(window_distance(d.reference(), d.moving()) == 0.0);
  CHECK(d.threshold_losses().size() == series.size() - cfg.vae.time_step + 1);
  CHECK(d.theta() == doctest::Approx(compute_threshold(d.threshold_losses())));
  CHECK(d.thresholds().low < d.thresholds().upp);
  CHECK_FALSE(d.calibration_distances().empty());

  const Detector again = Detector::init_offline(series, cfg);
  CHECK(again.theta() == d.theta());
  CHECK(again.thresholds() == d.thresholds());

  const Detector fixed = Detector::init_offline(series, cfg, DriftThresholds{0.1, 0.2});
  CHECK(fixed.thresholds() == DriftThresholds{0.1, 0.2});
  CHECK(fixed.calibration_distances().empty());
}

TEST_CASE("step emits zero until a full sequence exists, then flags large losses") {
  auto cfg = small_config();
  auto d = Detector::init_offline(seasonal_noise(600, 3), cfg, DriftThresholds{1e6, 2e6});
  for (std::size_t i = 0; i + 1 < cfg.vae.time_step; ++i) {
    const auto out = d.step(0.7);
    CHECK(out.y_hat == 0);
    CHECK_FALSE(out.distance.has_value());
  }
  CHECK(d.step(0.7).loss > 0.0);
  // far outside the normalised range: reconstruction loss must blow past theta
  int flagged = 0;
  for (int i = 0; i < 10; ++i) flagged += d.step(0.0).y_hat;
  CHECK(flagged > 0);
  CHECK(d.steps_seen() == cfg.vae.time_step + 10);
}

TEST_CASE("drift band triggers collection and retraining") {
  auto cfg = small_config();
  // every finite distance > 0 is inside the band
  auto d = Detector::init_offline(seasonal_noise(600, 4), cfg, DriftThresholds{0.0, 1e9});
  bool alarmed = false;
  bool retrained = false;
  std::size_t alarm_step = 0, retrain_step = 0;
  const auto online = seasonal_noise(400, 9, 0.8);
  for (std::size_t i = 0; i < online.size() && !retrained; ++i) {
    const auto out = d.step(online[i]);
    if (out.drift_alarm && !alarmed) {
      alarmed = true;
      alarm_step = i;
      CHECK(d.mode() == DetectorMode::kCollectingRetrain);
    }
    if (out.retrained) {
      retrained = true;
      retrain_step = i;
    }
  }
  REQUIRE(alarmed);
  REQUIRE(retrained);
  CHECK(retrain_step - alarm_step + 1 == cfg.retrain_window);
  CHECK(d.retrain_count() == 1);
  CHECK(d.mode() == DetectorMode::kMonitoring);
  CHECK(d.retrain_buffer().empty());
  CHECK(d.moving().size() == 0);
  CHECK(d.reference().full());
  CHECK(d.threshold_losses().size() == cfg.retrain_window - cfg.vae.time_step + 1);
  CHECK(d.theta() == doctest::Approx(compute_threshold(d.threshold_losses())));
}

TEST_CASE("collection guard abandons collection on contamination-scale distance") {
  auto cfg = small_config();
  auto d = Detector::init_offline(seasonal_noise(600, 4), cfg, DriftThresholds{0.0, 1e9});
  const auto online = seasonal_noise(200, 9);
  std::size_t i = 0;
  while (d.mode() == DetectorMode::kMonitoring && i < online.size()) d.step(online[i++]);
  REQUIRE(d.mode() == DetectorMode::kCollectingRetrain);

  // Replace thresholds via checkpoint so the next distance lands above upp.
  auto j = d.checkpoint();
  j["thresholds"] = {0.0, 1e-12};
  auto guarded = Detector::restore(j);
  const auto out = guarded.step(online[i]);
  CHECK(out.collection_aborted);
  CHECK(guarded.mode() == DetectorMode::kMonitoring);
  CHECK(guarded.retrain_buffer().empty());

  j["config"]["guard_collection"] = false;
  auto unguarded = Detector::restore(j);
  CHECK_FALSE(unguarded.step(online[i]).collection_aborted);
  CHECK(unguarded.mode() == DetectorMode::kCollectingRetrain);
}

TEST_CASE("retrain requires a full buffer") {
  auto d = Detector::init_offline(seasonal_noise(600, 3), small_config());
  CHECK_THROWS_AS(d.retrain(), ContractViolation);
}

TEST_CASE("checkpoint round trip reproduces subsequent outputs") {
  auto d = Detector::init_offline(seasonal_noise(600, 3), small_config(),
                                  DriftThresholds{0.0, 1e9});
  const auto online = seasonal_noise(150, 21, 0.75);
  for (std::size_t i = 0; i < 60; ++i) d.step(online[i]);
  auto copy = Detector::restore(nlohmann::json::parse(d.checkpoint().dump()));
  for (std::size_t i = 60; i < online.size(); ++i) {
    const auto a = d.step(online[i]);
    const auto b = copy.step(online[i]);
    REQUIRE(a.loss == b.loss);
    REQUIRE(a.distance == b.distance);
    REQUIRE(a.retrained == b.retrained);
  }
  CHECK(d.retrain_count() == copy.retrain_count());
  CHECK_THROWS_AS(Detector::restore(nlohmann::json{{"format", "other"}}), ParseError);
}
