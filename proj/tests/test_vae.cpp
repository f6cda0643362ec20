#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "addd/errors.hpp"
#include "addd/vae.hpp"
#include "test_support.hpp"

using namespace addd;

namespace {

VaeModel zero_model(const VaeConfig& c = {}) { return {c, VaeWeights::zeros(c)}; }

std::vector<double> ramp(std::size_t n, double start, double step) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + step * static_cast<double>(i);
  return v;
}

// Encoder evaluated through the Tensor2 LSTM API and hand-written heads.
Posterior encode_by_hand(const VaeModel& m, const std::vector<double>& seq) {
  const auto fwd = lstm_forward(Tensor2(seq.size(), 1, seq), m.weights.encoder);
  const std::size_t H = m.config.hidden_dim;
  Posterior p{std::vector<double>(m.config.latent_dim), std::vector<double>(m.config.latent_dim)};
  for (std::size_t j = 0; j < m.config.latent_dim; ++j) {
    double a = m.weights.mu_head.bias[j];
    double b = m.weights.logvar_head.bias[j];
    for (std::size_t k = 0; k < H; ++k) {
      a += m.weights.mu_head.weight(j, k) * fwd.hidden(seq.size() - 1, k);
      b += m.weights.logvar_head.weight(j, k) * fwd.hidden(seq.size() - 1, k);
    }
    p.mu[j] = a;
    p.logvar[j] = b;
  }
  return p;
}

std::vector<double> decode_by_hand(const VaeModel& m, const std::vector<double>& z) {
  const std::size_t H = m.config.hidden_dim;
  const std::size_t T = m.config.time_step;
  std::vector<double> seed(H);
  for (std::size_t k = 0; k < H; ++k) {
    double a = m.weights.seed_layer.bias[k];
    for (std::size_t j = 0; j < z.size(); ++j) a += m.weights.seed_layer.weight(k, j) * z[j];
    seed[k] = a > 0 ? a : m.config.leaky_relu_slope * a;
  }
  Tensor2 inputs(T, H);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < H; ++k) inputs(t, k) = seed[k];
  }
  const auto fwd = lstm_forward(inputs, m.weights.decoder);
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    double a = m.weights.output_head.bias[0];
    for (std::size_t k = 0; k < H; ++k) a += m.weights.output_head.weight(0, k) * fwd.hidden(t, k);
    out[t] = 1.0 / (1.0 + std::exp(-a));
  }
  return out;
}

}  // namespace

TEST_CASE("encode") {
  VaeConfig c;
  c.seed = 4;
  const VaeModel m = make_vae(c);
  const auto seq = ramp(10, 0.1, 0.05);

  const Posterior a = encode(m, seq);
  const Posterior b = encode(m, seq);
  CHECK(a.mu == b.mu);
  CHECK(a.logvar == b.logvar);
  CHECK(a.mu.size() == c.latent_dim);

  const Posterior oracle = encode_by_hand(m, seq);
  for (std::size_t j = 0; j < c.latent_dim; ++j) {
    CHECK(a.mu[j] == doctest::Approx(oracle.mu[j]).epsilon(1e-13));
    CHECK(a.logvar[j] == doctest::Approx(oracle.logvar[j]).epsilon(1e-13));
  }

  VaeModel z = zero_model();
  z.weights.mu_head.bias[0] = 0.25;
  z.weights.mu_head.bias[1] = -1.5;
  CHECK(encode(z, seq).mu == std::vector<double>{0.25, -1.5});

  CHECK_THROWS_AS(encode(m, ramp(9, 0.0, 0.1)), ShapeError);
}

TEST_CASE("reparameterize") {
  const std::vector<double> mu{0.3, -0.2};
  Rng r1(1);
  const auto z = reparameterize(mu, std::vector<double>{-50.0, -50.0}, r1);
  CHECK(std::abs(z[0] - 0.3) < 1e-10);
  CHECK(std::abs(z[1] + 0.2) < 1e-10);

  Rng a(8), b(8);
  CHECK(reparameterize(mu, std::vector<double>{0.1, 0.2}, a) ==
        reparameterize(mu, std::vector<double>{0.1, 0.2}, b));

  Rng rng(2024);
  const std::vector<double> zero{0.0};
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = reparameterize(zero, zero, rng)[0];
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  const double var = (sum_sq - n * mean * mean) / (n - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("decode") {
  VaeConfig c;
  c.seed = 5;
  const VaeModel m = make_vae(c);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> z{rng.normal(0, 3), rng.normal(0, 3)};
    for (double v : decode(m, z)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  const std::vector<double> z{0.4, -0.9};
  const auto x_hat = decode(m, z);
  const auto oracle = decode_by_hand(m, z);
  for (std::size_t t = 0; t < x_hat.size(); ++t) {
    CHECK(x_hat[t] == doctest::Approx(oracle[t]).epsilon(1e-13));
  }

  VaeModel zm = zero_model();
  zm.weights.output_head.bias[0] = 0.8;
  for (double v : decode(zm, z)) CHECK(v == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))));
  CHECK_THROWS_AS(decode(m, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("vae_loss") {
  const std::vector<double> x(10, 0.5), x_hat(10, 0.6);
  const std::vector<double> mu{1.0, 0.0}, lv{0.0, 0.0}, zero{0.0, 0.0};
  CHECK(vae_loss(x, x_hat, mu, lv, 1.0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(vae_loss(x, x_hat, mu, lv, 0.0) == square_error(x, x_hat));
  CHECK(vae_loss(x, x, zero, zero, 1.0) == 0.0);
  CHECK_THROWS_AS(vae_loss(x, x_hat, mu, lv, -0.1), ConfigError);

  // Monotone in beta while the KL term is positive.
  double prev = -1.0;
  for (double beta = 0.0; beta <= 3.0; beta += 0.25) {
    const double l = vae_loss(x, x_hat, mu, lv, beta);
    CHECK(l >= prev);
    prev = l;
  }
}

TEST_CASE("infer is sampling-free and composes encode/decode") {
  VaeConfig c;
  c.seed = 6;
  const VaeModel m = make_vae(c);
  const auto seq = ramp(10, 0.8, -0.03);
  const Inference a = infer(m, seq);
  const Inference b = infer(m, seq);
  CHECK(a.loss == b.loss);
  CHECK(a.encoding == b.encoding);
  CHECK(a.loss >= 0.0);

  const Posterior p = encode_by_hand(m, seq);
  const double oracle = vae_loss(seq, decode_by_hand(m, p.mu), p.mu, p.logvar, c.beta);
  CHECK(a.loss == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("loss gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    VaeConfig c;
    c.seed = 50 + seed;
    c.time_step = 4;
    VaeModel m = make_vae(c);
    Rng rng(seed);
    std::vector<double> seq(4), eps(2);
    for (auto& v : seq) v = rng.uniform();
    for (auto& v : eps) v = rng.normal();

    VaeWeights grads = VaeWeights::zeros(c);
    vae_loss_and_gradient(m, seq, eps, grads);
    auto params = m.weights.tensors();
    auto analytic = grads.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor2 numeric = addd::testing::numeric_gradient(
          *params[i], [&]() { return vae_loss_with_noise(m, seq, eps); });
      CHECK(addd::testing::max_relative_error(*analytic[i], numeric) < 1e-3);
    }
  }
}

TEST_CASE("train") {
  VaeConfig c;
  c.seed = 9;
  const VaeModel m = make_vae(c);

  SUBCASE("zero epochs is a no-op") {
    VaeConfig c0 = c;
    c0.epochs = 0;
    const auto r = train(m, std::vector<std::vector<double>>{std::vector<double>(10, 0.5)}, c0);
    CHECK(r.model.weights == m.weights);
    CHECK(r.history.empty());
  }
  SUBCASE("empty or out-of-range dataset") {
    CHECK_THROWS_AS(train(m, std::vector<std::vector<double>>{}, c), InvalidInput);
    CHECK_THROWS_AS(train(m, std::vector<std::vector<double>>{std::vector<double>(10, 1.5)}, c),
                    InvalidInput);
  }
  SUBCASE("deterministic and improving on a seasonal series") {
    std::vector<double> series(600);
    for (std::size_t i = 0; i < series.size(); ++i) {
      series[i] = 0.5 + 0.3 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 48.0);
    }
    const auto data = sliding_sequences(series, 10);
    VaeConfig quick = c;
    quick.epochs = 100;
    const auto r1 = train(m, data, quick);
    const auto r2 = train(m, data, quick);
    CHECK(r1.model.weights == r2.model.weights);
    CHECK(r1.history == r2.history);
    REQUIRE(r1.history.size() == 100);
    CHECK(r1.history.back() < r1.history.front());
    for (double h : r1.history) CHECK(std::isfinite(h));
  }
}

TEST_CASE("training on constant sequences fits them") {
  VaeConfig c;
  c.seed = 12;
  const std::vector<std::vector<double>> data(8631, std::vector<double>(10, 0.6));  // pretraining-sized;
  const auto r = train(make_vae(c), data, c);
  const auto& seq = data.front();
  const Posterior p = encode(r.model, seq);
  const double recon = square_error(seq, decode(r.model, p.mu));
  MESSAGE("reconstruction loss " << recon);
  CHECK(recon < 1e-3);
}

TEST_CASE("model persistence is bit-exact") {
  VaeConfig c;
  c.seed = 77;
  c.beta = 0.5;
  const VaeModel m = make_vae(c);
  const auto path = std::filesystem::temp_directory_path() / "addd_vae_roundtrip.json";
  save_vae(m, path);
  const VaeModel back = load_vae(path);
  CHECK(back == m);
  std::filesystem::remove(path);
}
