#include <doctest.h>

#include <cmath>
#include <numeric>

#include "addd/errors.hpp"
#include "addd/nn.hpp"
#include "test_support.hpp"

using namespace addd;
using addd::testing::max_relative_error;
using addd::testing::numeric_gradient;

namespace {

Tensor2 random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 0.5) {
  Tensor2 t(r, c);
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

LstmParams random_lstm(std::size_t in, std::size_t hidden, Rng& rng) {
  LstmParams p;
  p.w_input = random_tensor(4 * hidden, in, rng);
  p.w_recurrent = random_tensor(4 * hidden, hidden, rng);
  p.bias = random_tensor(4 * hidden, 1, rng);
  return p;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("he_normal_init is deterministic and shaped") {
  const Tensor2 a = he_normal_init(3, 4, 42);
  const Tensor2 b = he_normal_init(3, 4, 42);
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 4);
  CHECK(a == b);
  CHECK_FALSE(a == he_normal_init(3, 4, 43));
  CHECK_THROWS_AS(he_normal_init(3, 0, 1), ShapeError);
}

TEST_CASE("he_normal_init variance matches 2/fan_in") {
  const Tensor2 w = he_normal_init(2000, 50, 7);  // 1e5 draws
  const double n = static_cast<double>(w.size());
  const double mean = std::accumulate(w.values().begin(), w.values().end(), 0.0) / n;
  double var = 0.0;
  for (double v : w.values()) var += (v - mean) * (v - mean);
  var /= n - 1.0;
  CHECK(std::abs(var - 0.04) < 0.05 * 0.04);
}

TEST_CASE("lstm_forward edge cases") {
  SUBCASE("zero parameters give zero hidden states") {
    LstmParams p(1, 3);
    Tensor2 seq(5, 1);
    for (std::size_t t = 0; t < 5; ++t) seq(t, 0) = 0.3 * static_cast<double>(t) - 0.5;
    const auto out = lstm_forward(seq, p);
    CHECK(out.hidden.rows() == 5);
    for (double h : out.hidden.values()) CHECK(h == 0.0);
  }
  SUBCASE("empty sequence") {
    LstmParams p(1, 2);
    const auto out = lstm_forward(Tensor2(0, 1), p);
    CHECK(out.hidden.rows() == 0);
  }
  SUBCASE("dimension mismatch") {
    LstmParams p(2, 2);
    CHECK_THROWS_AS(lstm_forward(Tensor2(3, 1), p), ShapeError);
  }
}

TEST_CASE("single lstm cell matches scalar evaluation") {
  Rng rng(3);
  const LstmParams p = random_lstm(1, 1, rng);
  const double x = 0.7;
  const auto out = lstm_forward(Tensor2(1, 1, {x}), p);

  // Gate rows: input, forget, output, candidate. Zero initial state.
  const double i = logistic(p.w_input[0] * x + p.bias[0]);
  const double o = logistic(p.w_input[2] * x + p.bias[2]);
  const double g = std::tanh(p.w_input[3] * x + p.bias[3]);
  const double c = i * g;
  const double h = o * std::tanh(c);
  CHECK(out.hidden(0, 0) == doctest::Approx(h).epsilon(1e-14));
}

TEST_CASE("lstm_backward matches central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    LstmParams p = random_lstm(1, 2, rng);
    Tensor2 seq = random_tensor(3, 1, rng, 1.0);
    const Tensor2 upstream = random_tensor(3, 2, rng, 1.0);

    // Scalar objective: <upstream, hidden>.
    auto objective = [&]() {
      const auto out = lstm_forward(seq, p);
      double s = 0.0;
      for (std::size_t k = 0; k < out.hidden.size(); ++k) s += upstream[k] * out.hidden[k];
      return s;
    };
    const auto fwd = lstm_forward(seq, p);
    const auto grads = lstm_backward(upstream, fwd.cache, p);

    CHECK(grads.params.w_input.same_shape(p.w_input));
    CHECK(grads.params.w_recurrent.same_shape(p.w_recurrent));
    CHECK(grads.params.bias.same_shape(p.bias));
    CHECK(max_relative_error(grads.params.w_input, numeric_gradient(p.w_input, objective)) < 1e-3);
    CHECK(max_relative_error(grads.params.w_recurrent,
                             numeric_gradient(p.w_recurrent, objective)) < 1e-3);
    CHECK(max_relative_error(grads.params.bias, numeric_gradient(p.bias, objective)) < 1e-3);
    CHECK(max_relative_error(grads.input, numeric_gradient(seq, objective)) < 1e-3);
  }
}

TEST_CASE("lstm_backward with zero upstream gradient is zero") {
  Rng rng(5);
  const LstmParams p = random_lstm(1, 2, rng);
  const auto fwd = lstm_forward(random_tensor(4, 1, rng), p);
  const auto grads = lstm_backward(Tensor2(4, 2), fwd.cache, p);
  for (const Tensor2* t : {&grads.params.w_input, &grads.params.w_recurrent,
                           &grads.params.bias, &grads.input}) {
    for (double v : t->values()) CHECK(v == 0.0);
  }
}

TEST_CASE("lstm_backward rejects a stale or mismatched cache") {
  Rng rng(6);
  LstmParams p = random_lstm(1, 2, rng);
  const auto fwd = lstm_forward(random_tensor(4, 1, rng), p);
  p.w_input[0] += 0.1;
  CHECK_THROWS_AS(lstm_backward(Tensor2(4, 2), fwd.cache, p), ContractViolation);
  const LstmParams other = random_lstm(1, 3, rng);
  CHECK_THROWS_AS(lstm_backward(Tensor2(4, 3), fwd.cache, other), ContractViolation);
}

TEST_CASE("sequences do not leak state into each other") {
  Rng rng(8);
  const LstmParams p = random_lstm(1, 2, rng);
  const Tensor2 a = random_tensor(6, 1, rng);
  const Tensor2 b = random_tensor(4, 1, rng);
  LstmCache shared;
  lstm_forward(b.values(), b.rows(), p, shared);
  lstm_forward(a.values(), a.rows(), p, shared);
  const auto alone = lstm_forward(a, p);
  CHECK(shared.hidden == std::vector<double>(alone.hidden.values().begin(),
                                             alone.hidden.values().end()));
}

TEST_CASE("dense backward matches central differences") {
  Rng rng(9);
  DenseParams d = init_dense(3, 2, rng);
  Tensor2 x = random_tensor(3, 1, rng);
  const std::vector<double> upstream{0.3, -1.1};
  auto objective = [&]() {
    std::vector<double> out(2);
    dense_forward(d, x.values(), out);
    return upstream[0] * out[0] + upstream[1] * out[1];
  };
  DenseParams g(3, 2);
  Tensor2 gx(3, 1);
  dense_backward(d, x.values(), upstream, g, gx.values());
  CHECK(max_relative_error(g.weight, numeric_gradient(d.weight, objective)) < 1e-6);
  CHECK(max_relative_error(g.bias, numeric_gradient(d.bias, objective)) < 1e-6);
  CHECK(max_relative_error(gx, numeric_gradient(x, objective)) < 1e-6);
}

TEST_CASE("square_error") {
  const std::vector<double> a{0.2, 0.5};
  CHECK(square_error(a, a) == 0.0);
  CHECK(square_error(std::vector<double>{0.0}, std::vector<double>{1.0}) == 1.0);
  CHECK(square_error(a, std::vector<double>{0.1, 0.9}) == doctest::Approx(0.17).epsilon(1e-12));
  CHECK_THROWS_AS(square_error(a, std::vector<double>{1.0}), ShapeError);

  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(5), y(5);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    CHECK(square_error(x, y) > 0.0);
  }
}

TEST_CASE("kl_standard_normal") {
  const std::vector<double> zero{0.0, 0.0};
  CHECK(kl_standard_normal(zero, zero) == 0.0);
  CHECK(kl_standard_normal(std::vector<double>{1.0}, std::vector<double>{0.0}) == 0.5);
  CHECK_THROWS_AS(kl_standard_normal(std::vector<double>{NAN}, std::vector<double>{0.0}),
                  NumericError);
  CHECK_THROWS_AS(kl_standard_normal(zero, std::vector<double>{0.0}), ShapeError);

  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> mu(3), lv(3);
    for (auto& v : mu) v = rng.normal();
    for (auto& v : lv) v = rng.normal();
    std::vector<double> neg(mu);
    for (auto& v : neg) v = -v;
    CHECK(kl_standard_normal(mu, lv) == kl_standard_normal(neg, lv));
    CHECK(kl_standard_normal(mu, lv) > 0.0);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor2 p(2, 2, 0.7);
    const Tensor2 before = p;
    Tensor2 g(2, 2);
    AdamState s;
    Tensor2* params[] = {&p};
    const Tensor2* grads[] = {&g};
    for (int i = 0; i < 5; ++i) adam_step(params, grads, s, 0.01);
    CHECK(p == before);
    CHECK(s.step == 5);
  }
  SUBCASE("first step moves by about the learning rate") {
    Tensor2 p(1, 1, 1.0);
    Tensor2 g(1, 1, 0.5);
    AdamState s;
    Tensor2* params[] = {&p};
    const Tensor2* grads[] = {&g};
    adam_step(params, grads, s, 0.001);
    // m_hat = 0.5, v_hat = 0.25 -> update = lr * 0.5 / (0.5 + 1e-8)
    CHECK(p[0] == doctest::Approx(1.0 - 0.001 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("tensors update independently") {
    Rng rng(12);
    Tensor2 a = random_tensor(2, 3, rng), b = random_tensor(4, 1, rng);
    Tensor2 ga = random_tensor(2, 3, rng), gb = random_tensor(4, 1, rng);
    Tensor2 a1 = a, b1 = b;
    AdamState joint, sa, sb;
    Tensor2* both[] = {&a, &b};
    const Tensor2* both_g[] = {&ga, &gb};
    Tensor2* only_a[] = {&a1};
    const Tensor2* only_ga[] = {&ga};
    Tensor2* only_b[] = {&b1};
    const Tensor2* only_gb[] = {&gb};
    for (int i = 0; i < 3; ++i) {
      adam_step(both, both_g, joint, 0.01);
      adam_step(only_a, only_ga, sa, 0.01);
      adam_step(only_b, only_gb, sb, 0.01);
    }
    CHECK(a == a1);
    CHECK(b == b1);
  }
  SUBCASE("shape mismatch") {
    Tensor2 p(2, 2);
    Tensor2 g(2, 3);
    AdamState s;
    Tensor2* params[] = {&p};
    const Tensor2* grads[] = {&g};
    CHECK_THROWS_AS(adam_step(params, grads, s, 0.01), ShapeError);
  }
}

TEST_CASE("rng reproducibility") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform() == b.uniform());
    CHECK(a.below(17) == b.below(17));
  }
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
