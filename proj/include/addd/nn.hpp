#pragma once

// Minimal numeric layer for the LSTM-VAE: LSTM and dense cells with
// hand-derived gradients, the two loss terms, He-normal init and Adam.

#include <cstdint>
#include <span>
#include <vector>

#include "addd/rng.hpp"
#include "addd/tensor.hpp"

namespace addd {

inline constexpr double kDefaultLeakySlope = 0.01;

double sigmoid(double x);
inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double leaky_relu_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

/// Weights drawn from Normal(0, 2 / fan_in) with fan_in = cols.
Tensor2 he_normal_init(std::size_t rows, std::size_t cols, std::uint64_t seed);
Tensor2 he_normal_init(std::size_t rows, std::size_t cols, Rng& rng);

// ---------------------------------------------------------------------------
// LSTM (no peepholes). Gate blocks are stacked row-wise in the order
// input, forget, output, candidate: rows [0,H) are the input gate, etc.

struct LstmParams {
  Tensor2 w_input;      // 4H x I
  Tensor2 w_recurrent;  // 4H x H
  Tensor2 bias;         // 4H x 1

  LstmParams() = default;
  LstmParams(std::size_t input_dim, std::size_t hidden_dim);

  std::size_t input_dim() const { return w_input.cols(); }
  std::size_t hidden_dim() const { return w_recurrent.cols(); }

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

/// He-normal weights, zero biases except the forget gate, which starts at
/// `forget_bias`.
LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                     double forget_bias = 1.0);

/// Activations recorded by a forward pass; consumed by lstm_backward.
struct LstmCache {
  std::size_t steps = 0;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::uint64_t params_fingerprint = 0;
  std::vector<double> inputs;      // T x I
  std::vector<double> gates;       // T x 4H, post-activation
  std::vector<double> cells;       // T x H
  std::vector<double> tanh_cells;  // T x H
  std::vector<double> hidden;      // T x H

  std::span<const double> hidden_at(std::size_t t) const {
    return {hidden.data() + t * hidden_dim, hidden_dim};
  }
};

struct LstmForward {
  Tensor2 hidden;  // T x H
  LstmCache cache;
};

struct LstmGradients {
  LstmParams params;
  Tensor2 input;  // T x I
};

/// Runs the recurrence from a zero state over `sequence` (T x I).
LstmForward lstm_forward(const Tensor2& sequence, const LstmParams& params);

/// Allocation-free variant: `sequence` holds `steps` rows of input_dim values;
/// `cache` is resized in place and its hidden buffer holds the outputs.
void lstm_forward(std::span<const double> sequence, std::size_t steps,
                  const LstmParams& params, LstmCache& cache);

LstmGradients lstm_backward(const Tensor2& grad_hidden, const LstmCache& cache,
                            const LstmParams& params);

/// Accumulating variant. `grads` must already have the parameter shapes;
/// gradients are added to it. `grad_input` (T x I) is overwritten when
/// non-empty. `scratch` avoids per-call allocation.
void lstm_backward_accumulate(std::span<const double> grad_hidden, const LstmCache& cache,
                              const LstmParams& params, LstmParams& grads,
                              std::span<double> grad_input, std::vector<double>& scratch);

std::uint64_t fingerprint(const LstmParams& params);

// ---------------------------------------------------------------------------

struct DenseParams {
  Tensor2 weight;  // out x in
  Tensor2 bias;    // out x 1

  DenseParams() = default;
  DenseParams(std::size_t in, std::size_t out) : weight(out, in), bias(out, 1) {}

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

DenseParams init_dense(std::size_t in, std::size_t out, Rng& rng);

/// out = W x + b
void dense_forward(const DenseParams& p, std::span<const double> x, std::span<double> out);

/// Adds dW += g x^T, db += g; writes W^T g into grad_x when non-empty.
void dense_backward(const DenseParams& p, std::span<const double> x,
                    std::span<const double> grad_out, DenseParams& grads,
                    std::span<double> grad_x);

// ---------------------------------------------------------------------------

/// Sum of squared differences.
double square_error(std::span<const double> x, std::span<const double> x_hat);

/// KL(N(mu, exp(logvar)) || N(0, I)) = -1/2 sum(1 + logvar - mu^2 - exp(logvar)).
double kl_standard_normal(std::span<const double> mu, std::span<const double> logvar);

// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor2> first_moment;
  std::vector<Tensor2> second_moment;
};

/// One bias-corrected Adam update. Moment buffers are created on first use
/// and must match the parameter list afterwards.
void adam_step(std::span<Tensor2* const> params, std::span<const Tensor2* const> grads,
               AdamState& state, double learning_rate);

}  // namespace addd
