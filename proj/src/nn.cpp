#include "addd/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "addd/errors.hpp"
#include "nn_detail.hpp"

namespace addd {

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor2 he_normal_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (cols == 0) throw ShapeError("he_normal_init: fan_in must be positive");
  Tensor2 t(rows, cols);
  const double stddev = std::sqrt(2.0 / static_cast<double>(cols));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor2 he_normal_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return he_normal_init(rows, cols, rng);
}

LstmParams::LstmParams(std::size_t input_dim, std::size_t hidden_dim)
    : w_input(4 * hidden_dim, input_dim),
      w_recurrent(4 * hidden_dim, hidden_dim),
      bias(4 * hidden_dim, 1) {}

LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                     double forget_bias) {
  LstmParams p;
  p.w_input = he_normal_init(4 * hidden_dim, input_dim, rng);
  p.w_recurrent = he_normal_init(4 * hidden_dim, hidden_dim, rng);
  p.bias = Tensor2(4 * hidden_dim, 1);
  for (std::size_t k = 0; k < hidden_dim; ++k) p.bias[hidden_dim + k] = forget_bias;
  return p;
}

std::uint64_t fingerprint(const LstmParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Tensor2& t) {
    h = (h ^ t.rows()) * 0x100000001b3ULL;
    h = (h ^ t.cols()) * 0x100000001b3ULL;
    for (double v : t.values()) h = (h ^ std::bit_cast<std::uint64_t>(v)) * 0x100000001b3ULL;
  };
  mix(params.w_input);
  mix(params.w_recurrent);
  mix(params.bias);
  return h;
}

namespace {

void check_params(const LstmParams& p) {
  const std::size_t H = p.hidden_dim();
  if (p.w_input.rows() != 4 * H || p.w_recurrent.rows() != 4 * H || p.bias.rows() != 4 * H ||
      p.bias.cols() != 1) {
    throw ShapeError("lstm: inconsistent parameter shapes");
  }
}

}  // namespace

void lstm_forward(std::span<const double> sequence, std::size_t steps,
                  const LstmParams& params, LstmCache& cache) {
  check_params(params);
  detail::lstm_forward_unchecked(sequence, steps, params, cache);
  cache.params_fingerprint = fingerprint(params);
}

namespace detail {

void lstm_forward_unchecked(std::span<const double> sequence, std::size_t steps,
                            const LstmParams& params, LstmCache& cache) {
  const std::size_t I = params.input_dim();
  const std::size_t H = params.hidden_dim();
  if (sequence.size() != steps * I) {
    throw ShapeError("lstm_forward: sequence has " + std::to_string(sequence.size()) +
                     " values, expected " + std::to_string(steps) + "x" + std::to_string(I));
  }
  cache.steps = steps;
  cache.input_dim = I;
  cache.hidden_dim = H;
  cache.params_fingerprint = 0;
  cache.inputs.assign(sequence.begin(), sequence.end());
  cache.gates.resize(steps * 4 * H);
  cache.cells.resize(steps * H);
  cache.tanh_cells.resize(steps * H);
  cache.hidden.resize(steps * H);

  const double* wx = params.w_input.values().data();
  const double* wh = params.w_recurrent.values().data();
  const double* b = params.bias.values().data();

  for (std::size_t t = 0; t < steps; ++t) {
    const double* x = sequence.data() + t * I;
    const double* h_prev = t > 0 ? cache.hidden.data() + (t - 1) * H : nullptr;
    const double* c_prev = t > 0 ? cache.cells.data() + (t - 1) * H : nullptr;
    double* gate = cache.gates.data() + t * 4 * H;
    for (std::size_t r = 0; r < 4 * H; ++r) {
      double a = b[r];
      for (std::size_t k = 0; k < I; ++k) a += wx[r * I + k] * x[k];
      if (h_prev) {
        for (std::size_t k = 0; k < H; ++k) a += wh[r * H + k] * h_prev[k];
      }
      gate[r] = r < 3 * H ? sigmoid(a) : std::tanh(a);
    }
    double* c = cache.cells.data() + t * H;
    double* tc = cache.tanh_cells.data() + t * H;
    double* h = cache.hidden.data() + t * H;
    for (std::size_t k = 0; k < H; ++k) {
      const double i_g = gate[k];
      const double f_g = gate[H + k];
      const double o_g = gate[2 * H + k];
      const double g_g = gate[3 * H + k];
      c[k] = (c_prev ? f_g * c_prev[k] : 0.0) + i_g * g_g;
      tc[k] = std::tanh(c[k]);
      h[k] = o_g * tc[k];
    }
  }
}

}  // namespace detail

LstmForward lstm_forward(const Tensor2& sequence, const LstmParams& params) {
  if (sequence.rows() > 0 && sequence.cols() != params.input_dim()) {
    throw ShapeError("lstm_forward: input vectors have length " +
                     std::to_string(sequence.cols()) + ", expected " +
                     std::to_string(params.input_dim()));
  }
  LstmForward out;
  lstm_forward(sequence.values(), sequence.rows(), params, out.cache);
  out.hidden = Tensor2(sequence.rows(), params.hidden_dim(), out.cache.hidden);
  return out;
}

void lstm_backward_accumulate(std::span<const double> grad_hidden, const LstmCache& cache,
                              const LstmParams& params, LstmParams& grads,
                              std::span<double> grad_input, std::vector<double>& scratch) {
  const std::size_t T = cache.steps;
  const std::size_t I = cache.input_dim;
  const std::size_t H = cache.hidden_dim;
  if (I != params.input_dim() || H != params.hidden_dim() ||
      cache.params_fingerprint != fingerprint(params)) {
    throw ContractViolation("lstm_backward: cache was not produced with these parameters");
  }
  if (grad_hidden.size() != T * H) throw ShapeError("lstm_backward: grad_hidden shape");
  if (!grad_input.empty() && grad_input.size() != T * I) {
    throw ShapeError("lstm_backward: grad_input shape");
  }
  if (!grads.w_input.same_shape(params.w_input) ||
      !grads.w_recurrent.same_shape(params.w_recurrent) || !grads.bias.same_shape(params.bias)) {
    throw ShapeError("lstm_backward: gradient accumulator shape");
  }
  detail::lstm_backward_unchecked(grad_hidden, cache, params, grads, grad_input, scratch);
}

namespace detail {

void lstm_backward_unchecked(std::span<const double> grad_hidden, const LstmCache& cache,
                             const LstmParams& params, LstmParams& grads,
                             std::span<double> grad_input, std::vector<double>& scratch) {
  const std::size_t T = cache.steps;
  const std::size_t I = cache.input_dim;
  const std::size_t H = cache.hidden_dim;

  // scratch layout: dh_next[H] dc_next[H] dgate[4H]
  scratch.assign(6 * H, 0.0);
  double* dh_next = scratch.data();
  double* dc_next = dh_next + H;
  double* da = dc_next + H;

  const double* wx = params.w_input.values().data();
  const double* wh = params.w_recurrent.values().data();
  double* gwx = grads.w_input.values().data();
  double* gwh = grads.w_recurrent.values().data();
  double* gb = grads.bias.values().data();

  for (std::size_t t = T; t-- > 0;) {
    const double* gate = cache.gates.data() + t * 4 * H;
    const double* tc = cache.tanh_cells.data() + t * H;
    const double* c_prev = t > 0 ? cache.cells.data() + (t - 1) * H : nullptr;
    const double* h_prev = t > 0 ? cache.hidden.data() + (t - 1) * H : nullptr;
    const double* x = cache.inputs.data() + t * I;

    for (std::size_t k = 0; k < H; ++k) {
      const double i_g = gate[k];
      const double f_g = gate[H + k];
      const double o_g = gate[2 * H + k];
      const double g_g = gate[3 * H + k];
      const double dh = grad_hidden[t * H + k] + dh_next[k];
      const double d_o = dh * tc[k];
      const double dc = dh * o_g * (1.0 - tc[k] * tc[k]) + dc_next[k];
      const double d_i = dc * g_g;
      const double d_g = dc * i_g;
      const double d_f = c_prev ? dc * c_prev[k] : 0.0;
      dc_next[k] = dc * f_g;
      da[k] = d_i * i_g * (1.0 - i_g);
      da[H + k] = d_f * f_g * (1.0 - f_g);
      da[2 * H + k] = d_o * o_g * (1.0 - o_g);
      da[3 * H + k] = d_g * (1.0 - g_g * g_g);
    }
    for (std::size_t r = 0; r < 4 * H; ++r) {
      gb[r] += da[r];
      for (std::size_t k = 0; k < I; ++k) gwx[r * I + k] += da[r] * x[k];
      if (h_prev) {
        for (std::size_t k = 0; k < H; ++k) gwh[r * H + k] += da[r] * h_prev[k];
      }
    }
    if (!grad_input.empty()) {
      for (std::size_t k = 0; k < I; ++k) {
        double s = 0.0;
        for (std::size_t r = 0; r < 4 * H; ++r) s += wx[r * I + k] * da[r];
        grad_input[t * I + k] = s;
      }
    }
    for (std::size_t k = 0; k < H; ++k) {
      double s = 0.0;
      for (std::size_t r = 0; r < 4 * H; ++r) s += wh[r * H + k] * da[r];
      dh_next[k] = s;
    }
  }
}

}  // namespace detail

LstmGradients lstm_backward(const Tensor2& grad_hidden, const LstmCache& cache,
                            const LstmParams& params) {
  if (cache.input_dim != params.input_dim() || cache.hidden_dim != params.hidden_dim()) {
    throw ContractViolation("lstm_backward: cache was not produced with these parameters");
  }
  if (grad_hidden.rows() != cache.steps || grad_hidden.cols() != cache.hidden_dim) {
    throw ShapeError("lstm_backward: grad_hidden must be steps x hidden_dim");
  }
  LstmGradients out{LstmParams(params.input_dim(), params.hidden_dim()),
                    Tensor2(cache.steps, params.input_dim())};
  std::vector<double> scratch;
  lstm_backward_accumulate(grad_hidden.values(), cache, params, out.params,
                           out.input.values(), scratch);
  return out;
}

DenseParams init_dense(std::size_t in, std::size_t out, Rng& rng) {
  DenseParams p;
  p.weight = he_normal_init(out, in, rng);
  p.bias = Tensor2(out, 1);
  return p;
}

void dense_forward(const DenseParams& p, std::span<const double> x, std::span<double> out) {
  const std::size_t in = p.in_dim();
  const std::size_t n_out = p.out_dim();
  if (x.size() != in || out.size() != n_out) throw ShapeError("dense_forward: shape mismatch");
  const double* w = p.weight.values().data();
  for (std::size_t r = 0; r < n_out; ++r) {
    double a = p.bias[r];
    for (std::size_t k = 0; k < in; ++k) a += w[r * in + k] * x[k];
    out[r] = a;
  }
}

void dense_backward(const DenseParams& p, std::span<const double> x,
                    std::span<const double> grad_out, DenseParams& grads,
                    std::span<double> grad_x) {
  const std::size_t in = p.in_dim();
  const std::size_t n_out = p.out_dim();
  if (x.size() != in || grad_out.size() != n_out) {
    throw ShapeError("dense_backward: shape mismatch");
  }
  double* gw = grads.weight.values().data();
  for (std::size_t r = 0; r < n_out; ++r) {
    grads.bias[r] += grad_out[r];
    for (std::size_t k = 0; k < in; ++k) gw[r * in + k] += grad_out[r] * x[k];
  }
  if (!grad_x.empty()) {
    if (grad_x.size() != in) throw ShapeError("dense_backward: grad_x shape");
    const double* w = p.weight.values().data();
    for (std::size_t k = 0; k < in; ++k) {
      double s = 0.0;
      for (std::size_t r = 0; r < n_out; ++r) s += w[r * in + k] * grad_out[r];
      grad_x[k] = s;
    }
  }
}

double square_error(std::span<const double> x, std::span<const double> x_hat) {
  if (x.size() != x_hat.size()) {
    throw ShapeError("square_error: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(x_hat.size()));
  }
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - x_hat[j];
    s += d * d;
  }
  return s;
}

double kl_standard_normal(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("kl_standard_normal: length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    if (!std::isfinite(mu[j]) || !std::isfinite(logvar[j])) {
      throw NumericError("kl_standard_normal: non-finite input");
    }
    // exp(lv) - 1 - lv is computed as expm1(lv) - lv to keep precision near 0.
    s += mu[j] * mu[j] + (std::expm1(logvar[j]) - logvar[j]);
  }
  return 0.5 * s;
}

void adam_step(std::span<Tensor2* const> params, std::span<const Tensor2* const> grads,
               AdamState& state, double learning_rate) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count");
  if (state.first_moment.empty()) {
    for (const Tensor2* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *grads[i], "adam_step");
    require_same_shape(*params[i], state.first_moment[i], "adam_step state");
  }

  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i]->values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace addd
