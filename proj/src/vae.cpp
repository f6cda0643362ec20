#include "addd/vae.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "addd/errors.hpp"
#include "addd/serialize.hpp"
#include "nn_detail.hpp"

namespace addd {

void VaeConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be >= 0");
  if (time_step == 0) throw ConfigError("time_step must be >= 1");
  if (hidden_dim == 0 || latent_dim == 0) throw ConfigError("layer widths must be positive");
  if (!(leaky_relu_slope >= 0.0)) throw ConfigError("leaky_relu_slope must be >= 0");
}

bool VaeConfig::same_architecture(const VaeConfig& o) const {
  return time_step == o.time_step && hidden_dim == o.hidden_dim && latent_dim == o.latent_dim &&
         leaky_relu_slope == o.leaky_relu_slope;
}

VaeWeights VaeWeights::zeros(const VaeConfig& c) {
  VaeWeights w;
  w.encoder = LstmParams(1, c.hidden_dim);
  w.mu_head = DenseParams(c.hidden_dim, c.latent_dim);
  w.logvar_head = DenseParams(c.hidden_dim, c.latent_dim);
  w.seed_layer = DenseParams(c.latent_dim, c.hidden_dim);
  w.decoder = LstmParams(c.hidden_dim, c.hidden_dim);
  w.output_head = DenseParams(c.hidden_dim, 1);
  return w;
}

std::vector<Tensor2*> VaeWeights::tensors() {
  return {&encoder.w_input,     &encoder.w_recurrent,  &encoder.bias,
          &mu_head.weight,      &mu_head.bias,         &logvar_head.weight,
          &logvar_head.bias,    &seed_layer.weight,    &seed_layer.bias,
          &decoder.w_input,     &decoder.w_recurrent,  &decoder.bias,
          &output_head.weight,  &output_head.bias};
}

std::vector<const Tensor2*> VaeWeights::tensors() const {
  auto mut = const_cast<VaeWeights*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

bool VaeWeights::all_finite() const {
  for (const Tensor2* t : tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

VaeModel make_vae(const VaeConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x1417));
  VaeModel m{config, {}};
  const std::size_t H = config.hidden_dim;
  const std::size_t L = config.latent_dim;
  m.weights.encoder = init_lstm(1, H, rng, config.forget_bias);
  m.weights.mu_head = init_dense(H, L, rng);
  m.weights.logvar_head = init_dense(H, L, rng);
  m.weights.seed_layer = init_dense(L, H, rng);
  m.weights.decoder = init_lstm(H, H, rng, config.forget_bias);
  m.weights.output_head = init_dense(H, 1, rng);
  return m;
}

namespace {

// Buffers for one forward/backward pass, reused across samples.
struct Workspace {
  LstmCache enc;
  LstmCache dec;
  std::vector<double> mu, logvar, z, sigma, seed_pre, seed, dec_inputs, x_hat;
  std::vector<double> grad_dec_hidden, grad_dec_inputs, grad_seed, grad_seed_pre, grad_z;
  std::vector<double> grad_mu, grad_logvar, grad_enc_hidden, tmp, scratch;
};

void check_sequence(const VaeModel& model, std::span<const double> seq) {
  if (seq.size() != model.config.time_step) {
    throw ShapeError("sequence length " + std::to_string(seq.size()) + " != time_step " +
                     std::to_string(model.config.time_step));
  }
}

void run_encoder(const VaeModel& model, std::span<const double> seq, Workspace& ws) {
  const auto& w = model.weights;
  const std::size_t T = model.config.time_step;
  const std::size_t H = model.config.hidden_dim;
  const std::size_t L = model.config.latent_dim;
  detail::lstm_forward_unchecked(seq, T, w.encoder, ws.enc);
  std::span<const double> h_last(ws.enc.hidden.data() + (T - 1) * H, H);
  ws.mu.resize(L);
  ws.logvar.resize(L);
  dense_forward(w.mu_head, h_last, ws.mu);
  dense_forward(w.logvar_head, h_last, ws.logvar);
}

void run_decoder(const VaeModel& model, std::span<const double> z, Workspace& ws) {
  const auto& w = model.weights;
  const std::size_t T = model.config.time_step;
  const std::size_t H = model.config.hidden_dim;
  const double slope = model.config.leaky_relu_slope;
  ws.seed_pre.resize(H);
  ws.seed.resize(H);
  dense_forward(w.seed_layer, z, ws.seed_pre);
  for (std::size_t k = 0; k < H; ++k) ws.seed[k] = leaky_relu(ws.seed_pre[k], slope);
  ws.dec_inputs.resize(T * H);
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(ws.seed.begin(), ws.seed.end(), ws.dec_inputs.begin() + t * H);
  }
  detail::lstm_forward_unchecked(ws.dec_inputs, T, w.decoder, ws.dec);
  ws.x_hat.resize(T);
  const double* wo = w.output_head.weight.values().data();
  const double bo = w.output_head.bias[0];
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = ws.dec.hidden.data() + t * H;
    double a = bo;
    for (std::size_t k = 0; k < H; ++k) a += wo[k] * h[k];
    ws.x_hat[t] = sigmoid(a);
  }
}

// Forward with fixed noise; leaves every intermediate in ws.
double forward_with_noise(const VaeModel& model, std::span<const double> seq,
                          std::span<const double> eps, Workspace& ws) {
  const std::size_t L = model.config.latent_dim;
  if (eps.size() != L) throw ShapeError("noise vector length != latent_dim");
  run_encoder(model, seq, ws);
  ws.z.resize(L);
  ws.sigma.resize(L);
  for (std::size_t j = 0; j < L; ++j) {
    ws.sigma[j] = std::exp(0.5 * ws.logvar[j]);
    ws.z[j] = ws.mu[j] + ws.sigma[j] * eps[j];
  }
  run_decoder(model, ws.z, ws);
  return vae_loss(seq, ws.x_hat, ws.mu, ws.logvar, model.config.beta);
}

void backward(const VaeModel& model, std::span<const double> seq, std::span<const double> eps,
              Workspace& ws, VaeWeights& g) {
  const auto& w = model.weights;
  const std::size_t T = model.config.time_step;
  const std::size_t H = model.config.hidden_dim;
  const std::size_t L = model.config.latent_dim;
  const double beta = model.config.beta;
  const double slope = model.config.leaky_relu_slope;

  // Output head: loss term (x - x_hat)^2 through a sigmoid.
  ws.grad_dec_hidden.assign(T * H, 0.0);
  const double* wo = w.output_head.weight.values().data();
  double* gwo = g.output_head.weight.values().data();
  for (std::size_t t = 0; t < T; ++t) {
    const double xh = ws.x_hat[t];
    const double d_pre = -2.0 * (seq[t] - xh) * xh * (1.0 - xh);
    const double* h = ws.dec.hidden.data() + t * H;
    g.output_head.bias[0] += d_pre;
    for (std::size_t k = 0; k < H; ++k) {
      gwo[k] += d_pre * h[k];
      ws.grad_dec_hidden[t * H + k] = d_pre * wo[k];
    }
  }

  ws.grad_dec_inputs.resize(T * H);
  detail::lstm_backward_unchecked(ws.grad_dec_hidden, ws.dec, w.decoder, g.decoder, ws.grad_dec_inputs,
                           ws.scratch);

  // The seed is repeated at every step, so its gradient sums over time.
  ws.grad_seed.assign(H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < H; ++k) ws.grad_seed[k] += ws.grad_dec_inputs[t * H + k];
  }
  ws.grad_seed_pre.resize(H);
  for (std::size_t k = 0; k < H; ++k) {
    ws.grad_seed_pre[k] = ws.grad_seed[k] * leaky_relu_grad(ws.seed_pre[k], slope);
  }
  ws.grad_z.resize(L);
  dense_backward(w.seed_layer, ws.z, ws.grad_seed_pre, g.seed_layer, ws.grad_z);

  // Reparameterisation and KL term.
  ws.grad_mu.resize(L);
  ws.grad_logvar.resize(L);
  for (std::size_t j = 0; j < L; ++j) {
    ws.grad_mu[j] = ws.grad_z[j] + beta * ws.mu[j];
    ws.grad_logvar[j] = ws.grad_z[j] * eps[j] * 0.5 * ws.sigma[j] +
                        beta * 0.5 * std::expm1(ws.logvar[j]);
  }

  std::span<const double> h_last(ws.enc.hidden.data() + (T - 1) * H, H);
  ws.grad_enc_hidden.assign(T * H, 0.0);
  ws.tmp.resize(H);
  std::span<double> dh_last(ws.grad_enc_hidden.data() + (T - 1) * H, H);
  dense_backward(w.mu_head, h_last, ws.grad_mu, g.mu_head, ws.tmp);
  for (std::size_t k = 0; k < H; ++k) dh_last[k] = ws.tmp[k];
  dense_backward(w.logvar_head, h_last, ws.grad_logvar, g.logvar_head, ws.tmp);
  for (std::size_t k = 0; k < H; ++k) dh_last[k] += ws.tmp[k];

  detail::lstm_backward_unchecked(ws.grad_enc_hidden, ws.enc, w.encoder, g.encoder, {}, ws.scratch);
}

void check_dataset(const VaeModel& model, std::span<const std::vector<double>> dataset) {
  if (dataset.empty()) throw InvalidInput("train: dataset is empty");
  for (const auto& seq : dataset) {
    check_sequence(model, seq);
    for (double v : seq) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("train: values must lie in [0, 1]");
    }
  }
}

}  // namespace

Posterior encode(const VaeModel& model, std::span<const double> sequence) {
  check_sequence(model, sequence);
  Workspace ws;
  run_encoder(model, sequence, ws);
  return {ws.mu, ws.logvar};
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   Rng& rng) {
  if (mu.size() != logvar.size()) throw ShapeError("reparameterize: length mismatch");
  std::vector<double> z(mu.size());
  for (std::size_t j = 0; j < mu.size(); ++j) {
    z[j] = mu[j] + std::exp(0.5 * logvar[j]) * rng.normal();
  }
  return z;
}

std::vector<double> decode(const VaeModel& model, std::span<const double> z) {
  if (z.size() != model.config.latent_dim) throw ShapeError("decode: z length != latent_dim");
  Workspace ws;
  run_decoder(model, z, ws);
  return ws.x_hat;
}

double vae_loss(std::span<const double> x, std::span<const double> x_hat,
                std::span<const double> mu, std::span<const double> logvar, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("vae_loss: beta must be >= 0");
  const double recon = square_error(x, x_hat);
  if (beta == 0.0) return recon;
  return recon + beta * kl_standard_normal(mu, logvar);
}

Inference infer(const VaeModel& model, std::span<const double> sequence) {
  check_sequence(model, sequence);
  Workspace ws;
  run_encoder(model, sequence, ws);
  run_decoder(model, ws.mu, ws);
  return {vae_loss(sequence, ws.x_hat, ws.mu, ws.logvar, model.config.beta), ws.mu};
}

double vae_loss_with_noise(const VaeModel& model, std::span<const double> sequence,
                           std::span<const double> epsilon) {
  check_sequence(model, sequence);
  Workspace ws;
  return forward_with_noise(model, sequence, epsilon, ws);
}

double vae_loss_and_gradient(const VaeModel& model, std::span<const double> sequence,
                             std::span<const double> epsilon, VaeWeights& grads) {
  check_sequence(model, sequence);
  Workspace ws;
  const double loss = forward_with_noise(model, sequence, epsilon, ws);
  backward(model, sequence, epsilon, ws, grads);
  return loss;
}

TrainResult train(const VaeModel& model, std::span<const std::vector<double>> dataset,
                  const VaeConfig& config) {
  config.validate();
  if (!config.same_architecture(model.config)) {
    throw ConfigError("train: config architecture differs from the model's");
  }
  TrainResult result{model, {}};
  if (config.epochs == 0) return result;
  check_dataset(model, dataset);

  VaeModel& m = result.model;
  m.config.learning_rate = config.learning_rate;
  m.config.batch_size = config.batch_size;
  m.config.epochs = config.epochs;
  m.config.beta = config.beta;
  m.config.seed = config.seed;

  const std::size_t L = config.latent_dim;
  VaeWeights grads = VaeWeights::zeros(m.config);
  auto param_list = m.weights.tensors();
  auto grad_list = grads.tensors();
  std::vector<const Tensor2*> grad_view(grad_list.begin(), grad_list.end());
  AdamState adam;

  Workspace ws;
  std::vector<double> eps(L);
  Rng noise(mix_seed(config.seed, 0x5A3E));
  std::vector<std::size_t> order(dataset.size());
  result.history.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(mix_seed(config.seed, 0x100000 + epoch));
    shuffle(std::span<std::size_t>(order), shuffler);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (Tensor2* t : grad_list) t->fill(0.0);
      for (std::size_t b = start; b < end; ++b) {
        const auto& seq = dataset[order[b]];
        for (double& e : eps) e = noise.normal();
        epoch_loss += forward_with_noise(m, seq, eps, ws);
        backward(m, seq, eps, ws, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Tensor2* t : grad_list) {
        for (double& v : t->values()) v *= scale;
      }
      adam_step(param_list, grad_view, adam, config.learning_rate);
      if (!m.weights.all_finite()) {
        throw NumericError("train: non-finite parameter after update in epoch " +
                           std::to_string(epoch));
      }
    }
    const double mean = epoch_loss / static_cast<double>(dataset.size());
    if (!std::isfinite(mean)) throw NumericError("train: non-finite epoch loss");
    result.history.push_back(mean);
  }
  return result;
}

std::vector<std::vector<double>> sliding_sequences(std::span<const double> series,
                                                   std::size_t length) {
  std::vector<std::vector<double>> out;
  if (length == 0 || series.size() < length) return out;
  out.reserve(series.size() - length + 1);
  for (std::size_t i = 0; i + length <= series.size(); ++i) {
    out.emplace_back(series.begin() + i, series.begin() + i + length);
  }
  return out;
}

// --- persistence -----------------------------------------------------------

nlohmann::json tensor_to_json(const Tensor2& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()},
          {"data", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor2 tensor_from_json(const nlohmann::json& j) {
  return Tensor2(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                 j.at("data").get<std::vector<double>>());
}

namespace {

const char* const kTensorNames[] = {
    "encoder.w_input",    "encoder.w_recurrent", "encoder.bias",      "mu_head.weight",
    "mu_head.bias",       "logvar_head.weight",  "logvar_head.bias",  "seed_layer.weight",
    "seed_layer.bias",    "decoder.w_input",     "decoder.w_recurrent", "decoder.bias",
    "output_head.weight", "output_head.bias"};

}  // namespace

nlohmann::json vae_to_json(const VaeModel& model) {
  const auto& c = model.config;
  nlohmann::json j;
  j["format"] = kVaeFormat;
  j["config"] = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                 {"epochs", c.epochs},               {"beta", c.beta},
                 {"time_step", c.time_step},         {"hidden_dim", c.hidden_dim},
                 {"latent_dim", c.latent_dim},       {"leaky_relu_slope", c.leaky_relu_slope},
                 {"forget_bias", c.forget_bias},     {"seed", c.seed}};
  auto tensors = model.weights.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    j["tensors"][kTensorNames[i]] = tensor_to_json(*tensors[i]);
  }
  return j;
}

VaeModel vae_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kVaeFormat) {
    throw ParseError("unsupported model format tag");
  }
  const auto& jc = j.at("config");
  VaeConfig c;
  c.learning_rate = jc.at("learning_rate").get<double>();
  c.batch_size = jc.at("batch_size").get<std::size_t>();
  c.epochs = jc.at("epochs").get<std::size_t>();
  c.beta = jc.at("beta").get<double>();
  c.time_step = jc.at("time_step").get<std::size_t>();
  c.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
  c.latent_dim = jc.at("latent_dim").get<std::size_t>();
  c.leaky_relu_slope = jc.at("leaky_relu_slope").get<double>();
  c.forget_bias = jc.at("forget_bias").get<double>();
  c.seed = jc.at("seed").get<std::uint64_t>();
  c.validate();

  VaeModel m{c, VaeWeights::zeros(c)};
  auto tensors = m.weights.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor2 t = tensor_from_json(j.at("tensors").at(kTensorNames[i]));
    require_same_shape(t, *tensors[i], kTensorNames[i]);
    *tensors[i] = std::move(t);
  }
  return m;
}

void save_vae(const VaeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << vae_to_json(model).dump() << '\n';
}

VaeModel load_vae(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return vae_from_json(nlohmann::json::parse(in));
}

}  // namespace addd
