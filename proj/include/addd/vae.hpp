#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "addd/nn.hpp"
#include "addd/rng.hpp"

namespace addd {

/// Hyper-parameters of the LSTM-VAE. Defaults are the published settings:
/// lr 1e-4, batch 64, 100 epochs, beta 1, 10-step sequences, one recurrent
/// layer of width 2.
struct VaeConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double beta = 1.0;
  std::size_t time_step = 10;
  std::size_t hidden_dim = 2;
  std::size_t latent_dim = 2;
  double leaky_relu_slope = kDefaultLeakySlope;
  double forget_bias = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool same_architecture(const VaeConfig& other) const;

  friend bool operator==(const VaeConfig&, const VaeConfig&) = default;
};

/// Encoder: LSTM(1 -> H) over the sequence, dense mu / logvar heads on the
/// last hidden state. Decoder: z -> leaky-ReLU dense seed (H), fed as the
/// input of an LSTM(H -> H) at every step, sigmoid dense head per step.
struct VaeWeights {
  LstmParams encoder;
  DenseParams mu_head;
  DenseParams logvar_head;
  DenseParams seed_layer;
  LstmParams decoder;
  DenseParams output_head;

  static VaeWeights zeros(const VaeConfig& config);

  std::vector<Tensor2*> tensors();
  std::vector<const Tensor2*> tensors() const;
  bool all_finite() const;

  friend bool operator==(const VaeWeights&, const VaeWeights&) = default;
};

struct VaeModel {
  VaeConfig config;
  VaeWeights weights;

  friend bool operator==(const VaeModel&, const VaeModel&) = default;
};

struct Posterior {
  std::vector<double> mu;
  std::vector<double> logvar;
};

/// He-normal initialised model seeded from config.seed.
VaeModel make_vae(const VaeConfig& config);

Posterior encode(const VaeModel& model, std::span<const double> sequence);

/// z = mu + exp(logvar / 2) * eps, eps ~ N(0, I).
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   Rng& rng);

std::vector<double> decode(const VaeModel& model, std::span<const double> z);

/// square_error(x, x_hat) + beta * KL.
double vae_loss(std::span<const double> x, std::span<const double> x_hat,
                std::span<const double> mu, std::span<const double> logvar, double beta);

struct Inference {
  double loss;
  std::vector<double> encoding;  // posterior mean
};

/// Deterministic scoring: the decoder is driven by z = mu.
Inference infer(const VaeModel& model, std::span<const double> sequence);

/// Loss of one sequence for a fixed noise vector eps (z = mu + sigma * eps).
double vae_loss_with_noise(const VaeModel& model, std::span<const double> sequence,
                           std::span<const double> epsilon);

/// Same loss plus its exact gradient, accumulated into `grads`.
double vae_loss_and_gradient(const VaeModel& model, std::span<const double> sequence,
                             std::span<const double> epsilon, VaeWeights& grads);

struct TrainResult {
  VaeModel model;
  std::vector<double> history;  // mean training loss per epoch
};

/// Mini-batch Adam on the composite loss. Uses the optimisation fields of
/// `config` (learning rate, batch size, epochs, beta, seed); its architecture
/// fields must match the model's.
TrainResult train(const VaeModel& model, std::span<const std::vector<double>> dataset,
                  const VaeConfig& config);

/// Sliding windows of `length` consecutive values, stride 1.
std::vector<std::vector<double>> sliding_sequences(std::span<const double> series,
                                                   std::size_t length);

void save_vae(const VaeModel& model, const std::filesystem::path& path);
VaeModel load_vae(const std::filesystem::path& path);

}  // namespace addd
