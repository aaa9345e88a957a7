#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dragon/gauss_stats.hpp"
#include "dragon/matrix.hpp"
#include "dragon/rewards.hpp"
#include "dragon/rng.hpp"

namespace dragon::toy {

/// Variance-exploding noise schedule (alpha_t = 1) with the usual
/// sigma-data preconditioning constants.
struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double p_mean = -0.4;
  double p_std = 1.0;

  void validate() const;

  double c_skip(double sigma) const {
    const double sd2 = sigma_data * sigma_data;
    return sd2 / (sigma * sigma + sd2);
  }
  double c_out(double sigma) const {
    const double sd2 = sigma_data * sigma_data;
    return sigma * sigma_data / std::sqrt(sigma * sigma + sd2);
  }
  double c_in(double sigma) const {
    const double sd2 = sigma_data * sigma_data;
    return 1.0 / std::sqrt(sigma * sigma + sd2);
  }
  double c_noise(double sigma) const { return 0.25 * std::log(sigma); }
  /// Denoising-loss weight that undoes the c_out scaling.
  double loss_weight(double sigma) const {
    const double sd2 = sigma_data * sigma_data;
    return (sigma * sigma + sd2) / (sigma * sigma * sd2);
  }

  /// Log-normal training noise level exp(p_mean + p_std * z), clamped to
  /// [sigma_min, sigma_max].
  double sample_sigma(Rng& rng) const;

  /// Log-spaced ladder sigma_max -> sigma_min with `steps` levels, then a
  /// final 0 entry (steps + 1 values).
  std::vector<double> sigma_ladder(int steps) const;
};

struct MixtureComponent {
  std::vector<double> mean;
  Matrix cov;       // dim x dim, PSD
  double weight = 1.0;
};

/// Synthetic target: one Gaussian mixture per condition.
struct ToyTask {
  int dim = 2;
  int conditions = 2;
  int frame_len = 8;
  std::vector<std::vector<MixtureComponent>> mixtures;  // [condition][component]

  void validate() const;
  std::vector<double> sample_target(int condition, Rng& rng) const;

  /// Exact mean/covariance of the mixture marginalized over uniform
  /// conditions, optionally shifted. count is set to a nominal large value.
  stats::GaussStats marginal_stats(std::span<const double> shift = {}) const;

  /// 2-D two-condition task with one Gaussian per condition at
  /// (-separation, 0) and (+separation, 0).
  static ToyTask two_gaussians(double separation = 1.5, double spread = 0.3);
};

/// Null condition used for classifier-free-style dropout; it selects the
/// extra learned one-hot slot.
inline constexpr int kNullCondition = -1;

/// Two-hidden-layer tanh MLP with EDM-style preconditioning around it.
/// Inputs: c_in * x_t, c_noise(sigma), one-hot condition (+ null slot).
struct DenoiserModel {
  int data_dim = 2;
  int hidden = 64;
  int conditions = 2;
  NoiseSchedule schedule;
  std::vector<double> params;

  static DenoiserModel init(int data_dim, int hidden, int conditions,
                            const NoiseSchedule& schedule, std::uint64_t seed);

  int input_dim() const { return data_dim + 1 + conditions + 1; }
  std::size_t param_count() const;

  // Flat parameter layout: W1 [hidden x input], b1, W2 [hidden x hidden],
  // b2, W3 [data x hidden], b3.
  std::size_t w1_off() const { return 0; }
  std::size_t b1_off() const { return w1_off() + static_cast<std::size_t>(hidden) * input_dim(); }
  std::size_t w2_off() const { return b1_off() + hidden; }
  std::size_t b2_off() const { return w2_off() + static_cast<std::size_t>(hidden) * hidden; }
  std::size_t w3_off() const { return b2_off() + hidden; }
  std::size_t b3_off() const { return w3_off() + static_cast<std::size_t>(data_dim) * hidden; }
};

/// Forward activations kept for backprop.
struct DenoiseCache {
  std::vector<double> input;   // preconditioned input vector
  std::vector<double> h1, h2;  // post-tanh activations
  double c_out = 0.0;
};

/// x0 + sigma * eps with eps standard normal from `seed`.
std::vector<double> forward_noise(std::span<const double> x0, double sigma, std::uint64_t seed,
                                  const NoiseSchedule& schedule);

/// EDM-preconditioned denoised estimate of x0.
std::vector<double> denoise(const DenoiserModel& model, std::span<const double> x_t, double sigma,
                            int condition, DenoiseCache* cache = nullptr);

/// Accumulates d(loss)/d(params) into grad given d(loss)/d(output).
void denoise_backward(const DenoiserModel& model, const DenoiseCache& cache,
                      std::span<const double> g_out, std::span<double> grad);

struct SampleResult {
  std::vector<double> value;
  Matrix frames;  // trailing denoised estimates of the trajectory
};

/// Deterministic first-order probability-flow sampler over the sigma
/// ladder. frame_len trailing denoised estimates are returned as the item's
/// frame embeddings.
SampleResult sample(const DenoiserModel& model, int condition, std::uint64_t seed, int steps,
                    int frame_len);

/// Stable prompt hashing (FNV-1a over the UTF-8 bytes).
std::uint64_t seed_from_prompt(std::string_view prompt);
/// Condition ids hash their 8-byte little-endian encoding.
std::uint64_t seed_from_condition(std::int64_t condition);

struct PretrainConfig {
  int steps = 2000;
  int batch = 32;
  double learning_rate = 1e-2;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
  bool condition_dropout = true;
  double dropout_prob = 0.1;
  int holdout = 256;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  DenoiserModel model;
  std::vector<double> loss_curve;
  double holdout_before = 0.0;
  double holdout_after = 0.0;
};

/// Denoising-regression pretraining on the toy task. Throws
/// TrainingDiverged when the loss goes non-finite.
PretrainResult pretrain(DenoiserModel model, const ToyTask& task, const PretrainConfig& config);

/// Mean weighted denoising loss on a fixed holdout set derived from `seed`.
double holdout_loss(const DenoiserModel& model, const ToyTask& task, int holdout,
                    std::uint64_t seed);

/// Versioned JSON checkpoint.
void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model);
DenoiserModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dragon::toy
