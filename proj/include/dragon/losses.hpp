#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dragon/toy_diffusion.hpp"

namespace dragon::losses {

enum class Variant { kDpo, kKtoPaired, kKtoUnpaired, kKtoContInstance, kKtoContDist, kDpok };

Variant variant_from_string(std::string_view name);
std::string variant_name(Variant v);

struct LossConfig {
  double beta = 5000.0;
  Variant variant = Variant::kKtoPaired;
  double r_threshold = 0.0;
  /// When set, the printed objective form is used directly (-sigmoid instead
  /// of -log sigmoid).
  bool raw_sigmoid = false;
  /// Optional sigma-dependent multiplier sigma_data^2 / (sigma^2 +
  /// sigma_data^2) on beta; constant beta by default.
  bool sigma_weighted_beta = false;
  /// Externally supplied A-bar (e.g. from an independent batch). When unset,
  /// the KTO-style losses fall back to the clamped batch mean. Either way,
  /// A-bar is a stop-gradient constant.
  std::optional<double> fixed_abar;
};

struct AdvantageInputs {
  std::span<const double> x0;
  std::span<const double> x_t;
  double sigma = 0.0;
  int condition = 0;
  const toy::DenoiserModel* theta = nullptr;
  const toy::DenoiserModel* ref = nullptr;
};

/// ||x0 - f_ref(x_t)||^2 - ||x0 - f_theta(x_t)||^2; positive when theta
/// denoises better than the reference.
double advantage(const AdvantageInputs& inputs);

struct LossDemo {
  std::vector<double> x0;
  int condition = 0;
};

struct PairedLossDemo {
  LossDemo pos;
  LossDemo neg;
};

struct LabeledDemo {
  LossDemo demo;
  bool positive = false;
};

struct ScoredDemo {
  LossDemo demo;
  double reward = 0.0;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d(loss)/d(theta params); ref gets no gradient
  double abar_used = 0.0;    // the baseline the KTO-style losses applied
  std::vector<std::string> warnings;
};

/// Paired preference loss: per pair, -log sigmoid(beta (A+ - A-)), with the
/// sigma draw shared inside each pair and noise drawn per member. Pair k
/// derives its stream from mix_seed(noise_seed, k): sigma first, then the
/// positive member's noise seed, then the negative member's.
LossResult dpo_loss(const toy::DenoiserModel& theta, const toy::DenoiserModel& ref,
                    const std::vector<PairedLossDemo>& pairs, std::uint64_t noise_seed,
                    const LossConfig& config);

/// Unpaired-capable preference loss with the batch-surrogate baseline
/// A-bar = max(0, mean A), treated as a constant for gradients. Sigma and
/// noise draws are i.i.d. per demo, derived from mix_seed(noise_seed, index)
/// with sigma drawn first. The paired variant rejects an empty side; the
/// unpaired variant records a warning instead.
LossResult kto_loss(const toy::DenoiserModel& theta, const toy::DenoiserModel& ref,
                    const std::vector<LabeledDemo>& demos, bool paired_variant,
                    std::uint64_t noise_seed, const LossConfig& config);

/// KTO with the sign replaced by sigmoid(reward - r_threshold).
LossResult kto_loss_continuous_instance(const toy::DenoiserModel& theta,
                                        const toy::DenoiserModel& ref,
                                        const std::vector<ScoredDemo>& demos, double r_threshold,
                                        std::uint64_t noise_seed, const LossConfig& config);

/// KTO with the sign replaced by sigmoid(r_dist(D_r) - midpoint of the two
/// set rewards). Demos carry their set membership via `positive`.
LossResult kto_loss_continuous_dist(const toy::DenoiserModel& theta,
                                    const toy::DenoiserModel& ref,
                                    const std::vector<LabeledDemo>& demos, double reward_pos,
                                    double reward_neg, std::uint64_t noise_seed,
                                    const LossConfig& config);

/// Reward-weighted regression: mean of beta (r - r_threshold)
/// ||x0 - f_theta(x_t)||^2. No reference model term.
LossResult dpok_loss(const toy::DenoiserModel& theta, const std::vector<ScoredDemo>& demos,
                     double r_threshold, std::uint64_t noise_seed, const LossConfig& config);

}  // namespace dragon::losses
