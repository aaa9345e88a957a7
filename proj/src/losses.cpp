#include "dragon/losses.hpp"

#include <cmath>

#include "dragon/errors.hpp"
#include "dragon/parallel.hpp"

namespace dragon::losses {

Variant variant_from_string(std::string_view name) {
  if (name == "dpo") return Variant::kDpo;
  if (name == "kto_paired") return Variant::kKtoPaired;
  if (name == "kto_unpaired") return Variant::kKtoUnpaired;
  if (name == "kto_cont_instance") return Variant::kKtoContInstance;
  if (name == "kto_cont_dist") return Variant::kKtoContDist;
  if (name == "dpok") return Variant::kDpok;
  throw InvalidInput("unknown loss variant '" + std::string(name) + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDpo: return "dpo";
    case Variant::kKtoPaired: return "kto_paired";
    case Variant::kKtoUnpaired: return "kto_unpaired";
    case Variant::kKtoContInstance: return "kto_cont_instance";
    case Variant::kKtoContDist: return "kto_cont_dist";
    case Variant::kDpok: return "dpok";
  }
  return "?";
}

namespace {

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// -log sigmoid(z), stable for both tails.
double softplus_neg(double z) { return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

/// Per-item outer loss and its derivative in the sigmoid argument z.
struct OuterLoss {
  double value;
  double dz;
};

OuterLoss outer_loss(double z, bool raw_sigmoid) {
  if (raw_sigmoid) {
    const double s = sigmoid(z);
    return {-s, -s * (1.0 - s)};
  }
  return {softplus_neg(z), sigmoid(z) - 1.0};
}

double beta_weight(const LossConfig& config, const toy::NoiseSchedule& schedule, double sigma) {
  double b = config.beta;
  if (config.sigma_weighted_beta) {
    const double sd2 = schedule.sigma_data * schedule.sigma_data;
    b *= sd2 / (sigma * sigma + sd2);
  }
  return b;
}

/// One noised demo evaluated under theta (with cache for backprop) and ref.
struct NoisedEval {
  double advantage = 0.0;
  double err_theta = 0.0;          // ||x0 - f_theta(x_t)||^2
  std::vector<double> e_theta;     // x0 - f_theta(x_t)
  toy::DenoiseCache cache;
  double beta = 0.0;
};

NoisedEval eval_demo(const toy::DenoiserModel& theta, const toy::DenoiserModel* ref,
                     const LossDemo& demo, double sigma, std::uint64_t noise_seed,
                     const LossConfig& config) {
  NoisedEval out;
  const std::vector<double> x_t = toy::forward_noise(demo.x0, sigma, noise_seed, theta.schedule);
  const std::vector<double> f_theta = toy::denoise(theta, x_t, sigma, demo.condition, &out.cache);
  out.e_theta.resize(f_theta.size());
  for (std::size_t i = 0; i < f_theta.size(); ++i) {
    out.e_theta[i] = demo.x0[i] - f_theta[i];
    out.err_theta += out.e_theta[i] * out.e_theta[i];
  }
  if (ref) {
    const std::vector<double> f_ref = toy::denoise(*ref, x_t, sigma, demo.condition);
    double err_ref = 0.0;
    for (std::size_t i = 0; i < f_ref.size(); ++i) {
      const double e = demo.x0[i] - f_ref[i];
      err_ref += e * e;
    }
    out.advantage = err_ref - out.err_theta;
  }
  out.beta = beta_weight(config, theta.schedule, sigma);
  return out;
}

void check_models(const toy::DenoiserModel& theta, const toy::DenoiserModel& ref) {
  if (theta.data_dim != ref.data_dim || theta.hidden != ref.hidden ||
      theta.conditions != ref.conditions)
    throw InvalidInput("loss: theta and reference model shapes disagree");
}

/// Shared KTO-style core: weights[i] multiplies beta inside the sigmoid.
LossResult kto_core(const toy::DenoiserModel& theta, const toy::DenoiserModel& ref,
                    const std::vector<LossDemo>& demos, const std::vector<double>& weights,
                    std::uint64_t noise_seed, const LossConfig& config) {
  check_models(theta, ref);
  const std::size_t m = demos.size();
  if (m == 0) throw InvalidInput("loss: empty demo batch");
  const std::size_t np = theta.param_count();

  // Phase 1: advantages (parallel per item, seeds derived per index).
  std::vector<NoisedEval> evals(m);
  par::for_each_index(m, [&](std::size_t i) {
    Rng rng(mix_seed(noise_seed, i));
    const double sigma = theta.schedule.sample_sigma(rng);
    evals[i] = eval_demo(theta, &ref, demos[i], sigma, rng.next_u64(), config);
  });

  // Baseline: externally pinned, or the clamped batch surrogate. Either
  // way a stop-gradient constant.
  double abar = 0.0;
  if (config.fixed_abar) {
    abar = *config.fixed_abar;
  } else {
    for (const auto& ev : evals) abar += ev.advantage;
    abar = std::max(0.0, abar / static_cast<double>(m));
  }

  // Phase 2: per-item outer losses and backward passes.
  struct Partial {
    double loss = 0.0;
    std::vector<double> grad;
  };
  const double inv_m = 1.0 / static_cast<double>(m);
  auto partials = par::map_chunks<Partial>(m, [&](std::size_t b, std::size_t e) {
    Partial part;
    part.grad.assign(np, 0.0);
    std::vector<double> g_out(static_cast<std::size_t>(theta.data_dim));
    for (std::size_t i = b; i < e; ++i) {
      const NoisedEval& ev = evals[i];
      const double z = ev.beta * weights[i] * (ev.advantage - abar);
      const OuterLoss ol = outer_loss(z, config.raw_sigmoid);
      part.loss += ol.value;
      // dA/dtheta = 2 e_theta^T df/dtheta.
      const double coef = ol.dz * ev.beta * weights[i] * 2.0 * inv_m;
      for (std::size_t k = 0; k < g_out.size(); ++k) g_out[k] = coef * ev.e_theta[k];
      toy::denoise_backward(theta, ev.cache, g_out, part.grad);
    }
    return part;
  });

  LossResult out;
  out.abar_used = abar;
  out.grad.assign(np, 0.0);
  for (const auto& part : partials) {
    out.loss += part.loss;
    for (std::size_t k = 0; k < np; ++k) out.grad[k] += part.grad[k];
  }
  out.loss *= inv_m;
  if (!std::isfinite(out.loss)) throw TrainingDiverged("loss: non-finite value");
  return out;
}

}  // namespace

double advantage(const AdvantageInputs& inputs) {
  if (!inputs.theta || !inputs.ref) throw InvalidInput("advantage: missing model handles");
  const std::vector<double> f_theta = toy::denoise(*inputs.theta, inputs.x_t, inputs.sigma,
                                                   inputs.condition);
  const std::vector<double> f_ref = toy::denoise(*inputs.ref, inputs.x_t, inputs.sigma,
                                                 inputs.condition);
  double err_theta = 0.0, err_ref = 0.0;
  for (std::size_t i = 0; i < inputs.x0.size(); ++i) {
    const double et = inputs.x0[i] - f_theta[i];
    const double er = inputs.x0[i] - f_ref[i];
    err_theta += et * et;
    err_ref += er * er;
  }
  return err_ref - err_theta;
}

LossResult dpo_loss(const toy::DenoiserModel& theta, const toy::DenoiserModel& ref,
                    const std::vector<PairedLossDemo>& pairs, std::uint64_t noise_seed,
                    const LossConfig& config) {
  check_models(theta, ref);
  const std::size_t m = pairs.size();
  if (m == 0) throw InvalidInput("dpo_loss: empty pair batch");
  const std::size_t np = theta.param_count();
  const double inv_m = 1.0 / static_cast<double>(m);

  struct Partial {
    double loss = 0.0;
    std::vector<double> grad;
  };
  auto partials = par::map_chunks<Partial>(m, [&](std::size_t b, std::size_t e) {
    Partial part;
    part.grad.assign(np, 0.0);
    std::vector<double> g_out(static_cast<std::size_t>(theta.data_dim));
    for (std::size_t k = b; k < e; ++k) {
      Rng rng(mix_seed(noise_seed, k));
      const double sigma = theta.schedule.sample_sigma(rng);  // shared inside the pair
      const std::uint64_t seed_pos = rng.next_u64();
      const std::uint64_t seed_neg = rng.next_u64();
      const NoisedEval pos = eval_demo(theta, &ref, pairs[k].pos, sigma, seed_pos, config);
      const NoisedEval neg = eval_demo(theta, &ref, pairs[k].neg, sigma, seed_neg, config);

      const double z = pos.beta * (pos.advantage - neg.advantage);
      const OuterLoss ol = outer_loss(z, config.raw_sigmoid);
      part.loss += ol.value;

      const double coef = ol.dz * pos.beta * 2.0 * inv_m;
      for (std::size_t i = 0; i < g_out.size(); ++i) g_out[i] = coef * pos.e_theta[i];
      toy::denoise_backward(theta, pos.cache, g_out, part.grad);
      for (std::size_t i = 0; i < g_out.size(); ++i) g_out[i] = -coef * neg.e_theta[i];
      toy::denoise_backward(theta, neg.cache, g_out, part.grad);
    }
    return part;
  });

  LossResult out;
  out.grad.assign(np, 0.0);
  for (const auto& part : partials) {
    out.loss += part.loss;
    for (std::size_t k = 0; k < np; ++k) out.grad[k] += part.grad[k];
  }
  out.loss *= inv_m;
  if (!std::isfinite(out.loss)) throw TrainingDiverged("dpo_loss: non-finite value");
  return out;
}

LossResult kto_loss(const toy::DenoiserModel& theta, const toy::DenoiserModel& ref,
                    const std::vector<LabeledDemo>& demos, bool paired_variant,
                    std::uint64_t noise_seed, const LossConfig& config) {
  std::size_t n_pos = 0, n_neg = 0;
  std::vector<LossDemo> plain;
  std::vector<double> weights;
  plain.reserve(demos.size());
  for (const auto& d : demos) {
    (d.positive ? n_pos : n_neg) += 1;
    plain.push_back(d.demo);
    weights.push_back(d.positive ? 1.0 : -1.0);
  }
  LossResult out;
  if (n_pos == 0 || n_neg == 0) {
    if (paired_variant)
      throw InvalidInput("kto_loss: paired variant needs both positive and negative demos");
    out.warnings.push_back(std::string("kto_loss: ") + (n_pos == 0 ? "no positive" : "no negative") +
                           " demos in batch");
  }
  LossResult core = kto_core(theta, ref, plain, weights, noise_seed, config);
  core.warnings.insert(core.warnings.begin(), out.warnings.begin(), out.warnings.end());
  return core;
}

LossResult kto_loss_continuous_instance(const toy::DenoiserModel& theta,
                                        const toy::DenoiserModel& ref,
                                        const std::vector<ScoredDemo>& demos, double r_threshold,
                                        std::uint64_t noise_seed, const LossConfig& config) {
  std::vector<LossDemo> plain;
  std::vector<double> weights;
  plain.reserve(demos.size());
  for (const auto& d : demos) {
    plain.push_back(d.demo);
    weights.push_back(sigmoid(d.reward - r_threshold));
  }
  return kto_core(theta, ref, plain, weights, noise_seed, config);
}

LossResult kto_loss_continuous_dist(const toy::DenoiserModel& theta,
                                    const toy::DenoiserModel& ref,
                                    const std::vector<LabeledDemo>& demos, double reward_pos,
                                    double reward_neg, std::uint64_t noise_seed,
                                    const LossConfig& config) {
  const double midpoint = 0.5 * (reward_pos + reward_neg);
  const double w_pos = sigmoid(reward_pos - midpoint);
  const double w_neg = sigmoid(reward_neg - midpoint);
  std::vector<LossDemo> plain;
  std::vector<double> weights;
  plain.reserve(demos.size());
  for (const auto& d : demos) {
    plain.push_back(d.demo);
    weights.push_back(d.positive ? w_pos : w_neg);
  }
  return kto_core(theta, ref, plain, weights, noise_seed, config);
}

LossResult dpok_loss(const toy::DenoiserModel& theta, const std::vector<ScoredDemo>& demos,
                     double r_threshold, std::uint64_t noise_seed, const LossConfig& config) {
  const std::size_t m = demos.size();
  if (m == 0) throw InvalidInput("dpok_loss: empty demo batch");
  const std::size_t np = theta.param_count();
  const double inv_m = 1.0 / static_cast<double>(m);

  struct Partial {
    double loss = 0.0;
    std::vector<double> grad;
  };
  auto partials = par::map_chunks<Partial>(m, [&](std::size_t b, std::size_t e) {
    Partial part;
    part.grad.assign(np, 0.0);
    std::vector<double> g_out(static_cast<std::size_t>(theta.data_dim));
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(mix_seed(noise_seed, i));
      const double sigma = theta.schedule.sample_sigma(rng);
      NoisedEval ev = eval_demo(theta, nullptr, demos[i].demo, sigma, rng.next_u64(), config);
      const double c = ev.beta * (demos[i].reward - r_threshold);
      part.loss += c * ev.err_theta;
      // d||x0 - f||^2 / df = -2 (x0 - f).
      const double coef = -2.0 * c * inv_m;
      for (std::size_t k = 0; k < g_out.size(); ++k) g_out[k] = coef * ev.e_theta[k];
      toy::denoise_backward(theta, ev.cache, g_out, part.grad);
    }
    return part;
  });

  LossResult out;
  out.grad.assign(np, 0.0);
  for (const auto& part : partials) {
    out.loss += part.loss;
    for (std::size_t k = 0; k < np; ++k) out.grad[k] += part.grad[k];
  }
  out.loss *= inv_m;
  if (!std::isfinite(out.loss)) throw TrainingDiverged("dpok_loss: non-finite value");
  return out;
}

}  // namespace dragon::losses
