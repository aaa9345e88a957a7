#include "dragon/toy_diffusion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "dragon/errors.hpp"
#include "dragon/io.hpp"
#include "dragon/parallel.hpp"

namespace dragon::toy {

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max))
    throw InvalidInput("NoiseSchedule: need 0 < sigma_min < sigma_max");
  if (!(sigma_data > 0.0)) throw InvalidInput("NoiseSchedule: sigma_data must be > 0");
}

double NoiseSchedule::sample_sigma(Rng& rng) const {
  const double sigma = std::exp(p_mean + p_std * rng.normal());
  return std::clamp(sigma, sigma_min, sigma_max);
}

std::vector<double> NoiseSchedule::sigma_ladder(int steps) const {
  if (steps < 1) throw InvalidInput("sigma_ladder: steps must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(steps) + 1);
  if (steps == 1) {
    out[0] = sigma_max;
  } else {
    const double log_max = std::log(sigma_max);
    const double log_min = std::log(sigma_min);
    for (int i = 0; i < steps; ++i)
      out[static_cast<std::size_t>(i)] =
          std::exp(log_max + (log_min - log_max) * static_cast<double>(i) /
                                 static_cast<double>(steps - 1));
  }
  out.back() = 0.0;
  return out;
}

void ToyTask::validate() const {
  if (dim < 1 || conditions < 1 || frame_len < 1) throw InvalidInput("ToyTask: bad shape");
  if (mixtures.size() != static_cast<std::size_t>(conditions))
    throw InvalidInput("ToyTask: one mixture per condition required");
  for (const auto& mixture : mixtures) {
    if (mixture.empty()) throw InvalidInput("ToyTask: empty mixture");
    double total = 0.0;
    for (const auto& comp : mixture) {
      if (comp.mean.size() != static_cast<std::size_t>(dim))
        throw InvalidInput("ToyTask: component mean dimension mismatch");
      if (comp.cov.rows() != static_cast<std::size_t>(dim) ||
          comp.cov.cols() != static_cast<std::size_t>(dim))
        throw InvalidInput("ToyTask: component covariance shape mismatch");
      if (!(comp.weight > 0.0)) throw InvalidInput("ToyTask: component weight must be > 0");
      total += comp.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("ToyTask: mixture weights must sum to 1");
  }
}

namespace {

Eigen::MatrixXd cholesky_psd(const Matrix& cov) {
  const std::size_t d = cov.rows();
  Eigen::MatrixXd c(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov.at(i, j);
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // Rank-deficient targets fall back to an eigenvalue square root.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * vals.asDiagonal();
}

}  // namespace

std::vector<double> ToyTask::sample_target(int condition, Rng& rng) const {
  if (condition < 0 || condition >= conditions)
    throw InvalidInput("ToyTask: condition out of range");
  const auto& mixture = mixtures[static_cast<std::size_t>(condition)];
  double u = rng.uniform01();
  std::size_t pick = 0;
  for (; pick + 1 < mixture.size(); ++pick) {
    if (u < mixture[pick].weight) break;
    u -= mixture[pick].weight;
  }
  const auto& comp = mixture[pick];
  Eigen::MatrixXd l = cholesky_psd(comp.cov);
  Eigen::VectorXd z(dim);
  for (int i = 0; i < dim; ++i) z(i) = rng.normal();
  Eigen::VectorXd x = l * z;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) out[static_cast<std::size_t>(i)] = comp.mean[static_cast<std::size_t>(i)] + x(i);
  return out;
}

stats::GaussStats ToyTask::marginal_stats(std::span<const double> shift) const {
  validate();
  if (!shift.empty() && shift.size() != static_cast<std::size_t>(dim))
    throw InvalidInput("marginal_stats: shift dimension mismatch");
  const std::size_t d = static_cast<std::size_t>(dim);
  stats::GaussStats out;
  out.count = 1u << 20;  // nominal; exact moments, not an empirical fit
  out.mean.assign(d, 0.0);
  out.cov = Matrix(d, d);

  const double cond_w = 1.0 / static_cast<double>(conditions);
  for (const auto& mixture : mixtures)
    for (const auto& comp : mixture)
      for (std::size_t i = 0; i < d; ++i) out.mean[i] += cond_w * comp.weight * comp.mean[i];

  // E[xx^T] - mu mu^T over the full mixture.
  for (const auto& mixture : mixtures)
    for (const auto& comp : mixture) {
      const double w = cond_w * comp.weight;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          out.cov.at(i, j) += w * (comp.cov.at(i, j) + comp.mean[i] * comp.mean[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out.cov.at(i, j) -= out.mean[i] * out.mean[j];

  for (std::size_t i = 0; i < d; ++i)
    if (!shift.empty()) out.mean[i] += shift[i];
  return out;
}

ToyTask ToyTask::two_gaussians(double separation, double spread) {
  ToyTask task;
  task.dim = 2;
  task.conditions = 2;
  task.frame_len = 8;
  for (int c = 0; c < 2; ++c) {
    MixtureComponent comp;
    comp.mean = {c == 0 ? -separation : separation, 0.0};
    comp.cov = Matrix(2, 2);
    comp.cov.at(0, 0) = spread * spread;
    comp.cov.at(1, 1) = spread * spread;
    comp.weight = 1.0;
    task.mixtures.push_back({comp});
  }
  task.validate();
  return task;
}

// ---------------------------------------------------------------------------
// Denoiser network

DenoiserModel DenoiserModel::init(int data_dim, int hidden, int conditions,
                                  const NoiseSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  if (data_dim < 1 || hidden < 1 || conditions < 1) throw InvalidInput("DenoiserModel: bad shape");
  DenoiserModel m;
  m.data_dim = data_dim;
  m.hidden = hidden;
  m.conditions = conditions;
  m.schedule = schedule;
  m.params.assign(m.param_count(), 0.0);
  Rng rng(mix_seed(seed, fnv1a64("denoiser-init")));
  auto fill = [&](std::size_t off, std::size_t count, int fan_in) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) m.params[off + i] = scale * rng.normal();
  };
  fill(m.w1_off(), static_cast<std::size_t>(hidden) * m.input_dim(), m.input_dim());
  fill(m.w2_off(), static_cast<std::size_t>(hidden) * hidden, hidden);
  fill(m.w3_off(), static_cast<std::size_t>(data_dim) * hidden, hidden);
  return m;
}

std::size_t DenoiserModel::param_count() const {
  return b3_off() + static_cast<std::size_t>(data_dim);
}

std::vector<double> forward_noise(std::span<const double> x0, double sigma, std::uint64_t seed,
                                  const NoiseSchedule& schedule) {
  if (!(sigma >= schedule.sigma_min && sigma <= schedule.sigma_max))
    throw InvalidInput("forward_noise: sigma outside schedule bounds");
  Rng rng(seed);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = x0[i] + sigma * rng.normal();
  return out;
}

std::vector<double> denoise(const DenoiserModel& model, std::span<const double> x_t, double sigma,
                            int condition, DenoiseCache* cache) {
  if (x_t.size() != static_cast<std::size_t>(model.data_dim))
    throw InvalidInput("denoise: input dimension mismatch");
  if (condition != kNullCondition && (condition < 0 || condition >= model.conditions))
    throw InvalidInput("denoise: condition out of range");

  const int in_dim = model.input_dim();
  const int h = model.hidden;
  const int d = model.data_dim;
  const double cin = model.schedule.c_in(sigma);
  const double cskip = model.schedule.c_skip(sigma);
  const double cout = model.schedule.c_out(sigma);

  std::vector<double> u(static_cast<std::size_t>(in_dim), 0.0);
  for (int i = 0; i < d; ++i) u[static_cast<std::size_t>(i)] = cin * x_t[static_cast<std::size_t>(i)];
  u[static_cast<std::size_t>(d)] = model.schedule.c_noise(sigma);
  const int hot = condition == kNullCondition ? model.conditions : condition;
  u[static_cast<std::size_t>(d + 1 + hot)] = 1.0;

  const double* p = model.params.data();
  std::vector<double> h1(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    const double* w = p + model.w1_off() + static_cast<std::size_t>(i) * in_dim;
    double acc = p[model.b1_off() + static_cast<std::size_t>(i)];
    for (int j = 0; j < in_dim; ++j) acc += w[j] * u[static_cast<std::size_t>(j)];
    h1[static_cast<std::size_t>(i)] = std::tanh(acc);
  }
  std::vector<double> h2(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    const double* w = p + model.w2_off() + static_cast<std::size_t>(i) * h;
    double acc = p[model.b2_off() + static_cast<std::size_t>(i)];
    for (int j = 0; j < h; ++j) acc += w[j] * h1[static_cast<std::size_t>(j)];
    h2[static_cast<std::size_t>(i)] = std::tanh(acc);
  }
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const double* w = p + model.w3_off() + static_cast<std::size_t>(i) * h;
    double acc = p[model.b3_off() + static_cast<std::size_t>(i)];
    for (int j = 0; j < h; ++j) acc += w[j] * h2[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = cskip * x_t[static_cast<std::size_t>(i)] + cout * acc;
  }
  if (cache) {
    cache->input = std::move(u);
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
    cache->c_out = cout;
  }
  return out;
}

void denoise_backward(const DenoiserModel& model, const DenoiseCache& cache,
                      std::span<const double> g_out, std::span<double> grad) {
  const int in_dim = model.input_dim();
  const int h = model.hidden;
  const int d = model.data_dim;
  if (g_out.size() != static_cast<std::size_t>(d) || grad.size() != model.param_count())
    throw InvalidInput("denoise_backward: gradient buffer size mismatch");

  const double* p = model.params.data();
  std::vector<double> g_raw(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) g_raw[static_cast<std::size_t>(i)] = cache.c_out * g_out[static_cast<std::size_t>(i)];

  // Layer 3.
  std::vector<double> g_h2(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < d; ++i) {
    const double gi = g_raw[static_cast<std::size_t>(i)];
    double* gw = grad.data() + model.w3_off() + static_cast<std::size_t>(i) * h;
    const double* w = p + model.w3_off() + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) {
      gw[j] += gi * cache.h2[static_cast<std::size_t>(j)];
      g_h2[static_cast<std::size_t>(j)] += gi * w[j];
    }
    grad[model.b3_off() + static_cast<std::size_t>(i)] += gi;
  }
  // Layer 2.
  std::vector<double> g_h1(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < h; ++i) {
    const double t = cache.h2[static_cast<std::size_t>(i)];
    const double gi = g_h2[static_cast<std::size_t>(i)] * (1.0 - t * t);
    double* gw = grad.data() + model.w2_off() + static_cast<std::size_t>(i) * h;
    const double* w = p + model.w2_off() + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) {
      gw[j] += gi * cache.h1[static_cast<std::size_t>(j)];
      g_h1[static_cast<std::size_t>(j)] += gi * w[j];
    }
    grad[model.b2_off() + static_cast<std::size_t>(i)] += gi;
  }
  // Layer 1.
  for (int i = 0; i < h; ++i) {
    const double t = cache.h1[static_cast<std::size_t>(i)];
    const double gi = g_h1[static_cast<std::size_t>(i)] * (1.0 - t * t);
    double* gw = grad.data() + model.w1_off() + static_cast<std::size_t>(i) * in_dim;
    for (int j = 0; j < in_dim; ++j) gw[j] += gi * cache.input[static_cast<std::size_t>(j)];
    grad[model.b1_off() + static_cast<std::size_t>(i)] += gi;
  }
}

SampleResult sample(const DenoiserModel& model, int condition, std::uint64_t seed, int steps,
                    int frame_len) {
  if (steps < 1) throw InvalidInput("sample: steps must be >= 1");
  if (frame_len < 1) throw InvalidInput("sample: frame_len must be >= 1");
  const std::vector<double> ladder = model.schedule.sigma_ladder(steps);
  const std::size_t d = static_cast<std::size_t>(model.data_dim);

  Rng rng(seed);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = ladder[0] * rng.normal();

  std::vector<std::vector<double>> denoised;
  denoised.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const double sigma = ladder[static_cast<std::size_t>(s)];
    const double sigma_next = ladder[static_cast<std::size_t>(s) + 1];
    std::vector<double> d0 = denoise(model, x, sigma, condition);
    if (sigma_next == 0.0) {
      x = d0;  // the Euler step to sigma = 0 lands exactly on the estimate
    } else {
      for (std::size_t i = 0; i < d; ++i) {
        const double slope = (x[i] - d0[i]) / sigma;
        x[i] += (sigma_next - sigma) * slope;
      }
    }
    denoised.push_back(std::move(d0));
  }

  SampleResult out;
  out.value = x;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(frame_len), denoised.size());
  out.frames = Matrix(take, d);
  for (std::size_t i = 0; i < take; ++i)
    out.frames.set_row(i, denoised[denoised.size() - take + i]);
  return out;
}

std::uint64_t seed_from_prompt(std::string_view prompt) { return fnv1a64(prompt); }

std::uint64_t seed_from_condition(std::int64_t condition) {
  char bytes[8];
  const auto u = static_cast<std::uint64_t>(condition);
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  return fnv1a64(std::string_view(bytes, 8));
}

namespace {

struct DrawnExample {
  std::vector<double> x0;
  int condition = 0;
  double sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

DrawnExample draw_example(const ToyTask& task, const NoiseSchedule& schedule, std::uint64_t seed,
                          bool dropout, double dropout_prob) {
  Rng rng(seed);
  DrawnExample ex;
  const int cond = static_cast<int>(rng.below(static_cast<std::uint64_t>(task.conditions)));
  ex.x0 = task.sample_target(cond, rng);
  ex.condition = (dropout && rng.uniform01() < dropout_prob) ? kNullCondition : cond;
  ex.sigma = schedule.sample_sigma(rng);
  ex.noise_seed = rng.next_u64();
  return ex;
}

double example_loss(const DenoiserModel& model, const DrawnExample& ex, DenoiseCache* cache,
                    std::vector<double>* residual) {
  const std::vector<double> x_t = forward_noise(ex.x0, ex.sigma, ex.noise_seed, model.schedule);
  const std::vector<double> d0 = denoise(model, x_t, ex.sigma, ex.condition, cache);
  double err2 = 0.0;
  for (std::size_t i = 0; i < d0.size(); ++i) {
    const double e = d0[i] - ex.x0[i];
    err2 += e * e;
    if (residual) (*residual)[i] = e;
  }
  return model.schedule.loss_weight(ex.sigma) * err2;
}

}  // namespace

double holdout_loss(const DenoiserModel& model, const ToyTask& task, int holdout,
                    std::uint64_t seed) {
  auto partials = par::map_chunks<double>(static_cast<std::size_t>(holdout),
                                          [&](std::size_t b, std::size_t e) {
    double acc = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      DrawnExample ex = draw_example(task, model.schedule, mix_seed(seed, i), false, 0.0);
      acc += example_loss(model, ex, nullptr, nullptr);
    }
    return acc;
  });
  double total = 0.0;
  for (double p : partials) total += p;
  return total / static_cast<double>(holdout);
}

PretrainResult pretrain(DenoiserModel model, const ToyTask& task, const PretrainConfig& config) {
  task.validate();
  if (task.dim != model.data_dim || task.conditions != model.conditions)
    throw InvalidInput("pretrain: task and model shapes disagree");

  const std::uint64_t holdout_seed = derive_seed(config.seed, "pretrain-holdout");
  PretrainResult out;
  out.holdout_before = holdout_loss(model, task, config.holdout, holdout_seed);

  const std::size_t np = model.param_count();
  std::vector<double> rms(np, 0.0);
  const std::size_t batch = static_cast<std::size_t>(config.batch);

  for (int step = 0; step < config.steps; ++step) {
    const std::uint64_t step_seed = mix_seed(derive_seed(config.seed, "pretrain-step"),
                                             static_cast<std::uint64_t>(step));
    // Per-item losses/gradients into chunk partials, folded in order.
    struct Partial {
      double loss = 0.0;
      std::vector<double> grad;
    };
    auto partials = par::map_chunks<Partial>(batch, [&](std::size_t b, std::size_t e) {
      Partial part;
      part.grad.assign(np, 0.0);
      DenoiseCache cache;
      std::vector<double> residual(static_cast<std::size_t>(model.data_dim));
      std::vector<double> g_out(static_cast<std::size_t>(model.data_dim));
      for (std::size_t i = b; i < e; ++i) {
        DrawnExample ex = draw_example(task, model.schedule, mix_seed(step_seed, i),
                                       config.condition_dropout, config.dropout_prob);
        part.loss += example_loss(model, ex, &cache, &residual);
        const double w = model.schedule.loss_weight(ex.sigma);
        for (std::size_t k = 0; k < g_out.size(); ++k) g_out[k] = 2.0 * w * residual[k];
        denoise_backward(model, cache, g_out, part.grad);
      }
      return part;
    });
    double loss = 0.0;
    std::vector<double> grad(np, 0.0);
    for (const auto& part : partials) {
      loss += part.loss;
      for (std::size_t k = 0; k < np; ++k) grad[k] += part.grad[k];
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    loss *= inv_batch;
    if (!std::isfinite(loss)) throw TrainingDiverged("pretrain: non-finite loss at step " +
                                                     std::to_string(step));
    out.loss_curve.push_back(loss);

    for (std::size_t k = 0; k < np; ++k) {
      const double g = grad[k] * inv_batch;
      rms[k] = config.rms_decay * rms[k] + (1.0 - config.rms_decay) * g * g;
      model.params[k] -= config.learning_rate * g / (std::sqrt(rms[k]) + config.rms_eps);
    }
  }

  out.holdout_after = holdout_loss(model, task, config.holdout, holdout_seed);
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr int kCheckpointVersion = 1;
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["data_dim"] = model.data_dim;
  j["hidden"] = model.hidden;
  j["conditions"] = model.conditions;
  j["schedule"] = {{"sigma_min", model.schedule.sigma_min},
                   {"sigma_max", model.schedule.sigma_max},
                   {"sigma_data", model.schedule.sigma_data},
                   {"p_mean", model.schedule.p_mean},
                   {"p_std", model.schedule.p_std}};
  j["params"] = model.params;
  io::write_file(path, j.dump() + "\n");
}

DenoiserModel load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": invalid checkpoint JSON: " + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != kCheckpointVersion)
    throw InvalidInput(path.string() + ": unsupported checkpoint version");
  DenoiserModel m;
  m.data_dim = j["data_dim"].get<int>();
  m.hidden = j["hidden"].get<int>();
  m.conditions = j["conditions"].get<int>();
  const auto& s = j["schedule"];
  m.schedule.sigma_min = s["sigma_min"].get<double>();
  m.schedule.sigma_max = s["sigma_max"].get<double>();
  m.schedule.sigma_data = s["sigma_data"].get<double>();
  m.schedule.p_mean = s["p_mean"].get<double>();
  m.schedule.p_std = s["p_std"].get<double>();
  m.schedule.validate();
  m.params = j["params"].get<std::vector<double>>();
  if (m.params.size() != m.param_count())
    throw InvalidInput(path.string() + ": parameter count mismatch");
  return m;
}

}  // namespace dragon::toy
