#include "dragon/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "dragon/diversity.hpp"
#include "dragon/errors.hpp"
#include "dragon/eval_stats.hpp"
#include "dragon/parallel.hpp"

namespace dragon::train {

void TrainSettings::validate() const {
  if (batch_size < 2) throw InvalidInput("train: batch_size must be >= 2");
  if (paired && batch_size % 2 != 0) throw InvalidInput("train: paired batch_size must be even");
  if (demo_steps < 1) throw InvalidInput("train: demo_steps must be >= 1");
  if (!(ref_mix_prob >= 0.0 && ref_mix_prob <= 1.0))
    throw InvalidInput("train: ref_mix_prob must be in [0,1]");
  if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0))
    throw InvalidInput("train: dropout_prob must be in [0,1]");
  if (iterations < 0) throw InvalidInput("train: iterations must be >= 0");
  if (!(grad_clip > 0.0)) throw InvalidInput("train: grad_clip must be > 0");
  if (optimizer != "rmsprop" && optimizer != "adam" && optimizer != "sgd")
    throw InvalidInput("train: optimizer must be rmsprop, adam or sgd");
}

// ---------------------------------------------------------------------------
// Config loading

namespace {

std::set<std::string> reward_key_set() {
  return {"kind", "direction", "name", "modality", "payload", "labels", "stats", "bandwidth",
          "synthetic_count", "synthetic_target", "synthetic_spread", "target_shift", "p"};
}

toy::ToyTask load_task(const config::Config& cfg) {
  const std::string preset = cfg.get_string("task", "preset", "two-gaussians");
  toy::ToyTask task;
  if (preset == "two-gaussians") {
    task = toy::ToyTask::two_gaussians(cfg.get_double("task", "separation", 1.5),
                                       cfg.get_double("task", "spread", 0.3));
  } else if (preset == "ring") {
    const int conditions = static_cast<int>(cfg.get_int("task", "conditions", 4));
    const double radius = cfg.get_double("task", "radius", 2.0);
    const double spread = cfg.get_double("task", "spread", 0.3);
    if (conditions < 1) throw InvalidInput("task: conditions must be >= 1");
    task.dim = 2;
    task.conditions = conditions;
    for (int c = 0; c < conditions; ++c) {
      const double angle = 2.0 * 3.14159265358979323846 * c / conditions;
      toy::MixtureComponent comp;
      comp.mean = {radius * std::cos(angle), radius * std::sin(angle)};
      comp.cov = Matrix(2, 2);
      comp.cov.at(0, 0) = spread * spread;
      comp.cov.at(1, 1) = spread * spread;
      task.mixtures.push_back({comp});
    }
  } else {
    throw InvalidInput("task: unknown preset '" + preset + "'");
  }
  task.frame_len = static_cast<int>(cfg.get_int("task", "frame_len", 8));
  task.validate();
  return task;
}

rewards::ExemplarSet load_exemplar(const config::Config& cfg, const std::string& section,
                                   const toy::ToyTask& task) {
  rewards::ExemplarSet ex;
  ex.modality_tag = cfg.get_string(section, "modality", "task-marginal");
  if (cfg.has(section, "stats")) {
    ex.stats = io::load_stats(cfg.get_string(section, "stats", ""));
  } else if (cfg.has(section, "payload")) {
    ex.stats = stats::accumulate_stats(io::load_embeddings(cfg.get_string(section, "payload", "")));
  } else {
    std::vector<double> shift = cfg.get_doubles(section, "target_shift");
    ex.stats = task.marginal_stats(shift);
  }
  ex.validate();
  return ex;
}

rewards::RewardSpec build_reward(const config::Config& cfg, const std::string& section,
                                 const toy::ToyTask& task, std::uint64_t seed) {
  rewards::RewardSpec spec;
  spec.name = cfg.get_string(section, "name", section);
  const std::string kind = cfg.get_string(section, "kind", "");
  if (kind.empty()) throw InvalidInput("config: [" + section + "] kind is required");

  if (kind == "preference") {
    spec.kind = rewards::RewardKind::kInstance;
    rewards::PreferenceModel model;
    if (cfg.has(section, "payload")) {
      model.train_embeddings = io::load_embeddings(cfg.get_string(section, "payload", ""));
      model.train_labels = io::load_scalars(cfg.get_string(section, "labels", ""));
    } else {
      // Synthetic preference data: task samples jittered outward, labeled by
      // closeness to a target point, labels globally normalized.
      const auto count = static_cast<std::size_t>(cfg.get_int(section, "synthetic_count", 256));
      std::vector<double> target = cfg.get_doubles(section, "synthetic_target");
      if (target.empty()) target.assign(static_cast<std::size_t>(task.dim), 0.0);
      if (target.size() != static_cast<std::size_t>(task.dim))
        throw InvalidInput("config: [" + section + "] synthetic_target dimension mismatch");
      const double spread = cfg.get_double(section, "synthetic_spread", 1.0);
      Rng rng(derive_seed(seed, "synthetic-preference"));
      model.train_embeddings = Matrix(count, static_cast<std::size_t>(task.dim));
      std::vector<double> labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        const int cond = static_cast<int>(i % static_cast<std::size_t>(task.conditions));
        std::vector<double> x = task.sample_target(cond, rng);
        for (auto& v : x) v += spread * rng.normal();
        model.train_embeddings.set_row(i, x);
        labels[i] = -squared_distance(x, target);
      }
      model.train_labels = evalstats::normalize_global(labels);
    }
    model.bandwidth = cfg.get_double(section, "bandwidth", 0.0);
    if (model.bandwidth <= 0.0)
      model.bandwidth = rewards::median_heuristic_bandwidth(model.train_embeddings);
    spec.preference = std::move(model);
  } else if (kind == "cosine") {
    spec.kind = rewards::RewardKind::kInstanceToInstance;
    if (cfg.has(section, "payload")) {
      spec.condition_refs = io::load_embeddings(cfg.get_string(section, "payload", ""));
    } else {
      Matrix refs(static_cast<std::size_t>(task.conditions), static_cast<std::size_t>(task.dim));
      for (int c = 0; c < task.conditions; ++c) {
        std::vector<double> mean(static_cast<std::size_t>(task.dim), 0.0);
        for (const auto& comp : task.mixtures[static_cast<std::size_t>(c)])
          for (int i = 0; i < task.dim; ++i)
            mean[static_cast<std::size_t>(i)] += comp.weight * comp.mean[static_cast<std::size_t>(i)];
        refs.set_row(static_cast<std::size_t>(c), mean);
      }
      spec.condition_refs = std::move(refs);
    }
    if (spec.condition_refs->rows() != static_cast<std::size_t>(task.conditions))
      throw InvalidInput("config: [" + section + "] needs one reference row per condition");
  } else if (kind == "per_item_fad") {
    spec.kind = rewards::RewardKind::kInstanceToDistribution;
    spec.direction = rewards::Direction::kMinimize;
    spec.exemplar = load_exemplar(cfg, section, task);
  } else if (kind == "dataset_fad") {
    spec.kind = rewards::RewardKind::kDistToDist;
    spec.direction = rewards::Direction::kMinimize;
    spec.exemplar = load_exemplar(cfg, section, task);
  } else if (kind == "vendi") {
    spec.kind = rewards::RewardKind::kDistToDist;
    spec.vendi = true;
  } else if (kind == "mixed") {
    const double p = cfg.get_double(section, "p", 0.5);
    rewards::RewardSpec a = build_reward(cfg, section + ".a", task, derive_seed(seed, "mixed-a"));
    rewards::RewardSpec b = build_reward(cfg, section + ".b", task, derive_seed(seed, "mixed-b"));
    return rewards::mixed_reward(std::move(a), std::move(b), p, derive_seed(seed, "mixed-pick"));
  } else {
    throw InvalidInput("config: [" + section + "] unknown reward kind '" + kind + "'");
  }
  // The direction is implied by the kind (FAD metrics are minimized, all
  // rewards surface as larger-better); an explicit key must agree.
  if (cfg.has(section, "direction")) {
    const std::string direction = cfg.get_string(section, "direction", "");
    const std::string natural =
        spec.direction == rewards::Direction::kMinimize ? "minimize" : "maximize";
    if (direction != natural)
      throw InvalidInput("config: [" + section + "] direction must be '" + natural + "' for kind '" +
                         kind + "'");
  }
  spec.validate();
  return spec;
}

void validate_loss_reward_combo(const ExperimentConfig& cfg, const rewards::RewardSpec& reward) {
  if (reward.mixed) {
    validate_loss_reward_combo(cfg, *reward.mixed->a);
    validate_loss_reward_combo(cfg, *reward.mixed->b);
    return;
  }
  const bool instance = reward.is_instance_level();
  const bool paired = cfg.train.paired;
  using losses::Variant;
  switch (cfg.loss.variant) {
    case Variant::kDpo:
    case Variant::kKtoPaired:
      if (!paired) throw InvalidInput("config: " + losses::variant_name(cfg.loss.variant) +
                                      " requires train.paired = true");
      break;
    case Variant::kKtoUnpaired:
      if (paired) throw InvalidInput("config: kto_unpaired requires train.paired = false");
      if (!instance)
        throw InvalidInput("config: kto_unpaired needs an instance-level reward");
      break;
    case Variant::kKtoContInstance:
    case Variant::kDpok:
      if (!instance)
        throw InvalidInput("config: " + losses::variant_name(cfg.loss.variant) +
                           " needs an instance-level reward");
      break;
    case Variant::kKtoContDist:
      if (instance)
        throw InvalidInput("config: kto_cont_dist needs a distributional reward");
      break;
  }
  if (!instance && !paired)
    throw InvalidInput("config: distributional rewards require paired batches");
}

}  // namespace

ExperimentConfig load_experiment_config(const config::Config& cfg,
                                        std::optional<std::uint64_t> seed_override) {
  const std::map<std::string, std::set<std::string>> allowed = {
      {"task", {"preset", "separation", "spread", "conditions", "radius", "frame_len"}},
      {"model", {"hidden", "checkpoint", "pretrain_steps", "pretrain_batch", "pretrain_lr",
                 "holdout"}},
      {"reward", reward_key_set()},
      {"reward.a", reward_key_set()},
      {"reward.b", reward_key_set()},
      {"loss", {"variant", "beta", "r_threshold", "raw_sigmoid", "sigma_weighted_beta"}},
      {"train", {"batch_size", "paired", "demo_steps", "ref_mix_prob", "ref_mix_per_item",
                 "learning_rate", "grad_clip", "iterations", "optimizer", "threshold",
                 "condition_dropout", "dropout_prob", "seed"}},
      {"eval", {"every", "prompts", "steps", "bootstrap_draws", "bootstrap_subset",
                "checkpoint_every"}}};
  const auto unknown = cfg.unknown_keys(allowed);
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw InvalidInput(msg);
  }

  ExperimentConfig out;
  out.task = load_task(cfg);

  out.hidden = static_cast<int>(cfg.get_int("model", "hidden", 64));
  out.model_checkpoint = cfg.get_string("model", "checkpoint", "");
  out.pretrain.steps = static_cast<int>(cfg.get_int("model", "pretrain_steps", 2000));
  out.pretrain.batch = static_cast<int>(cfg.get_int("model", "pretrain_batch", 32));
  out.pretrain.learning_rate = cfg.get_double("model", "pretrain_lr", 1e-2);
  out.pretrain.holdout = static_cast<int>(cfg.get_int("model", "holdout", 256));

  out.train.batch_size = static_cast<int>(cfg.get_int("train", "batch_size", 80));
  out.train.paired = cfg.get_bool("train", "paired", true);
  out.train.demo_steps = static_cast<int>(cfg.get_int("train", "demo_steps", 40));
  out.train.ref_mix_prob = cfg.get_double("train", "ref_mix_prob", 0.1);
  out.train.ref_mix_per_item = cfg.get_bool("train", "ref_mix_per_item", false);
  out.train.learning_rate = cfg.get_double("train", "learning_rate", 1e-3);
  out.train.grad_clip = cfg.get_double("train", "grad_clip", 10.0);
  out.train.iterations = static_cast<int>(cfg.get_int("train", "iterations", 200));
  out.train.optimizer = cfg.get_string("train", "optimizer", "rmsprop");
  const std::string thr = cfg.get_string("train", "threshold", "mean");
  if (thr == "mean") {
    out.train.threshold = select::SplitThreshold::kMean;
  } else if (thr == "median") {
    out.train.threshold = select::SplitThreshold::kMedian;
  } else {
    throw InvalidInput("config: train.threshold must be mean or median");
  }
  out.train.condition_dropout = cfg.get_bool("train", "condition_dropout", true);
  out.train.dropout_prob = cfg.get_double("train", "dropout_prob", 0.1);
  out.train.seed = static_cast<std::uint64_t>(cfg.get_int("train", "seed", 0));
  if (seed_override) out.train.seed = *seed_override;
  out.train.validate();
  out.pretrain.seed = derive_seed(out.train.seed, "pretrain");
  out.pretrain.condition_dropout = out.train.condition_dropout;
  out.pretrain.dropout_prob = out.train.dropout_prob;

  out.loss.variant = losses::variant_from_string(cfg.get_string("loss", "variant", "kto_paired"));
  out.loss.beta = cfg.get_double("loss", "beta", 5000.0);
  out.loss.r_threshold = cfg.get_double("loss", "r_threshold", 0.0);
  out.loss.raw_sigmoid = cfg.get_bool("loss", "raw_sigmoid", false);
  out.loss.sigma_weighted_beta = cfg.get_bool("loss", "sigma_weighted_beta", false);
  if (!(out.loss.beta > 0.0)) throw InvalidInput("config: loss.beta must be > 0");

  out.eval.every = static_cast<int>(cfg.get_int("eval", "every", 50));
  out.eval.prompts = static_cast<int>(cfg.get_int("eval", "prompts", 64));
  out.eval.steps = static_cast<int>(cfg.get_int("eval", "steps", 40));
  out.eval.bootstrap_draws = static_cast<int>(cfg.get_int("eval", "bootstrap_draws", 1000));
  out.eval.bootstrap_subset = static_cast<int>(cfg.get_int("eval", "bootstrap_subset", 40));
  out.eval.checkpoint_every = static_cast<int>(cfg.get_int("eval", "checkpoint_every", 50));

  out.reward = build_reward(cfg, "reward", out.task, derive_seed(out.train.seed, "reward"));
  validate_loss_reward_combo(out, out.reward);
  return out;
}

// ---------------------------------------------------------------------------
// Scoring dispatch

std::vector<double> score_items(const rewards::RewardSpec& resolved,
                                const select::DemoBatch& batch) {
  if (!resolved.is_instance_level())
    throw InvalidInput("score_items: reward is distributional");
  std::vector<double> out(batch.size(), 0.0);
  par::for_each_index(batch.size(), [&](std::size_t i) {
    const select::DemoItem& item = batch.items[i];
    switch (resolved.kind) {
      case rewards::RewardKind::kInstance:
        out[i] = rewards::preference_predict(*resolved.preference, item.reward_embedding());
        break;
      case rewards::RewardKind::kInstanceToInstance: {
        const auto& refs = *resolved.condition_refs;
        if (item.condition < 0 || static_cast<std::size_t>(item.condition) >= refs.rows())
          throw InvalidInput("score_items: condition without a reference row");
        out[i] = rewards::cosine_reward(item.reward_embedding(),
                                        refs.row(static_cast<std::size_t>(item.condition)));
        break;
      }
      case rewards::RewardKind::kInstanceToDistribution: {
        if (!item.frames) throw InvalidInput("score_items: item has no frames for per-item FAD");
        out[i] = -rewards::per_item_fad(*item.frames, *resolved.exemplar);
        break;
      }
      case rewards::RewardKind::kDistToDist:
        break;  // unreachable
    }
  });
  return out;
}

double score_set(const rewards::RewardSpec& resolved, const EmbeddingMatrix& embeddings) {
  if (resolved.is_instance_level()) throw InvalidInput("score_set: reward is instance-level");
  if (resolved.vendi) return rewards::vendi_reward(embeddings);
  return rewards::dataset_fad_reward(embeddings, *resolved.exemplar);
}

std::unique_ptr<select::SetObjective> make_objective(const rewards::RewardSpec& resolved) {
  if (resolved.is_instance_level()) throw InvalidInput("make_objective: reward is instance-level");
  if (resolved.vendi) return select::make_vendi_objective();
  return select::make_fad_objective(*resolved.exemplar);
}

// ---------------------------------------------------------------------------
// Training

TrainState make_train_state(const toy::DenoiserModel& baseline) {
  TrainState state;
  state.theta = baseline;
  state.ref = baseline;
  state.opt_m1.assign(baseline.param_count(), 0.0);
  state.opt_m2.assign(baseline.param_count(), 0.0);
  state.iter = 0;
  return state;
}

namespace {

select::DemoBatch generate_batch(const toy::DenoiserModel& model_default,
                                 const toy::DenoiserModel& model_ref, bool use_ref_batch,
                                 bool per_item_mix, double ref_prob,
                                 const std::vector<std::int64_t>& conditions,
                                 const toy::ToyTask& task, int steps, std::uint64_t batch_seed,
                                 bool paired) {
  select::DemoBatch batch;
  batch.paired = paired;
  batch.items.resize(conditions.size());
  par::for_each_index(conditions.size(), [&](std::size_t i) {
    const toy::DenoiserModel* gen = &model_default;
    if (per_item_mix) {
      Rng pick(mix_seed(batch_seed, fnv1a64("ref-mix-item") ^ i));
      if (pick.uniform01() < ref_prob) gen = &model_ref;
    } else if (use_ref_batch) {
      gen = &model_ref;
    }
    select::DemoItem item;
    item.condition = conditions[i];
    item.seed = mix_seed(batch_seed, i);
    toy::SampleResult s = toy::sample(*gen, static_cast<int>(conditions[i]), item.seed, steps,
                                      task.frame_len);
    item.payload = std::move(s.value);
    item.frames = rewards::ItemFrames{std::move(s.frames)};
    item.embedding = item.payload;  // identity embedding channel
    batch.items[i] = std::move(item);
  });
  return batch;
}

int maybe_drop_condition(int condition, bool dropout, double prob, Rng& rng) {
  if (dropout && rng.uniform01() < prob) return toy::kNullCondition;
  return condition;
}

struct UpdateNorms {
  double raw = 0.0;
  double clipped = 0.0;
};

UpdateNorms apply_update(TrainState& state, std::vector<double> grad, const TrainSettings& cfg) {
  UpdateNorms norms;
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  norms.raw = std::sqrt(sq);
  if (norms.raw > cfg.grad_clip) {
    const double scale = cfg.grad_clip / norms.raw;
    for (double& g : grad) g *= scale;
    norms.clipped = cfg.grad_clip;
  } else {
    norms.clipped = norms.raw;
  }

  auto& theta = state.theta.params;
  if (cfg.optimizer == "sgd") {
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= cfg.learning_rate * grad[k];
  } else if (cfg.optimizer == "rmsprop") {
    constexpr double rho = 0.99, eps = 1e-8;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      state.opt_m2[k] = rho * state.opt_m2[k] + (1.0 - rho) * grad[k] * grad[k];
      theta[k] -= cfg.learning_rate * grad[k] / (std::sqrt(state.opt_m2[k]) + eps);
    }
  } else {  // adam
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double t = static_cast<double>(state.iter + 1);
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      state.opt_m1[k] = b1 * state.opt_m1[k] + (1.0 - b1) * grad[k];
      state.opt_m2[k] = b2 * state.opt_m2[k] + (1.0 - b2) * grad[k] * grad[k];
      theta[k] -= cfg.learning_rate * (state.opt_m1[k] / c1) /
                  (std::sqrt(state.opt_m2[k] / c2) + eps);
    }
  }
  return norms;
}

losses::LossDemo to_loss_demo(const select::DemoItem& item, int condition) {
  losses::LossDemo demo;
  demo.x0 = item.payload;
  demo.condition = condition;
  return demo;
}

}  // namespace

StepRecord train_step(TrainState& state, const ExperimentConfig& config) {
  const TrainSettings& train = config.train;
  StepRecord record;
  record.iter = state.iter;

  const std::uint64_t step_seed =
      mix_seed(derive_seed(train.seed, "train-step"), static_cast<std::uint64_t>(state.iter));
  const rewards::RewardSpec& reward = config.reward.resolve(static_cast<std::uint64_t>(state.iter));

  // (1) Conditions: shared per pair when paired, i.i.d. otherwise.
  Rng cond_rng(mix_seed(step_seed, fnv1a64("conditions")));
  const std::size_t n = train.paired ? static_cast<std::size_t>(train.batch_size) / 2
                                     : static_cast<std::size_t>(train.batch_size);
  const std::size_t half = train.paired ? n : n / 2;
  std::vector<std::int64_t> conditions(n);
  for (auto& c : conditions)
    c = static_cast<std::int64_t>(cond_rng.below(static_cast<std::uint64_t>(config.task.conditions)));

  // (2) Two demo batches; the reference model generates a batch with the
  // ref-mix probability.
  Rng mix_rng(mix_seed(step_seed, fnv1a64("ref-mix")));
  const bool ref1 = !train.ref_mix_per_item && mix_rng.uniform01() < train.ref_mix_prob;
  const bool ref2 = !train.ref_mix_per_item && mix_rng.uniform01() < train.ref_mix_prob;

  select::DemoBatch d1, d2;
  if (train.paired) {
    d1 = generate_batch(state.theta, state.ref, ref1, train.ref_mix_per_item, train.ref_mix_prob,
                        conditions, config.task, train.demo_steps,
                        mix_seed(step_seed, fnv1a64("batch-1")), true);
    d2 = generate_batch(state.theta, state.ref, ref2, train.ref_mix_per_item, train.ref_mix_prob,
                        conditions, config.task, train.demo_steps,
                        mix_seed(step_seed, fnv1a64("batch-2")), true);
  } else {
    const std::vector<std::int64_t> c1(conditions.begin(),
                                       conditions.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<std::int64_t> c2(conditions.begin() + static_cast<std::ptrdiff_t>(half),
                                       conditions.end());
    d1 = generate_batch(state.theta, state.ref, ref1, train.ref_mix_per_item, train.ref_mix_prob,
                        c1, config.task, train.demo_steps, mix_seed(step_seed, fnv1a64("batch-1")),
                        false);
    d2 = generate_batch(state.theta, state.ref, ref2, train.ref_mix_per_item, train.ref_mix_prob,
                        c2, config.task, train.demo_steps, mix_seed(step_seed, fnv1a64("batch-2")),
                        false);
  }

  // (3)+(4) Score and split according to the reward kind.
  select::SplitResult split;
  std::vector<double> all_rewards;
  double cont_threshold = 0.0;
  try {
    if (reward.is_instance_level()) {
      const std::vector<double> r1 = score_items(reward, d1);
      const std::vector<double> r2 = score_items(reward, d2);
      all_rewards = r1;
      all_rewards.insert(all_rewards.end(), r2.begin(), r2.end());
      record.batch_mean_reward = std::accumulate(all_rewards.begin(), all_rewards.end(), 0.0) /
                                 static_cast<double>(all_rewards.size());
      cont_threshold = record.batch_mean_reward;
      if (train.paired) {
        split = select::split_pairwise(d1, d2, r1, r2);
      } else {
        select::DemoBatch pool;
        pool.items = d1.items;
        pool.items.insert(pool.items.end(), d2.items.begin(), d2.items.end());
        split = select::split_by_batch_mean(pool, all_rewards, train.threshold);
      }
      record.reward_d1 = std::accumulate(r1.begin(), r1.end(), 0.0) / static_cast<double>(r1.size());
      record.reward_d2 = std::accumulate(r2.begin(), r2.end(), 0.0) / static_cast<double>(r2.size());
    } else {
      auto objective = make_objective(reward);
      split = select::greedy_swap(d1, d2, *objective);
      record.trace_json = select::trace_to_json(split);
      for (const auto& s : split.swap_trace) record.accepted_swaps += s.accepted;
      record.reward_d1 = score_set(reward, d1.embeddings());
      record.reward_d2 = score_set(reward, d2.embeddings());
      record.batch_mean_reward = 0.5 * (record.reward_d1 + record.reward_d2);
    }
  } catch (const AllTied& e) {
    record.skipped = true;
    record.skip_reason = e.what();
    state.iter += 1;
    return record;
  }
  record.reward_pos = split.reward_pos;
  record.reward_neg = split.reward_neg;

  // (5) Noise the demonstrations, evaluate the loss, clip, update.
  Rng drop_rng(mix_seed(step_seed, fnv1a64("cond-dropout")));
  const std::uint64_t noise_seed = mix_seed(step_seed, fnv1a64("loss-noise"));
  losses::LossResult loss;
  using losses::Variant;
  switch (config.loss.variant) {
    case Variant::kDpo: {
      std::vector<losses::PairedLossDemo> pairs(split.d_pos.size());
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const int cond =
            maybe_drop_condition(static_cast<int>(split.d_pos.items[i].condition),
                                 train.condition_dropout, train.dropout_prob, drop_rng);
        pairs[i].pos = to_loss_demo(split.d_pos.items[i], cond);
        pairs[i].neg = to_loss_demo(split.d_neg.items[i], cond);
      }
      loss = losses::dpo_loss(state.theta, state.ref, pairs, noise_seed, config.loss);
      break;
    }
    case Variant::kKtoPaired:
    case Variant::kKtoUnpaired: {
      std::vector<losses::LabeledDemo> demos;
      for (const auto& item : split.d_pos.items) {
        const int cond = maybe_drop_condition(static_cast<int>(item.condition),
                                              train.condition_dropout, train.dropout_prob,
                                              drop_rng);
        demos.push_back({to_loss_demo(item, cond), true});
      }
      for (const auto& item : split.d_neg.items) {
        const int cond = maybe_drop_condition(static_cast<int>(item.condition),
                                              train.condition_dropout, train.dropout_prob,
                                              drop_rng);
        demos.push_back({to_loss_demo(item, cond), false});
      }
      loss = losses::kto_loss(state.theta, state.ref, demos,
                              config.loss.variant == Variant::kKtoPaired, noise_seed, config.loss);
      break;
    }
    case Variant::kKtoContInstance:
    case Variant::kDpok: {
      // All demonstrations with their instance rewards; the batch threshold
      // plays the role of r_threshold.
      std::vector<losses::ScoredDemo> demos;
      std::vector<const select::DemoBatch*> batches = {&d1, &d2};
      std::size_t k = 0;
      for (const auto* batch : batches) {
        for (const auto& item : batch->items) {
          const int cond = maybe_drop_condition(static_cast<int>(item.condition),
                                                train.condition_dropout, train.dropout_prob,
                                                drop_rng);
          demos.push_back({to_loss_demo(item, cond), all_rewards[k++]});
        }
      }
      if (config.loss.variant == Variant::kKtoContInstance) {
        loss = losses::kto_loss_continuous_instance(state.theta, state.ref, demos, cont_threshold,
                                                    noise_seed, config.loss);
      } else {
        loss = losses::dpok_loss(state.theta, demos, cont_threshold, noise_seed, config.loss);
      }
      break;
    }
    case Variant::kKtoContDist: {
      std::vector<losses::LabeledDemo> demos;
      for (const auto& item : split.d_pos.items) {
        const int cond = maybe_drop_condition(static_cast<int>(item.condition),
                                              train.condition_dropout, train.dropout_prob,
                                              drop_rng);
        demos.push_back({to_loss_demo(item, cond), true});
      }
      for (const auto& item : split.d_neg.items) {
        const int cond = maybe_drop_condition(static_cast<int>(item.condition),
                                              train.condition_dropout, train.dropout_prob,
                                              drop_rng);
        demos.push_back({to_loss_demo(item, cond), false});
      }
      loss = losses::kto_loss_continuous_dist(state.theta, state.ref, demos, split.reward_pos,
                                              split.reward_neg, noise_seed, config.loss);
      break;
    }
  }

  record.loss = loss.loss;
  record.warnings = loss.warnings;
  const UpdateNorms norms = apply_update(state, std::move(loss.grad), train);
  record.grad_norm_raw = norms.raw;
  record.grad_norm = norms.clipped;
  state.iter += 1;
  return record;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<io::Prompt> default_prompts(int count, int conditions) {
  std::vector<io::Prompt> prompts(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "eval-%04d", i);
    prompts[static_cast<std::size_t>(i)] = {i % conditions, buf};
  }
  return prompts;
}

namespace {

select::DemoBatch generate_eval_batch(const toy::DenoiserModel& model,
                                      const std::vector<io::Prompt>& prompts,
                                      const toy::ToyTask& task, int steps) {
  select::DemoBatch batch;
  batch.items.resize(prompts.size());
  par::for_each_index(prompts.size(), [&](std::size_t i) {
    select::DemoItem item;
    item.condition = prompts[i].condition;
    item.seed = toy::seed_from_prompt(prompts[i].text);
    toy::SampleResult s =
        toy::sample(model, static_cast<int>(item.condition), item.seed, steps, task.frame_len);
    item.payload = std::move(s.value);
    item.frames = rewards::ItemFrames{std::move(s.frames)};
    item.embedding = item.payload;
    batch.items[i] = std::move(item);
  });
  return batch;
}

}  // namespace

nlohmann::json evaluate_pair(const toy::DenoiserModel& model, const toy::DenoiserModel& baseline,
                             const toy::ToyTask& task, const rewards::RewardSpec& reward,
                             const std::vector<io::Prompt>& prompts, const EvalSettings& eval,
                             std::uint64_t seed) {
  if (reward.mixed) {
    nlohmann::json j;
    j["mixed_p"] = reward.mixed->p;
    j["arm_a"] = evaluate_pair(model, baseline, task, *reward.mixed->a, prompts, eval, seed);
    j["arm_b"] = evaluate_pair(model, baseline, task, *reward.mixed->b, prompts, eval, seed);
    return j;
  }

  const select::DemoBatch gen_model = generate_eval_batch(model, prompts, task, eval.steps);
  const select::DemoBatch gen_base = generate_eval_batch(baseline, prompts, task, eval.steps);
  const EmbeddingMatrix emb_model = gen_model.embeddings();
  const EmbeddingMatrix emb_base = gen_base.embeddings();

  nlohmann::json j;
  j["prompts"] = prompts.size();
  j["reward_name"] = reward.name;

  if (reward.is_instance_level()) {
    evalstats::PairedScores scores;
    scores.model = score_items(reward, gen_model);
    scores.baseline = score_items(reward, gen_base);
    scores.higher_better = true;
    const double n = static_cast<double>(scores.model.size());
    j["reward"] = {
        {"model_mean", std::accumulate(scores.model.begin(), scores.model.end(), 0.0) / n},
        {"baseline_mean",
         std::accumulate(scores.baseline.begin(), scores.baseline.end(), 0.0) / n},
        {"win_rate", evalstats::win_rate(scores)}};
  } else {
    const double r_model = score_set(reward, emb_model);
    const double r_base = score_set(reward, emb_base);
    nlohmann::json d;
    d["reward_model"] = r_model;
    d["reward_baseline"] = r_base;
    if (reward.exemplar) {
      d["fad_model"] = -r_model;
      d["fad_baseline"] = -r_base;
      d["bootstrap_win_rate"] = evalstats::bootstrap_dataset_win_rate(
          emb_model, emb_base, reward.exemplar->stats, eval.bootstrap_draws,
          eval.bootstrap_subset, derive_seed(seed, "bootstrap"));
    }
    j["dataset"] = d;
  }
  j["vendi"] = {{"model", diversity::vendi_score(emb_model)},
                {"baseline", diversity::vendi_score(emb_base)}};
  return j;
}

// ---------------------------------------------------------------------------
// Experiment driver

namespace {

double headline_metric(const nlohmann::json& eval_json, bool model_side) {
  const char* side = model_side ? "model" : "baseline";
  if (eval_json.contains("reward"))
    return eval_json["reward"][model_side ? "model_mean" : "baseline_mean"].get<double>();
  if (eval_json.contains("dataset"))
    return eval_json["dataset"][model_side ? "reward_model" : "reward_baseline"].get<double>();
  if (eval_json.contains("vendi")) return eval_json["vendi"][side].get<double>();
  return 0.0;
}

double headline_win(const nlohmann::json& eval_json) {
  if (eval_json.contains("reward")) return eval_json["reward"]["win_rate"].get<double>();
  if (eval_json.contains("dataset") && eval_json["dataset"].contains("bootstrap_win_rate"))
    return eval_json["dataset"]["bootstrap_win_rate"].get<double>();
  if (eval_json.contains("vendi"))
    return eval_json["vendi"]["model"].get<double>() > eval_json["vendi"]["baseline"].get<double>()
               ? 1.0
               : 0.0;
  return 0.5;
}

void save_stream_checkpoint(const std::optional<std::filesystem::path>& dir, int iter,
                            const toy::DenoiserModel& model) {
  if (!dir) return;
  std::filesystem::create_directories(*dir / "checkpoints");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%06d.json", iter);
  toy::save_checkpoint(*dir / "checkpoints" / buf, model);
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& config,
                            const std::optional<std::filesystem::path>& stream_dir) {
  RunArtifacts artifacts;

  if (!config.model_checkpoint.empty()) {
    artifacts.baseline = toy::load_checkpoint(config.model_checkpoint);
    if (artifacts.baseline.data_dim != config.task.dim ||
        artifacts.baseline.conditions != config.task.conditions)
      throw InvalidInput("run_experiment: checkpoint shape does not match the task");
  } else {
    toy::DenoiserModel init =
        toy::DenoiserModel::init(config.task.dim, config.hidden, config.task.conditions,
                                 toy::NoiseSchedule{}, derive_seed(config.train.seed, "model-init"));
    artifacts.baseline = toy::pretrain(std::move(init), config.task, config.pretrain).model;
  }

  TrainState state = make_train_state(artifacts.baseline);
  artifacts.checkpoints.emplace_back(0, artifacts.baseline);
  if (stream_dir) {
    std::filesystem::create_directories(*stream_dir / "checkpoints");
    toy::save_checkpoint(*stream_dir / "checkpoints" / "baseline.json", artifacts.baseline);
  }

  const std::vector<io::Prompt> prompts =
      default_prompts(config.eval.prompts, config.task.conditions);
  const std::uint64_t eval_seed = derive_seed(config.train.seed, "eval");

  auto run_eval_hook = [&](int iter) {
    nlohmann::json ej = evaluate_pair(state.theta, artifacts.baseline, config.task, config.reward,
                                      prompts, config.eval, eval_seed);
    EvalRecord rec;
    rec.iter = iter;
    rec.model_metric = headline_metric(ej, true);
    rec.baseline_metric = headline_metric(ej, false);
    rec.win_rate = headline_win(ej);
    artifacts.evals.push_back(rec);
  };

  for (int iter = 0; iter < config.train.iterations; ++iter) {
    StepRecord record = train_step(state, config);  // TrainingDiverged propagates
    artifacts.steps.push_back(std::move(record));
    const int done = iter + 1;
    if (config.eval.checkpoint_every > 0 && done % config.eval.checkpoint_every == 0) {
      artifacts.checkpoints.emplace_back(done, state.theta);
      save_stream_checkpoint(stream_dir, done, state.theta);
    }
    if (config.eval.every > 0 && done % config.eval.every == 0 &&
        done != config.train.iterations)
      run_eval_hook(done);
  }
  artifacts.final_model = state.theta;

  nlohmann::json final_eval = evaluate_pair(artifacts.final_model, artifacts.baseline, config.task,
                                            config.reward, prompts, config.eval, eval_seed);
  EvalRecord final_rec;
  final_rec.iter = config.train.iterations;
  final_rec.model_metric = headline_metric(final_eval, true);
  final_rec.baseline_metric = headline_metric(final_eval, false);
  final_rec.win_rate = headline_win(final_eval);
  artifacts.evals.push_back(final_rec);

  nlohmann::json report;
  report["version"] = 1;
  report["kind"] = "train-report";
  report["seed"] = config.train.seed;
  report["config_hash"] = config.config_hash;
  report["iterations"] = config.train.iterations;
  report["loss_variant"] = losses::variant_name(config.loss.variant);
  std::size_t skipped = 0;
  nlohmann::json series;
  for (const char* key : {"reward_pos", "reward_neg", "batch_mean", "loss", "grad_norm"})
    series[key] = nlohmann::json::array();
  for (const auto& s : artifacts.steps) {
    skipped += s.skipped ? 1 : 0;
    series["reward_pos"].push_back(s.reward_pos);
    series["reward_neg"].push_back(s.reward_neg);
    series["batch_mean"].push_back(s.batch_mean_reward);
    series["loss"].push_back(s.loss);
    series["grad_norm"].push_back(s.grad_norm);
  }
  report["skipped_steps"] = skipped;
  report["series"] = series;
  nlohmann::json hooks = nlohmann::json::array();
  for (const auto& e : artifacts.evals)
    hooks.push_back({{"iter", e.iter},
                     {"model_metric", e.model_metric},
                     {"baseline_metric", e.baseline_metric},
                     {"win_rate", e.win_rate}});
  report["eval_hooks"] = hooks;
  report["final_eval"] = final_eval;
  artifacts.report = std::move(report);
  return artifacts;
}

void write_artifacts(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                     const RunArtifacts& artifacts) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "logs");
  fs::create_directories(out_dir / "traces");

  toy::save_checkpoint(out_dir / "checkpoints" / "baseline.json", artifacts.baseline);
  toy::save_checkpoint(out_dir / "checkpoints" / "final.json", artifacts.final_model);
  for (const auto& [iter, model] : artifacts.checkpoints) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt-%06d.json", iter);
    toy::save_checkpoint(out_dir / "checkpoints" / buf, model);
  }

  std::ostringstream steps_csv;
  steps_csv.precision(17);
  steps_csv << "iter,skipped,loss,grad_norm,reward_pos,reward_neg,batch_mean,accepted_swaps\n";
  std::ostringstream loss_csv;
  loss_csv.precision(17);
  loss_csv << "step,variant,loss,grad_norm\n";
  std::ostringstream traces;
  for (const auto& s : artifacts.steps) {
    steps_csv << s.iter << ',' << (s.skipped ? 1 : 0) << ',' << s.loss << ',' << s.grad_norm << ','
              << s.reward_pos << ',' << s.reward_neg << ',' << s.batch_mean_reward << ','
              << s.accepted_swaps << '\n';
    loss_csv << s.iter << ',' << losses::variant_name(config.loss.variant) << ',' << s.loss << ','
             << s.grad_norm << '\n';
    if (!s.trace_json.empty()) traces << s.trace_json << '\n';
  }
  io::write_file(out_dir / "logs" / "steps.csv", steps_csv.str());
  io::write_file(out_dir / "logs" / "loss.csv", loss_csv.str());
  if (!artifacts.steps.empty()) io::write_file(out_dir / "traces" / "swaps.jsonl", traces.str());

  std::ostringstream eval_csv;
  eval_csv.precision(17);
  eval_csv << "iter,model_metric,baseline_metric,win_rate\n";
  for (const auto& e : artifacts.evals)
    eval_csv << e.iter << ',' << e.model_metric << ',' << e.baseline_metric << ',' << e.win_rate
             << '\n';
  io::write_file(out_dir / "logs" / "eval.csv", eval_csv.str());

  io::write_file(out_dir / "report.json", artifacts.report.dump(2) + "\n");
}

}  // namespace dragon::train
