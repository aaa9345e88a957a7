#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "dragon/config.hpp"
#include "dragon/errors.hpp"
#include "dragon/trainer.hpp"
#include "test_util.hpp"

using namespace dragon;
using namespace dragon::train;

namespace {

const char* kTinyConfig = R"cfg(
# tiny smoke experiment
[task]
preset = "two-gaussians"
separation = 1.2
spread = 0.3
frame_len = 4

[model]
hidden = 16
pretrain_steps = 150
pretrain_batch = 16

[reward]
kind = "preference"
synthetic_target = [0.0, 1.0]
synthetic_count = 64

[loss]
variant = "kto_paired"
beta = 20.0

[train]
batch_size = 8
paired = true
demo_steps = 6
iterations = 4
learning_rate = 0.001
seed = 3

[eval]
every = 0
prompts = 8
steps = 6
bootstrap_draws = 20
bootstrap_subset = 4
checkpoint_every = 2
)cfg";

ExperimentConfig tiny_config() {
  return load_experiment_config(config::Config::parse_string(kTinyConfig, "tiny"));
}

ExperimentConfig fad_config() {
  ExperimentConfig cfg = tiny_config();
  cfg.reward = rewards::RewardSpec{};
  cfg.reward.kind = rewards::RewardKind::kDistToDist;
  cfg.reward.direction = rewards::Direction::kMinimize;
  std::vector<double> shift{0.6, 0.0};
  cfg.reward.exemplar = rewards::ExemplarSet{cfg.task.marginal_stats(shift), "shifted"};
  cfg.reward.name = "dataset-fad";
  cfg.reward.validate();
  return cfg;
}

toy::DenoiserModel quick_baseline(const ExperimentConfig& cfg) {
  toy::DenoiserModel init = toy::DenoiserModel::init(cfg.task.dim, cfg.hidden,
                                                     cfg.task.conditions, toy::NoiseSchedule{},
                                                     derive_seed(cfg.train.seed, "model-init"));
  return toy::pretrain(std::move(init), cfg.task, cfg.pretrain).model;
}

}  // namespace

TEST_CASE("config parsing picks up values and defaults") {
  ExperimentConfig cfg = tiny_config();
  CHECK(cfg.hidden == 16);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.train.demo_steps == 6);
  CHECK(cfg.train.ref_mix_prob == doctest::Approx(0.1));  // default
  CHECK(cfg.loss.beta == doctest::Approx(20.0));
  CHECK(cfg.reward.kind == rewards::RewardKind::kInstance);
  CHECK(cfg.eval.bootstrap_draws == 20);
}

TEST_CASE("unknown config keys are rejected with their names") {
  std::string text = kTinyConfig;
  text += "\n[train]\n";  // duplicate section header is fine; key below is not
  text.replace(text.find("batch_size"), 10, "batch_sise");
  try {
    load_experiment_config(config::Config::parse_string(text, "bad"));
    FAIL("expected a throw");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("batch_sise") != std::string::npos);
  }
}

TEST_CASE("an explicit reward direction must match the kind") {
  std::string text = kTinyConfig;
  text += "\n[reward]\ndirection = \"minimize\"\n";  // preference maximizes
  CHECK_THROWS_AS(load_experiment_config(config::Config::parse_string(text, "bad")), InvalidInput);
  std::string ok = kTinyConfig;
  ok += "\n[reward]\ndirection = \"maximize\"\n";
  CHECK_NOTHROW(load_experiment_config(config::Config::parse_string(ok, "good")));
}

TEST_CASE("incompatible loss and pairing settings are rejected") {
  std::string text = kTinyConfig;
  text.replace(text.find("\"kto_paired\""), 12, "\"kto_unpaired\"");
  CHECK_THROWS_AS(load_experiment_config(config::Config::parse_string(text, "bad")), InvalidInput);
}

TEST_CASE("seed override rewires every derived stream") {
  auto parsed = config::Config::parse_string(kTinyConfig, "tiny");
  ExperimentConfig a = load_experiment_config(parsed, 1234);
  CHECK(a.train.seed == 1234);
  CHECK(a.pretrain.seed == derive_seed(1234, "pretrain"));
}

TEST_CASE("a zero learning rate leaves parameters untouched") {
  ExperimentConfig cfg = tiny_config();
  cfg.train.learning_rate = 0.0;
  TrainState state = make_train_state(quick_baseline(cfg));
  const auto before = state.theta.params;
  StepRecord rec = train_step(state, cfg);
  CHECK_FALSE(rec.skipped);
  CHECK(state.theta.params == before);
}

TEST_CASE("constant instance rewards trip the AllTied skip path") {
  ExperimentConfig cfg = tiny_config();
  cfg.train.paired = false;
  cfg.loss.variant = losses::Variant::kKtoUnpaired;
  rewards::PreferenceModel flat;
  flat.train_embeddings = testutil::random_matrix(8, 2, 1);
  flat.train_labels.assign(8, 0.0);  // exact zeros make every prediction exactly equal
  flat.bandwidth = 1.0;
  cfg.reward = rewards::RewardSpec{};
  cfg.reward.kind = rewards::RewardKind::kInstance;
  cfg.reward.preference = std::move(flat);
  cfg.reward.validate();

  TrainState state = make_train_state(quick_baseline(cfg));
  const auto before = state.theta.params;
  StepRecord rec = train_step(state, cfg);
  CHECK(rec.skipped);
  CHECK(rec.skip_reason.find("identical") != std::string::npos);
  CHECK(state.theta.params == before);
  CHECK(state.iter == 1);
}

TEST_CASE("distributional steps keep the greedy guarantee and trace") {
  ExperimentConfig cfg = fad_config();
  TrainState state = make_train_state(quick_baseline(cfg));
  for (int i = 0; i < 3; ++i) {
    StepRecord rec = train_step(state, cfg);
    CHECK_FALSE(rec.skipped);
    CHECK(rec.reward_pos >= std::max(rec.reward_d1, rec.reward_d2) - 1e-9);
    CHECK_FALSE(rec.trace_json.empty());
  }
}

TEST_CASE("the reference model never changes during training") {
  ExperimentConfig cfg = tiny_config();
  TrainState state = make_train_state(quick_baseline(cfg));
  const auto ref_before = state.ref.params;
  for (int i = 0; i < 3; ++i) train_step(state, cfg);
  CHECK(state.ref.params == ref_before);
}

TEST_CASE("gradient clipping bounds the applied norm") {
  ExperimentConfig cfg = tiny_config();
  cfg.train.grad_clip = 1e-4;
  TrainState state = make_train_state(quick_baseline(cfg));
  StepRecord rec = train_step(state, cfg);
  CHECK(rec.grad_norm <= cfg.train.grad_clip + 1e-9);
  CHECK(rec.grad_norm_raw >= rec.grad_norm);
}

TEST_CASE("pure reference generation with a frozen model is stationary") {
  ExperimentConfig cfg = tiny_config();
  cfg.train.ref_mix_prob = 1.0;
  cfg.train.learning_rate = 0.0;
  cfg.train.iterations = 60;
  TrainState state = make_train_state(quick_baseline(cfg));
  std::vector<double> means;
  for (int i = 0; i < cfg.train.iterations; ++i) means.push_back(train_step(state, cfg).batch_mean_reward);
  const std::size_t half = means.size() / 2;
  auto segment = [&](std::size_t b, std::size_t e) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = b; i < e; ++i) m += means[i];
    m /= static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i) v += (means[i] - m) * (means[i] - m);
    v /= static_cast<double>(e - b - 1);
    return std::pair<double, double>(m, v / static_cast<double>(e - b));
  };
  auto [m1, se1] = segment(0, half);
  auto [m2, se2] = segment(half, means.size());
  CHECK(std::abs(m1 - m2) < 2.0 * std::sqrt(se1 + se2) + 1e-12);
}

TEST_CASE("a recorded preference run lifts the batch reward") {
  // Frozen reference run: aesthetics-like kernel reward on the two-condition
  // task, 200 steps; the mean batch reward of the last 50 steps beats the
  // first 50.
  ExperimentConfig cfg = tiny_config();
  cfg.hidden = 32;
  cfg.pretrain.steps = 600;
  cfg.pretrain.batch = 32;
  cfg.train.batch_size = 16;
  cfg.train.demo_steps = 8;
  cfg.train.iterations = 200;
  cfg.train.learning_rate = 5e-3;
  cfg.loss.beta = 50.0;
  cfg.train.seed = 9;
  TrainState state = make_train_state(quick_baseline(cfg));
  std::vector<double> series;
  for (int i = 0; i < cfg.train.iterations; ++i)
    series.push_back(train_step(state, cfg).batch_mean_reward);
  auto mean_of = [&](std::size_t b, std::size_t e) {
    double acc = 0.0;
    for (std::size_t i = b; i < e; ++i) acc += series[i];
    return acc / static_cast<double>(e - b);
  };
  CHECK(mean_of(150, 200) > mean_of(0, 50));
}

TEST_CASE("experiments are deterministic end to end") {
  ExperimentConfig cfg = tiny_config();
  RunArtifacts a = run_experiment(cfg);
  RunArtifacts b = run_experiment(cfg);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].loss == b.steps[i].loss);
    CHECK(a.steps[i].reward_pos == b.steps[i].reward_pos);
    CHECK(a.steps[i].batch_mean_reward == b.steps[i].batch_mean_reward);
  }
  CHECK(a.final_model.params == b.final_model.params);
  CHECK(a.report.dump() == b.report.dump());
}

TEST_CASE("zero iterations leave only the baseline checkpoint") {
  ExperimentConfig cfg = tiny_config();
  cfg.train.iterations = 0;
  RunArtifacts artifacts = run_experiment(cfg);
  REQUIRE(artifacts.checkpoints.size() == 1);
  CHECK(artifacts.checkpoints[0].first == 0);
  CHECK(artifacts.final_model.params == artifacts.baseline.params);
  CHECK(artifacts.report.contains("final_eval"));
}

TEST_CASE("artifact layout lands on disk") {
  namespace fs = std::filesystem;
  ExperimentConfig cfg = tiny_config();
  cfg.train.iterations = 2;
  const fs::path dir = fs::temp_directory_path() / "dragon-test-artifacts";
  fs::remove_all(dir);
  RunArtifacts artifacts = run_experiment(cfg, dir);
  write_artifacts(dir, cfg, artifacts);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "checkpoints" / "baseline.json"));
  CHECK(fs::exists(dir / "checkpoints" / "final.json"));
  CHECK(fs::exists(dir / "checkpoints" / "ckpt-000002.json"));
  CHECK(fs::exists(dir / "logs" / "steps.csv"));
  CHECK(fs::exists(dir / "logs" / "loss.csv"));
  CHECK(fs::exists(dir / "logs" / "eval.csv"));
  fs::remove_all(dir);
}

TEST_CASE("evaluating a model against itself is an exact tie") {
  ExperimentConfig cfg = tiny_config();
  toy::DenoiserModel model = quick_baseline(cfg);
  auto prompts = default_prompts(16, cfg.task.conditions);
  nlohmann::json j = evaluate_pair(model, model, cfg.task, cfg.reward, prompts, cfg.eval, 5);
  CHECK(j["reward"]["win_rate"].get<double>() == doctest::Approx(0.5));
  CHECK(j["vendi"]["model"].get<double>() ==
        doctest::Approx(j["vendi"]["baseline"].get<double>()));

  ExperimentConfig fcfg = fad_config();
  nlohmann::json jf = evaluate_pair(model, model, fcfg.task, fcfg.reward, prompts, fcfg.eval, 5);
  CHECK(jf["dataset"]["bootstrap_win_rate"].get<double>() == doctest::Approx(0.5));
}

TEST_CASE("default prompts are stable round-robin") {
  auto prompts = default_prompts(5, 2);
  REQUIRE(prompts.size() == 5);
  CHECK(prompts[0].text == "eval-0000");
  CHECK(prompts[4].text == "eval-0004");
  CHECK(prompts[0].condition == 0);
  CHECK(prompts[1].condition == 1);
  CHECK(prompts[2].condition == 0);
}

TEST_CASE("every loss variant drives a training step") {
  using losses::Variant;
  ExperimentConfig pref = tiny_config();
  ExperimentConfig fad = fad_config();
  toy::DenoiserModel baseline = quick_baseline(pref);

  for (Variant v : {Variant::kDpo, Variant::kKtoPaired, Variant::kKtoContInstance,
                    Variant::kDpok}) {
    ExperimentConfig cfg = pref;
    cfg.loss.variant = v;
    TrainState state = make_train_state(baseline);
    for (int i = 0; i < 2; ++i) {
      StepRecord rec = train_step(state, cfg);
      CHECK_FALSE(rec.skipped);
      CHECK(std::isfinite(rec.loss));
      CHECK(std::isfinite(rec.grad_norm));
    }
    CHECK(state.theta.params != baseline.params);
  }
  for (Variant v : {Variant::kKtoContDist, Variant::kDpo}) {
    ExperimentConfig cfg = fad;
    cfg.loss.variant = v;
    TrainState state = make_train_state(baseline);
    StepRecord rec = train_step(state, cfg);
    CHECK_FALSE(rec.skipped);
    CHECK(std::isfinite(rec.loss));
  }
  // Unpaired KTO over the pooled batch with the median threshold.
  ExperimentConfig unpaired = pref;
  unpaired.train.paired = false;
  unpaired.loss.variant = Variant::kKtoUnpaired;
  unpaired.train.threshold = select::SplitThreshold::kMedian;
  TrainState state = make_train_state(baseline);
  StepRecord rec = train_step(state, unpaired);
  CHECK_FALSE(rec.skipped);
  CHECK(std::isfinite(rec.loss));
}

TEST_CASE("mixed rewards alternate splits inside the loop") {
  ExperimentConfig cfg = tiny_config();
  ExperimentConfig fcfg = fad_config();
  cfg.reward = rewards::mixed_reward(cfg.reward, fcfg.reward, 0.5,
                                     derive_seed(cfg.train.seed, "mixed-pick"));
  cfg.train.iterations = 6;
  TrainState state = make_train_state(quick_baseline(cfg));
  bool saw_instance = false, saw_dist = false;
  for (int i = 0; i < 12; ++i) {
    StepRecord rec = train_step(state, cfg);
    if (rec.trace_json.empty())

      saw_instance = true;
    else
      saw_dist = true;
  }
  CHECK(saw_instance);
  CHECK(saw_dist);
}
