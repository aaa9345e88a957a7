// Command-line front end: metric computation over embedding files,
// demonstration selection, training runs, and evaluation reports.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "dragon/config.hpp"
#include "dragon/demo_select.hpp"
#include "dragon/diversity.hpp"
#include "dragon/errors.hpp"
#include "dragon/eval_stats.hpp"
#include "dragon/gauss_stats.hpp"
#include "dragon/io.hpp"
#include "dragon/rewards.hpp"
#include "dragon/toy_diffusion.hpp"
#include "dragon/trainer.hpp"

namespace {

using namespace dragon;

stats::GaussStats ref_stats_from_flags(const std::string& ref_file,
                                       const std::string& ref_stats_file) {
  if (!ref_stats_file.empty()) return io::load_stats(ref_stats_file);
  if (!ref_file.empty()) return stats::accumulate_stats(io::load_embeddings(ref_file));
  throw InvalidInput("need --ref or --ref-stats");
}

void emit(const std::string& text, const std::string& out_file) {
  if (out_file.empty()) {
    std::cout << text;
  } else {
    io::write_file(out_file, text);
  }
}

select::DemoBatch batch_from_embeddings(const EmbeddingMatrix& m, bool paired) {
  select::DemoBatch batch;
  batch.paired = paired;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    select::DemoItem item;
    item.condition = static_cast<std::int64_t>(i);
    item.payload.assign(m.row(i).begin(), m.row(i).end());
    batch.items.push_back(std::move(item));
  }
  return batch;
}

int run(int argc, char** argv) {
  CLI::App app{"dragon: distributional-reward fine-tuning toolkit"};
  app.require_subcommand(1);
  std::uint64_t master_seed = 0;
  auto* seed_opt = app.add_option("--seed", master_seed,
                                  "master seed; component streams derive from it by name hashing");

  // --- stats ---
  auto* cmd_stats = app.add_subcommand("stats", "Gaussian statistics of an embedding file");
  std::string stats_in, stats_out;
  cmd_stats->add_option("--embeddings", stats_in, "embedding file")->required();
  cmd_stats->add_option("--out", stats_out, "write JSON here instead of stdout");

  // --- fad ---
  auto* cmd_fad = app.add_subcommand("fad", "dataset Frechet distance between two embedding sets");
  std::string fad_gen, fad_ref, fad_ref_stats;
  cmd_fad->add_option("--gen", fad_gen, "generated embeddings")->required();
  cmd_fad->add_option("--ref", fad_ref, "reference embeddings");
  cmd_fad->add_option("--ref-stats", fad_ref_stats, "reference statistics JSON");

  // --- persong-fad ---
  auto* cmd_psf = app.add_subcommand("persong-fad",
                                     "per-item Frechet distance of one item's frame embeddings");
  std::string psf_item, psf_ref, psf_ref_stats;
  cmd_psf->add_option("--item", psf_item, "frame embeddings of one item")->required();
  cmd_psf->add_option("--ref", psf_ref, "reference embeddings");
  cmd_psf->add_option("--ref-stats", psf_ref_stats, "reference statistics JSON");

  // --- vendi ---
  auto* cmd_vendi = app.add_subcommand("vendi", "Vendi diversity score of an embedding file");
  std::string vendi_in;
  cmd_vendi->add_option("--embeddings", vendi_in, "embedding file")->required();

  // --- select ---
  auto* cmd_select = app.add_subcommand("select", "construct positive/negative demonstration sets");
  std::string sel_d1, sel_d2, sel_mode = "pairwise", sel_rewards1, sel_rewards2, sel_rewards;
  std::string sel_reward_kind = "fad", sel_ref, sel_ref_stats, sel_out;
  cmd_select->add_option("--d1", sel_d1, "first batch embeddings")->required();
  cmd_select->add_option("--d2", sel_d2, "second batch embeddings (paired modes)");
  cmd_select->add_option("--mode", sel_mode, "pairwise | mean | median | greedy");
  cmd_select->add_option("--rewards1", sel_rewards1, "per-item rewards for --d1");
  cmd_select->add_option("--rewards2", sel_rewards2, "per-item rewards for --d2");
  cmd_select->add_option("--rewards", sel_rewards, "per-item rewards (mean/median modes)");
  cmd_select->add_option("--reward", sel_reward_kind, "greedy objective: fad | vendi");
  cmd_select->add_option("--ref", sel_ref, "reference embeddings (greedy fad)");
  cmd_select->add_option("--ref-stats", sel_ref_stats, "reference statistics JSON (greedy fad)");
  cmd_select->add_option("--out", sel_out, "write JSON here instead of stdout");

  // --- prune ---
  auto* cmd_prune = app.add_subcommand("prune", "greedy exemplar-set pruning to a target size");
  std::string prune_in, prune_ref, prune_ref_stats, prune_out;
  std::size_t prune_target = 0;
  cmd_prune->add_option("--candidates", prune_in, "candidate embeddings")->required();
  cmd_prune->add_option("--ref", prune_ref, "reference embeddings");
  cmd_prune->add_option("--ref-stats", prune_ref_stats, "reference statistics JSON");
  cmd_prune->add_option("--target", prune_target, "target selection size")->required();
  cmd_prune->add_option("--out", prune_out, "write JSON here instead of stdout");

  // --- pretrain ---
  auto* cmd_pretrain = app.add_subcommand("pretrain", "pretrain the toy denoiser on the task");
  std::string pre_config, pre_out;
  cmd_pretrain->add_option("--config", pre_config, "experiment config")->required();
  cmd_pretrain->add_option("--out", pre_out, "output directory")->required();

  // --- train ---
  auto* cmd_train = app.add_subcommand("train", "run the on-policy fine-tuning loop");
  std::string train_config, train_out;
  cmd_train->add_option("--config", train_config, "experiment config")->required();
  cmd_train->add_option("--out", train_out, "artifact directory")->required();

  // --- eval ---
  auto* cmd_eval = app.add_subcommand("eval", "compare two checkpoints under a reward config");
  std::string eval_model, eval_baseline, eval_prompts, eval_rewards, eval_out;
  cmd_eval->add_option("--model", eval_model, "model checkpoint")->required();
  cmd_eval->add_option("--baseline", eval_baseline, "baseline checkpoint")->required();
  cmd_eval->add_option("--prompts", eval_prompts, "prompt file")->required();
  cmd_eval->add_option("--rewards", eval_rewards, "config with [task] and [reward]")->required();
  cmd_eval->add_option("--out", eval_out, "report path (default report.json)");

  // --- report ---
  auto* cmd_report = app.add_subcommand("report", "summarize a report.json");
  std::string report_in, report_csv;
  cmd_report->add_option("--in", report_in, "report JSON")->required();
  cmd_report->add_option("--csv", report_csv, "also write the series as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2; --help exits 0
  }
  const bool seed_given = seed_opt->count() > 0;
  const std::optional<std::uint64_t> seed_override =
      seed_given ? std::optional<std::uint64_t>(master_seed) : std::nullopt;

  if (cmd_stats->parsed()) {
    emit(io::stats_to_json_string(stats::accumulate_stats(io::load_embeddings(stats_in))),
         stats_out);
    return 0;
  }

  if (cmd_fad->parsed()) {
    const auto gen = stats::accumulate_stats(io::load_embeddings(fad_gen));
    const auto ref = ref_stats_from_flags(fad_ref, fad_ref_stats);
    std::printf("%.6f\n", stats::frechet_distance(gen, ref));
    return 0;
  }

  if (cmd_psf->parsed()) {
    rewards::ExemplarSet ref{ref_stats_from_flags(psf_ref, psf_ref_stats), "file"};
    rewards::ItemFrames item{io::load_embeddings(psf_item)};
    std::printf("%.6f\n", rewards::per_item_fad(item, ref));
    return 0;
  }

  if (cmd_vendi->parsed()) {
    std::printf("%.6f\n", diversity::vendi_score(io::load_embeddings(vendi_in)));
    return 0;
  }

  if (cmd_select->parsed()) {
    nlohmann::json j;
    if (sel_mode == "pairwise") {
      const auto d1 = batch_from_embeddings(io::load_embeddings(sel_d1), true);
      const auto d2 = batch_from_embeddings(io::load_embeddings(sel_d2), true);
      const auto r1 = io::load_scalars(sel_rewards1);
      const auto r2 = io::load_scalars(sel_rewards2);
      const auto split = select::split_pairwise(d1, d2, r1, r2);
      nlohmann::json pos_from = nlohmann::json::array();
      for (std::size_t i = 0; i < split.d_pos.size(); ++i)
        pos_from.push_back(split.d_pos.items[i].payload == d1.items[i].payload ? "d1" : "d2");
      j = {{"mode", "pairwise"}, {"pos_from", pos_from}, {"reward_pos", split.reward_pos},
           {"reward_neg", split.reward_neg}};
    } else if (sel_mode == "mean" || sel_mode == "median") {
      const auto pool = batch_from_embeddings(io::load_embeddings(sel_d1), false);
      const auto r = io::load_scalars(sel_rewards);
      const auto split = select::split_by_batch_mean(
          pool, r,
          sel_mode == "mean" ? select::SplitThreshold::kMean : select::SplitThreshold::kMedian);
      nlohmann::json pos = nlohmann::json::array(), neg = nlohmann::json::array();
      for (const auto& item : split.d_pos.items) pos.push_back(item.condition);
      for (const auto& item : split.d_neg.items) neg.push_back(item.condition);
      j = {{"mode", sel_mode}, {"positive_indices", pos}, {"negative_indices", neg},
           {"reward_pos", split.reward_pos}, {"reward_neg", split.reward_neg}};
    } else if (sel_mode == "greedy") {
      const auto d1 = batch_from_embeddings(io::load_embeddings(sel_d1), true);
      const auto d2 = batch_from_embeddings(io::load_embeddings(sel_d2), true);
      std::unique_ptr<select::SetObjective> objective;
      if (sel_reward_kind == "vendi") {
        objective = select::make_vendi_objective();
      } else if (sel_reward_kind == "fad") {
        objective = select::make_fad_objective(
            rewards::ExemplarSet{ref_stats_from_flags(sel_ref, sel_ref_stats), "file"});
      } else {
        throw InvalidInput("select: --reward must be fad or vendi");
      }
      const auto split = select::greedy_swap(d1, d2, *objective);
      j = nlohmann::json::parse(select::trace_to_json(split));
      j["mode"] = "greedy";
      nlohmann::json pos_from = nlohmann::json::array();
      for (std::size_t i = 0; i < split.d_pos.size(); ++i)
        pos_from.push_back(split.d_pos.items[i].payload == d1.items[i].payload ? "d1" : "d2");
      j["pos_from"] = pos_from;
    } else {
      throw InvalidInput("select: unknown --mode '" + sel_mode + "'");
    }
    emit(j.dump(2) + "\n", sel_out);
    return 0;
  }

  if (cmd_prune->parsed()) {
    const auto candidates = io::load_embeddings(prune_in);
    rewards::ExemplarSet ref{ref_stats_from_flags(prune_ref, prune_ref_stats), "file"};
    std::vector<std::size_t> all(candidates.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const double before =
        stats::frechet_distance(stats::accumulate_stats(candidates), ref.stats);
    const auto selected = select::prune_exemplars(candidates, ref, prune_target);
    const double after = stats::frechet_distance(
        stats::accumulate_stats(candidates.take_rows(selected)), ref.stats);
    nlohmann::json j = {{"selected", selected}, {"fad_before", before}, {"fad_after", after}};
    emit(j.dump(2) + "\n", prune_out);
    return 0;
  }

  if (cmd_pretrain->parsed()) {
    auto cfg = train::load_experiment_config(config::Config::parse_file(pre_config), seed_override);
    toy::DenoiserModel init = toy::DenoiserModel::init(
        cfg.task.dim, cfg.hidden, cfg.task.conditions, toy::NoiseSchedule{},
        derive_seed(cfg.train.seed, "model-init"));
    toy::PretrainResult result = toy::pretrain(std::move(init), cfg.task, cfg.pretrain);
    std::filesystem::create_directories(pre_out);
    toy::save_checkpoint(std::filesystem::path(pre_out) / "checkpoint.json", result.model);
    std::ostringstream csv;
    csv.precision(17);
    csv << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
      csv << i << ',' << result.loss_curve[i] << '\n';
    io::write_file(std::filesystem::path(pre_out) / "loss.csv", csv.str());
    std::printf("pretrain: holdout loss %.6f -> %.6f (%zu steps)\n", result.holdout_before,
                result.holdout_after, result.loss_curve.size());
    return 0;
  }

  if (cmd_train->parsed()) {
    auto cfg = train::load_experiment_config(config::Config::parse_file(train_config),
                                             seed_override);
    cfg.config_hash = fnv1a64(io::read_file(train_config));
    const std::filesystem::path out_dir(train_out);
    train::RunArtifacts artifacts = train::run_experiment(cfg, out_dir);
    train::write_artifacts(out_dir, cfg, artifacts);
    const auto& final_rec = artifacts.evals.back();
    std::printf("train: %d iterations, final metric %.6f (baseline %.6f), win rate %.4f\n",
                cfg.train.iterations, final_rec.model_metric, final_rec.baseline_metric,
                final_rec.win_rate);
    return 0;
  }

  if (cmd_eval->parsed()) {
    auto cfg = train::load_experiment_config(config::Config::parse_file(eval_rewards),
                                             seed_override);
    const auto model = toy::load_checkpoint(eval_model);
    const auto baseline = toy::load_checkpoint(eval_baseline);
    if (model.data_dim != baseline.data_dim || model.conditions != baseline.conditions)
      throw InvalidInput("eval: model and baseline checkpoints disagree in shape");
    if (model.data_dim != cfg.task.dim || model.conditions != cfg.task.conditions)
      throw InvalidInput("eval: checkpoint shape does not match the task config");
    const auto prompts = io::load_prompts(eval_prompts);
    for (const auto& p : prompts)
      if (p.condition < 0 || p.condition >= cfg.task.conditions)
        throw InvalidInput("eval: prompt condition " + std::to_string(p.condition) +
                           " outside task range");
    const std::uint64_t seed = seed_given ? master_seed : cfg.train.seed;
    nlohmann::json report =
        train::evaluate_pair(model, baseline, cfg.task, cfg.reward, prompts, cfg.eval,
                             derive_seed(seed, "eval"));
    report["version"] = 1;
    report["kind"] = "eval-report";
    report["seed"] = seed;
    report["inputs"] = {{"model", eval_model},
                        {"model_hash", io::hash_file(eval_model)},
                        {"baseline", eval_baseline},
                        {"baseline_hash", io::hash_file(eval_baseline)},
                        {"prompts", eval_prompts},
                        {"prompts_hash", io::hash_file(eval_prompts)},
                        {"rewards", eval_rewards},
                        {"rewards_hash", io::hash_file(eval_rewards)}};
    emit(report.dump(2) + "\n", eval_out.empty() ? "report.json" : eval_out);
    return 0;
  }

  if (cmd_report->parsed()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(report_in));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(report_in + ": invalid JSON: " + std::string(e.what()));
    }
    std::printf("report: %s\n", j.value("kind", std::string("unknown")).c_str());
    if (j.contains("final_eval")) {
      const auto& fe = j["final_eval"];
      if (fe.contains("reward"))
        std::printf("  target reward: model %.6f vs baseline %.6f, win rate %.4f\n",
                    fe["reward"]["model_mean"].get<double>(),
                    fe["reward"]["baseline_mean"].get<double>(),
                    fe["reward"]["win_rate"].get<double>());
      if (fe.contains("dataset")) {
        std::printf("  dataset reward: model %.6f vs baseline %.6f\n",
                    fe["dataset"]["reward_model"].get<double>(),
                    fe["dataset"]["reward_baseline"].get<double>());
        if (fe["dataset"].contains("bootstrap_win_rate"))
          std::printf("  bootstrap win rate: %.4f\n",
                      fe["dataset"]["bootstrap_win_rate"].get<double>());
      }
      if (fe.contains("vendi"))
        std::printf("  vendi: model %.6f vs baseline %.6f\n", fe["vendi"]["model"].get<double>(),
                    fe["vendi"]["baseline"].get<double>());
    }
    if (j.contains("reward"))
      std::printf("  target reward: model %.6f vs baseline %.6f, win rate %.4f\n",
                  j["reward"]["model_mean"].get<double>(),
                  j["reward"]["baseline_mean"].get<double>(), j["reward"]["win_rate"].get<double>());
    if (j.contains("dataset") && j["dataset"].contains("bootstrap_win_rate"))
      std::printf("  bootstrap win rate: %.4f\n", j["dataset"]["bootstrap_win_rate"].get<double>());
    if (!report_csv.empty() && j.contains("series")) {
      std::ostringstream csv;
      csv.precision(17);
      csv << "iter,reward_pos,reward_neg,batch_mean,loss,grad_norm\n";
      const auto& s = j["series"];
      for (std::size_t i = 0; i < s["loss"].size(); ++i)
        csv << i << ',' << s["reward_pos"][i].get<double>() << ','
            << s["reward_neg"][i].get<double>() << ',' << s["batch_mean"][i].get<double>() << ','
            << s["loss"][i].get<double>() << ',' << s["grad_norm"][i].get<double>() << '\n';
      io::write_file(report_csv, csv.str());
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dragon::InvalidInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const dragon::AllTied& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
