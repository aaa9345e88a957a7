#include "dragon/demo_select.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "dragon/errors.hpp"
#include "dragon/parallel.hpp"

namespace dragon::select {

std::span<const double> DemoItem::reward_embedding() const {
  return embedding ? std::span<const double>(*embedding) : std::span<const double>(payload);
}

EmbeddingMatrix DemoBatch::embeddings() const {
  if (items.empty()) throw InvalidInput("DemoBatch: empty batch");
  const std::size_t d = items.front().reward_embedding().size();
  if (d == 0) throw InvalidInput("DemoBatch: item without embedding or payload");
  EmbeddingMatrix out(items.size(), d);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto e = items[i].reward_embedding();
    if (e.size() != d) throw InvalidInput("DemoBatch: inconsistent embedding dimensions");
    out.set_row(i, e);
  }
  return out;
}

void require_paired(const DemoBatch& d1, const DemoBatch& d2) {
  if (d1.size() != d2.size() || d1.size() == 0)
    throw InvalidInput("paired batches must have equal non-zero lengths");
  for (std::size_t i = 0; i < d1.size(); ++i)
    if (d1.items[i].condition != d2.items[i].condition)
      throw InvalidInput("paired batches must share conditions; mismatch at index " +
                         std::to_string(i));
}

std::string trace_to_json(const SplitResult& result) {
  nlohmann::json j;
  j["reward_pos"] = result.reward_pos;
  j["reward_neg"] = result.reward_neg;
  j["swaps"] = nlohmann::json::array();
  for (const auto& s : result.swap_trace) {
    j["swaps"].push_back({{"index", s.index},
                          {"reward_before", s.reward_before},
                          {"reward_if_swapped", s.reward_if_swapped},
                          {"accepted", s.accepted}});
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Objectives

FunctionObjective::FunctionObjective(std::function<double(const EmbeddingMatrix&)> fn)
    : fn_(std::move(fn)) {}

void FunctionObjective::reset(const EmbeddingMatrix& selection) {
  selection_ = selection;
  current_ = fn_(selection_);
}

double FunctionObjective::current() const { return current_; }

double FunctionObjective::preview_swap(std::size_t index, std::span<const double> replacement) {
  EmbeddingMatrix copy = selection_;
  copy.set_row(index, replacement);
  return fn_(copy);
}

void FunctionObjective::apply_swap(std::size_t index, std::span<const double> replacement) {
  selection_.set_row(index, replacement);
  current_ = fn_(selection_);
}

FadObjective::FadObjective(rewards::ExemplarSet ref) : ref_(std::move(ref)) { ref_.validate(); }

void FadObjective::reset(const EmbeddingMatrix& selection) {
  selection.validate("FadObjective selection");
  if (selection.rows() < 2) throw InvalidInput("FadObjective: need at least 2 rows");
  if (selection.cols() != ref_.stats.dim())
    throw InvalidInput("FadObjective: dimension does not match reference");
  selection_ = selection;
  const std::size_t d = selection.cols();
  sum_.assign(d, 0.0);
  outer_ = Matrix(d, d);
  for (std::size_t r = 0; r < selection.rows(); ++r) {
    auto row = selection.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      sum_[i] += row[i];
      for (std::size_t j = 0; j < d; ++j) outer_.at(i, j) += row[i] * row[j];
    }
  }
  current_ = eval_with({}, {});
}

double FadObjective::current() const { return current_; }

double FadObjective::eval_with(std::span<const double> removed, std::span<const double> added) const {
  const std::size_t d = sum_.size();
  const double n = static_cast<double>(selection_.rows());
  stats::GaussStats s;
  s.count = selection_.rows();
  s.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double si = sum_[i];
    if (!removed.empty()) si += added[i] - removed[i];
    s.mean[i] = si / n;
  }
  s.cov = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double o = outer_.at(i, j);
      if (!removed.empty()) o += added[i] * added[j] - removed[i] * removed[j];
      s.cov.at(i, j) = (o - n * s.mean[i] * s.mean[j]) / (n - 1.0);
    }
  // One-pass covariance can pick up a whiff of asymmetry from rounding.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 0.5 * (s.cov.at(i, j) + s.cov.at(j, i));
      s.cov.at(i, j) = v;
      s.cov.at(j, i) = v;
    }
  return -stats::frechet_distance(s, ref_.stats);
}

double FadObjective::preview_swap(std::size_t index, std::span<const double> replacement) {
  return eval_with(selection_.row(index), replacement);
}

void FadObjective::apply_swap(std::size_t index, std::span<const double> replacement) {
  current_ = eval_with(selection_.row(index), replacement);
  auto old_row = selection_.row(index);
  const std::size_t d = sum_.size();
  for (std::size_t i = 0; i < d; ++i) {
    sum_[i] += replacement[i] - old_row[i];
    for (std::size_t j = 0; j < d; ++j)
      outer_.at(i, j) += replacement[i] * replacement[j] - old_row[i] * old_row[j];
  }
  selection_.set_row(index, replacement);
}

std::unique_ptr<SetObjective> make_vendi_objective() {
  return std::make_unique<FunctionObjective>(
      [](const EmbeddingMatrix& m) { return rewards::vendi_reward(m); });
}

std::unique_ptr<SetObjective> make_fad_objective(rewards::ExemplarSet ref) {
  return std::make_unique<FadObjective>(std::move(ref));
}

// ---------------------------------------------------------------------------
// Element-wise splits

namespace {

double mean_or(double fallback, const std::vector<double>& v) {
  if (v.empty()) return fallback;
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  return s / static_cast<double>(v.size());
}

}  // namespace

SplitResult split_pairwise(const DemoBatch& d1, const DemoBatch& d2,
                           std::span<const double> rewards1, std::span<const double> rewards2) {
  require_paired(d1, d2);
  if (rewards1.size() != d1.size() || rewards2.size() != d2.size())
    throw InvalidInput("split_pairwise: reward array length mismatch");

  SplitResult out;
  out.d_pos.paired = out.d_neg.paired = true;
  std::vector<double> pos_rewards, neg_rewards;
  for (std::size_t i = 0; i < d1.size(); ++i) {
    const bool d2_wins = rewards2[i] > rewards1[i];  // ties keep d1's item
    const DemoItem& pos = d2_wins ? d2.items[i] : d1.items[i];
    const DemoItem& neg = d2_wins ? d1.items[i] : d2.items[i];
    out.d_pos.items.push_back(pos);
    out.d_neg.items.push_back(neg);
    pos_rewards.push_back(d2_wins ? rewards2[i] : rewards1[i]);
    neg_rewards.push_back(d2_wins ? rewards1[i] : rewards2[i]);
  }
  out.reward_pos = mean_or(0.0, pos_rewards);
  out.reward_neg = mean_or(0.0, neg_rewards);
  return out;
}

SplitResult split_by_batch_mean(const DemoBatch& items, std::span<const double> item_rewards,
                                SplitThreshold threshold) {
  if (items.size() < 2) throw InvalidInput("split_by_batch_mean: need at least 2 items");
  if (item_rewards.size() != items.size())
    throw InvalidInput("split_by_batch_mean: reward array length mismatch");

  const double lo = *std::min_element(item_rewards.begin(), item_rewards.end());
  const double hi = *std::max_element(item_rewards.begin(), item_rewards.end());
  if (lo == hi) throw AllTied("split_by_batch_mean: all rewards identical");

  double thr = 0.0;
  if (threshold == SplitThreshold::kMean) {
    thr = std::accumulate(item_rewards.begin(), item_rewards.end(), 0.0) /
          static_cast<double>(item_rewards.size());
  } else {
    std::vector<double> sorted(item_rewards.begin(), item_rewards.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    thr = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }

  SplitResult out;
  std::vector<double> pos_rewards, neg_rewards;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (item_rewards[i] > thr) {
      out.d_pos.items.push_back(items.items[i]);
      pos_rewards.push_back(item_rewards[i]);
    } else {
      out.d_neg.items.push_back(items.items[i]);
      neg_rewards.push_back(item_rewards[i]);
    }
  }
  out.reward_pos = mean_or(thr, pos_rewards);
  out.reward_neg = mean_or(thr, neg_rewards);
  return out;
}

// ---------------------------------------------------------------------------
// Greedy swapping

namespace {

SplitResult greedy_swap_impl(const DemoBatch& d1, const DemoBatch& d2, SetObjective& objective,
                             std::span<const std::size_t> swap_indices) {
  require_paired(d1, d2);
  const EmbeddingMatrix emb1 = d1.embeddings();
  const EmbeddingMatrix emb2 = d2.embeddings();
  if (emb1.cols() != emb2.cols()) throw InvalidInput("greedy_swap: embedding dim mismatch");

  objective.reset(emb1);
  const double r1 = objective.current();
  objective.reset(emb2);
  const double r2 = objective.current();

  // Line 2 of the greedy algorithm: (D1, D2) if r(D1) > r(D2) else (D2, D1).
  const bool d1_positive = r1 > r2;
  SplitResult out;
  out.d_pos = d1_positive ? d1 : d2;
  out.d_neg = d1_positive ? d2 : d1;
  out.d_pos.paired = out.d_neg.paired = true;
  if (d1_positive) {
    objective.reset(emb1);
  }  // else: objective already holds emb2

  double current = objective.current();
  for (std::size_t idx : swap_indices) {
    if (idx >= d1.size()) throw InvalidInput("greedy_swap: swap index out of range");
    double swapped = 0.0;
    try {
      swapped = objective.preview_swap(idx, out.d_neg.items[idx].reward_embedding());
    } catch (const std::exception& e) {
      throw InvalidInput("greedy_swap: reward evaluation failed at pair index " +
                         std::to_string(idx) + ": " + e.what());
    }
    SwapDecision decision;
    decision.index = idx;
    decision.reward_before = current;
    decision.reward_if_swapped = swapped;
    decision.accepted = swapped > current;  // strict improvement only
    if (decision.accepted) {
      objective.apply_swap(idx, out.d_neg.items[idx].reward_embedding());
      std::swap(out.d_pos.items[idx], out.d_neg.items[idx]);
      current = objective.current();
    }
    out.swap_trace.push_back(decision);
  }
  out.reward_pos = current;

  objective.reset(out.d_neg.embeddings());
  out.reward_neg = objective.current();
  return out;
}

}  // namespace

SplitResult greedy_swap(const DemoBatch& d1, const DemoBatch& d2, SetObjective& objective) {
  std::vector<std::size_t> all(d1.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return greedy_swap_impl(d1, d2, objective, all);
}

std::vector<SplitResult> greedy_swap_sharded(
    const DemoBatch& d1, const DemoBatch& d2,
    const std::function<std::unique_ptr<SetObjective>()>& make_objective,
    const std::vector<std::vector<std::size_t>>& shard_assignments) {
  require_paired(d1, d2);
  std::vector<std::size_t> seen;
  for (const auto& shard : shard_assignments)
    seen.insert(seen.end(), shard.begin(), shard.end());
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> expected(d1.size());
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  if (seen != expected)
    throw InvalidInput("greedy_swap_sharded: shard assignments must partition 0..n-1");

  std::vector<SplitResult> results(shard_assignments.size());
  par::for_each_index(shard_assignments.size(), [&](std::size_t s) {
    auto objective = make_objective();
    results[s] = greedy_swap_impl(d1, d2, *objective, shard_assignments[s]);
  });
  return results;
}

// ---------------------------------------------------------------------------
// Exemplar pruning

namespace {

/// Sufficient statistics over a candidate subset, supporting O(d^2)
/// leave-one-out / swap evaluation.
struct SubsetStats {
  const EmbeddingMatrix* all = nullptr;
  const rewards::ExemplarSet* ref = nullptr;
  std::vector<double> sum;
  Matrix outer;
  std::size_t n = 0;

  void build(const EmbeddingMatrix& candidates, const rewards::ExemplarSet& reference,
             std::span<const std::size_t> indices) {
    all = &candidates;
    ref = &reference;
    const std::size_t d = candidates.cols();
    sum.assign(d, 0.0);
    outer = Matrix(d, d);
    n = indices.size();
    for (std::size_t idx : indices) add_row(candidates.row(idx), 1.0);
  }

  void add_row(std::span<const double> row, double sign) {
    const std::size_t d = sum.size();
    for (std::size_t i = 0; i < d; ++i) {
      sum[i] += sign * row[i];
      for (std::size_t j = 0; j < d; ++j) outer.at(i, j) += sign * row[i] * row[j];
    }
  }

  /// FAD of the subset with optional adjustments applied virtually.
  double fad(std::span<const double> minus, std::span<const double> plus, std::size_t n_adjust) const {
    const std::size_t d = sum.size();
    const double m = static_cast<double>(n_adjust);
    stats::GaussStats s;
    s.count = n_adjust;
    s.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      double si = sum[i];
      if (!minus.empty()) si -= minus[i];
      if (!plus.empty()) si += plus[i];
      s.mean[i] = si / m;
    }
    s.cov = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double o = outer.at(i, j);
        if (!minus.empty()) o -= minus[i] * minus[j];
        if (!plus.empty()) o += plus[i] * plus[j];
        s.cov.at(i, j) = (o - m * s.mean[i] * s.mean[j]) / (m - 1.0);
      }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) {
        const double v = 0.5 * (s.cov.at(i, j) + s.cov.at(j, i));
        s.cov.at(i, j) = v;
        s.cov.at(j, i) = v;
      }
    return stats::frechet_distance(s, ref->stats);
  }
};

double subset_fad(const EmbeddingMatrix& candidates, const rewards::ExemplarSet& ref,
                  std::span<const std::size_t> indices) {
  return stats::frechet_distance(stats::accumulate_stats(candidates.take_rows(indices)), ref.stats);
}

/// One accept-if-improves pass trying to swap each pool item into the
/// selection. Mutates selection/pool; returns the final FAD.
double swap_pass(const EmbeddingMatrix& candidates, const rewards::ExemplarSet& ref,
                 std::vector<std::size_t>& selection, std::vector<std::size_t>& pool) {
  SubsetStats stats;
  stats.build(candidates, ref, selection);
  double current = stats.fad({}, {}, selection.size());
  for (std::size_t& pooled : pool) {
    double best = current;
    std::size_t best_pos = selection.size();
    for (std::size_t pos = 0; pos < selection.size(); ++pos) {
      const double fad = stats.fad(candidates.row(selection[pos]), candidates.row(pooled),
                                   selection.size());
      if (fad < best) {
        best = fad;
        best_pos = pos;
      }
    }
    if (best_pos != selection.size()) {
      stats.add_row(candidates.row(selection[best_pos]), -1.0);
      stats.add_row(candidates.row(pooled), 1.0);
      std::swap(selection[best_pos], pooled);
      current = best;
    }
  }
  return current;
}

}  // namespace

std::vector<std::size_t> prune_exemplars(const EmbeddingMatrix& candidates,
                                         const rewards::ExemplarSet& ref,
                                         std::size_t target_size) {
  candidates.validate("prune_exemplars candidates");
  ref.validate();
  if (candidates.cols() != ref.stats.dim())
    throw InvalidInput("prune_exemplars: dimension does not match reference");
  if (target_size < 2 || target_size > candidates.rows())
    throw InvalidInput("prune_exemplars: target size must be in [2, rows]");

  std::vector<std::size_t> selection(candidates.rows());
  std::iota(selection.begin(), selection.end(), std::size_t{0});
  std::vector<std::size_t> removed;

  // Best-improving removals, one per pass, down to the target size.
  SubsetStats stats;
  stats.build(candidates, ref, selection);
  while (selection.size() > target_size) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_pos = 0;
    for (std::size_t pos = 0; pos < selection.size(); ++pos) {
      const double fad = stats.fad(candidates.row(selection[pos]), {}, selection.size() - 1);
      if (fad < best) {
        best = fad;
        best_pos = pos;
      }
    }
    stats.add_row(candidates.row(selection[best_pos]), -1.0);
    stats.n -= 1;
    removed.push_back(selection[best_pos]);
    selection.erase(selection.begin() + static_cast<std::ptrdiff_t>(best_pos));
  }

  // One swap pass against the removed items.
  double greedy_fad = swap_pass(candidates, ref, selection, removed);

  // The contract promises we never do worse than simply taking the first
  // target_size candidates; fall back to refining that baseline if the
  // removal path lost to it.
  std::vector<std::size_t> baseline(target_size);
  std::iota(baseline.begin(), baseline.end(), std::size_t{0});
  const double baseline_fad = subset_fad(candidates, ref, baseline);
  if (greedy_fad > baseline_fad) {
    std::vector<std::size_t> pool;
    for (std::size_t i = target_size; i < candidates.rows(); ++i) pool.push_back(i);
    const double refined = swap_pass(candidates, ref, baseline, pool);
    if (refined < greedy_fad) selection = baseline;
  }

  std::sort(selection.begin(), selection.end());
  return selection;
}

}  // namespace dragon::select
