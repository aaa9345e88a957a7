#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dragon/rewards.hpp"

namespace dragon::select {

struct DemoItem {
  std::int64_t condition = 0;
  std::uint64_t seed = 0;
  std::vector<double> payload;                     // the generated sample
  std::optional<rewards::ItemFrames> frames;       // for per-item FAD
  std::optional<std::vector<double>> embedding;    // reward-space embedding

  std::span<const double> reward_embedding() const;
};

/// One batch of demonstrations (D1, D2, D+ or D-). When `paired` is set, the
/// batch is index-aligned with its partner: same conditions per index.
struct DemoBatch {
  std::vector<DemoItem> items;
  bool paired = false;

  std::size_t size() const { return items.size(); }
  /// Stacks reward embeddings row-wise. Throws if any item lacks one.
  EmbeddingMatrix embeddings() const;
};

void require_paired(const DemoBatch& d1, const DemoBatch& d2);

struct SwapDecision {
  std::size_t index = 0;
  double reward_before = 0.0;       // r_dist(D+) before the tentative swap
  double reward_if_swapped = 0.0;   // r_dist of the swapped candidate
  bool accepted = false;
};

struct SplitResult {
  DemoBatch d_pos;
  DemoBatch d_neg;
  double reward_pos = 0.0;
  double reward_neg = 0.0;
  std::vector<SwapDecision> swap_trace;  // empty for element-wise splits
};

std::string trace_to_json(const SplitResult& result);

/// Distributional reward evaluated on a mutable selection of embedding rows.
/// preview_swap reports the reward if row `index` were replaced, without
/// committing; apply_swap commits the replacement.
class SetObjective {
 public:
  virtual ~SetObjective() = default;
  virtual void reset(const EmbeddingMatrix& selection) = 0;
  virtual double current() const = 0;
  virtual double preview_swap(std::size_t index, std::span<const double> replacement) = 0;
  virtual void apply_swap(std::size_t index, std::span<const double> replacement) = 0;
};

/// Recomputes the wrapped function from scratch on every evaluation. Fine
/// for Vendi-sized batches and for oracle comparisons.
class FunctionObjective final : public SetObjective {
 public:
  explicit FunctionObjective(std::function<double(const EmbeddingMatrix&)> fn);
  void reset(const EmbeddingMatrix& selection) override;
  double current() const override;
  double preview_swap(std::size_t index, std::span<const double> replacement) override;
  void apply_swap(std::size_t index, std::span<const double> replacement) override;

 private:
  std::function<double(const EmbeddingMatrix&)> fn_;
  EmbeddingMatrix selection_;
  double current_ = 0.0;
};

/// Negated dataset FAD to a fixed reference, with cached sufficient
/// statistics (row sum and outer-product sum) so a swap costs O(d^2) updates
/// plus one O(d^3) square root instead of a full re-accumulation.
class FadObjective final : public SetObjective {
 public:
  explicit FadObjective(rewards::ExemplarSet ref);
  void reset(const EmbeddingMatrix& selection) override;
  double current() const override;
  double preview_swap(std::size_t index, std::span<const double> replacement) override;
  void apply_swap(std::size_t index, std::span<const double> replacement) override;

 private:
  double eval_with(std::span<const double> removed, std::span<const double> added) const;
  rewards::ExemplarSet ref_;
  EmbeddingMatrix selection_;
  std::vector<double> sum_;    // column sums
  Matrix outer_;               // sum of x x^T
  double current_ = 0.0;
};

std::unique_ptr<SetObjective> make_vendi_objective();
std::unique_ptr<SetObjective> make_fad_objective(rewards::ExemplarSet ref);

/// Element-wise split of two paired batches: per index the higher-reward
/// item goes to d_pos; ties keep d1's item. reward_pos/neg report the mean
/// instance reward of each side.
SplitResult split_pairwise(const DemoBatch& d1, const DemoBatch& d2,
                           std::span<const double> rewards1, std::span<const double> rewards2);

enum class SplitThreshold { kMean, kMedian };

/// Unpaired split of one batch against its mean (default) or median reward.
/// Throws AllTied when every reward is identical.
SplitResult split_by_batch_mean(const DemoBatch& items, std::span<const double> item_rewards,
                                SplitThreshold threshold = SplitThreshold::kMean);

/// Greedy contrastive construction of (D+, D-): start from the higher-reward
/// batch, then one pass of tentative pair swaps, each accepted only on
/// strict improvement. Guarantees reward_pos >= max(r(D1), r(D2)).
SplitResult greedy_swap(const DemoBatch& d1, const DemoBatch& d2, SetObjective& objective);

/// Sharded variant: every shard sees the full batches but only attempts
/// swaps at its own indices. shard_assignments must partition 0..n-1.
/// Shards run concurrently on independent objective instances.
std::vector<SplitResult> greedy_swap_sharded(
    const DemoBatch& d1, const DemoBatch& d2,
    const std::function<std::unique_ptr<SetObjective>()>& make_objective,
    const std::vector<std::vector<std::size_t>>& shard_assignments);

/// Greedy exemplar pruning: best-improving removals down to target_size,
/// then one swap pass against the removed items. The returned selection's
/// dataset FAD never exceeds that of the first target_size candidates.
std::vector<std::size_t> prune_exemplars(const EmbeddingMatrix& candidates,
                                         const rewards::ExemplarSet& ref, std::size_t target_size);

}  // namespace dragon::select
