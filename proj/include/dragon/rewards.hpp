#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "dragon/gauss_stats.hpp"
#include "dragon/matrix.hpp"

namespace dragon::rewards {

/// Where a reward gets its signal from. Every reward is exposed as
/// "larger is better"; metrics that are naturally minimized (FAD) are
/// negated at this boundary.
enum class RewardKind {
  kInstance,                // preference model on a single embedding
  kInstanceToInstance,      // clipped cosine against a per-condition reference
  kInstanceToDistribution,  // per-item FAD against reference statistics
  kDistToDist,              // dataset FAD (with exemplar) or Vendi (reference-free)
};

enum class Direction { kMaximize, kMinimize };

/// Reference statistics plus a free-form modality label. The label is
/// metadata only; a reference may come from a different synthetic channel
/// than the generations it scores.
struct ExemplarSet {
  stats::GaussStats stats;
  std::string modality_tag;

  /// Distributional references need at least two samples behind them.
  void validate() const;
};

/// Per-item sequence of frame embeddings standing in for chunked encodings
/// of one generation.
struct ItemFrames {
  EmbeddingMatrix frames;
};

/// Kernel-regression preference head: stored training embeddings and their
/// normalized labels, evaluated with a Gaussian kernel.
struct PreferenceModel {
  EmbeddingMatrix train_embeddings;
  std::vector<double> train_labels;
  double bandwidth = 1.0;

  void validate() const;
};

struct RewardSpec;

/// Deterministic per-iteration choice between two reward specs.
struct MixedReward {
  std::shared_ptr<const RewardSpec> a;
  std::shared_ptr<const RewardSpec> b;
  double p = 0.5;  // probability of picking a
  std::uint64_t seed = 0;
};

struct RewardSpec {
  RewardKind kind = RewardKind::kInstance;
  Direction direction = Direction::kMaximize;

  // Exactly one payload per spec (vendi counts as the payload-free flavor
  // of kDistToDist).
  std::optional<ExemplarSet> exemplar;
  std::optional<EmbeddingMatrix> condition_refs;  // one row per condition id
  std::optional<PreferenceModel> preference;
  bool vendi = false;
  std::optional<MixedReward> mixed;

  std::string name = "reward";

  void validate() const;
  bool is_instance_level() const { return kind != RewardKind::kDistToDist; }

  /// Resolves a mixed spec for one training iteration; plain specs return
  /// themselves. The pick is keyed by (seed, iteration) only.
  const RewardSpec& resolve(std::uint64_t iteration) const;
};

RewardSpec mixed_reward(RewardSpec a, RewardSpec b, double p, std::uint64_t seed);

/// Cosine similarity clipped to [0, 1]. Zero-norm vectors throw InvalidInput.
double cosine_reward(std::span<const double> gen, std::span<const double> ref);

/// Frechet distance between the item's frame statistics and the reference
/// statistics. Single-frame items fit a zero covariance.
double per_item_fad(const ItemFrames& item, const ExemplarSet& ref);

/// Negated dataset Frechet distance of a generation batch (>= 2 rows) to the
/// reference, so that maximizing it minimizes FAD.
double dataset_fad_reward(const EmbeddingMatrix& batch, const ExemplarSet& ref);

/// Vendi diversity of a generation batch; maximize.
double vendi_reward(const EmbeddingMatrix& batch);

/// Nadaraya-Watson prediction with Gaussian weights
/// exp(-||q - x_i||^2 / (2 bw^2)). If every weight underflows to zero the
/// prediction falls back to the unweighted label mean.
double preference_predict(const PreferenceModel& model, std::span<const double> query);

/// Median of pairwise training distances; the default bandwidth.
double median_heuristic_bandwidth(const EmbeddingMatrix& train);

}  // namespace dragon::rewards
