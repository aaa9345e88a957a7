#include "dragon/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "dragon/diversity.hpp"
#include "dragon/errors.hpp"
#include "dragon/rng.hpp"

namespace dragon::rewards {

void ExemplarSet::validate() const {
  stats.validate();
  if (stats.count < 2) throw InvalidInput("ExemplarSet: need at least 2 reference samples");
}

void PreferenceModel::validate() const {
  train_embeddings.validate("PreferenceModel embeddings");
  if (train_labels.size() != train_embeddings.rows())
    throw InvalidInput("PreferenceModel: label count does not match training rows");
  if (!(bandwidth > 0.0)) throw InvalidInput("PreferenceModel: bandwidth must be > 0");
  for (double y : train_labels)
    if (!std::isfinite(y)) throw InvalidInput("PreferenceModel: non-finite label");
}

void RewardSpec::validate() const {
  int payloads = 0;
  payloads += exemplar.has_value();
  payloads += condition_refs.has_value();
  payloads += preference.has_value();
  payloads += vendi ? 1 : 0;
  payloads += mixed.has_value();
  if (payloads != 1) throw InvalidInput("RewardSpec '" + name + "': exactly one payload required");

  if (mixed) {
    if (!mixed->a || !mixed->b) throw InvalidInput("RewardSpec: mixed arms missing");
    if (!(mixed->p >= 0.0 && mixed->p <= 1.0))
      throw InvalidInput("RewardSpec: mixed probability must be in [0,1]");
    mixed->a->validate();
    mixed->b->validate();
    return;
  }
  switch (kind) {
    case RewardKind::kInstance:
      if (!preference) throw InvalidInput("RewardSpec: instance reward needs a preference model");
      preference->validate();
      break;
    case RewardKind::kInstanceToInstance:
      if (!condition_refs) throw InvalidInput("RewardSpec: cosine reward needs reference embeddings");
      condition_refs->validate("RewardSpec condition refs");
      break;
    case RewardKind::kInstanceToDistribution:
      if (!exemplar) throw InvalidInput("RewardSpec: per-item FAD needs an exemplar set");
      exemplar->validate();
      break;
    case RewardKind::kDistToDist:
      if (vendi) break;
      if (!exemplar) throw InvalidInput("RewardSpec: dataset FAD needs an exemplar set");
      exemplar->validate();
      break;
  }
}

const RewardSpec& RewardSpec::resolve(std::uint64_t iteration) const {
  if (!mixed) return *this;
  Rng rng(mix_seed(mixed->seed, iteration));
  const RewardSpec& picked = rng.uniform01() < mixed->p ? *mixed->a : *mixed->b;
  return picked.resolve(iteration);
}

RewardSpec mixed_reward(RewardSpec a, RewardSpec b, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("mixed_reward: p must be in [0,1]");
  RewardSpec out;
  out.kind = RewardKind::kInstance;  // placeholder; resolve() supplies the real kind
  out.direction = Direction::kMaximize;
  out.name = "mixed(" + a.name + "," + b.name + ")";
  MixedReward m;
  m.a = std::make_shared<RewardSpec>(std::move(a));
  m.b = std::make_shared<RewardSpec>(std::move(b));
  m.p = p;
  m.seed = seed;
  out.mixed = std::move(m);
  out.validate();
  return out;
}

double cosine_reward(std::span<const double> gen, std::span<const double> ref) {
  if (gen.size() != ref.size()) throw InvalidInput("cosine_reward: dimension mismatch");
  const double ng = norm2(gen);
  const double nr = norm2(ref);
  if (!(ng > 0.0) || !(nr > 0.0)) throw InvalidInput("cosine_reward: zero vector");
  return std::max(0.0, dot(gen, ref) / (ng * nr));
}

double per_item_fad(const ItemFrames& item, const ExemplarSet& ref) {
  if (item.frames.cols() != ref.stats.dim())
    throw InvalidInput("per_item_fad: frame dimension does not match reference");
  return stats::frechet_distance(stats::accumulate_stats(item.frames), ref.stats);
}

double dataset_fad_reward(const EmbeddingMatrix& batch, const ExemplarSet& ref) {
  if (batch.rows() < 2) throw InvalidInput("dataset_fad_reward: need at least 2 rows");
  if (batch.cols() != ref.stats.dim())
    throw InvalidInput("dataset_fad_reward: dimension does not match reference");
  return -stats::frechet_distance(stats::accumulate_stats(batch), ref.stats);
}

double vendi_reward(const EmbeddingMatrix& batch) { return diversity::vendi_score(batch); }

double preference_predict(const PreferenceModel& model, std::span<const double> query) {
  if (query.size() != model.train_embeddings.cols())
    throw InvalidInput("preference_predict: query dimension mismatch");
  const std::size_t n = model.train_embeddings.rows();
  const double inv = 1.0 / (2.0 * model.bandwidth * model.bandwidth);
  double wsum = 0.0, wy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(-squared_distance(query, model.train_embeddings.row(i)) * inv);
    wsum += w;
    wy += w * model.train_labels[i];
  }
  if (wsum <= 0.0) {
    // Documented fallback when every kernel weight underflows.
    double mean = 0.0;
    for (double y : model.train_labels) mean += y;
    return mean / static_cast<double>(n);
  }
  return wy / wsum;
}

double median_heuristic_bandwidth(const EmbeddingMatrix& train) {
  const std::size_t n = train.rows();
  if (n < 2) return 1.0;
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist.push_back(std::sqrt(squared_distance(train.row(i), train.row(j))));
  std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
  const double med = dist[dist.size() / 2];
  return med > 0.0 ? med : 1.0;
}

}  // namespace dragon::rewards
