#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dragon/gauss_stats.hpp"
#include "dragon/matrix.hpp"

namespace dragon::evalstats {

struct PairedScores {
  std::vector<double> model;
  std::vector<double> baseline;
  bool higher_better = true;
};

/// Fraction of pairs the model wins in the configured direction; ties count
/// one half, so reversing the roles maps w to 1 - w exactly.
double win_rate(const PairedScores& scores);

/// The bootstrap index multiset for one draw; shared between the models
/// being compared within that draw.
std::vector<std::size_t> bootstrap_indices(std::uint64_t seed, std::size_t draw, std::size_t rows,
                                           std::size_t subset);

/// Dataset-FAD bootstrap win rate: n_boot draws of `subset` indices with
/// replacement (identical indices for both models per draw), FAD of each
/// subset against ref, wins counted where the model's FAD is strictly lower
/// (ties half).
double bootstrap_dataset_win_rate(const EmbeddingMatrix& model_embeds,
                                  const EmbeddingMatrix& baseline_embeds,
                                  const stats::GaussStats& ref, int n_boot, int subset,
                                  std::uint64_t seed);
double bootstrap_dataset_win_rate_serial(const EmbeddingMatrix& model_embeds,
                                         const EmbeddingMatrix& baseline_embeds,
                                         const stats::GaussStats& ref, int n_boot, int subset,
                                         std::uint64_t seed);

/// Pearson correlation. Throws InvalidInput when either input is constant.
double plcc(std::span<const double> x, std::span<const double> y);

struct SrccResult {
  double value = 0.0;
  std::size_t groups_used = 0;
  std::size_t groups_skipped = 0;
};

/// Average of per-group Spearman coefficients with average-rank tie
/// handling. Groups with fewer than two members or constant ranks on either
/// side are skipped and counted.
SrccResult srcc_per_group(std::span<const double> x, std::span<const double> y,
                          std::span<const std::int64_t> groups);

/// P(K >= k) under Binomial(n, 1/2), evaluated in log space.
double binomial_test_one_sided(std::uint64_t k, std::uint64_t n);

/// One-sided Clopper-Pearson lower confidence bound on the win rate:
/// inverse regularized incomplete beta at alpha with parameters (k, n-k+1).
double clopper_pearson_lower(std::uint64_t k, std::uint64_t n, double alpha = 0.05);

/// P(w > 1/2) under the Beta(k+1, n-k+1) posterior from a uniform prior.
double posterior_prob_win(std::uint64_t k, std::uint64_t n);

/// Shift by the population mean, scale by the population (n-divisor)
/// standard deviation. All-equal input throws AllTied.
std::vector<double> normalize_global(std::span<const double> ratings);

struct RatingRecord {
  std::string rater;
  std::string item;
  double rating = 0.0;
};

struct RatingTable {
  std::vector<RatingRecord> records;
  double scale_min = 1.0;
  double scale_max = 5.0;

  void validate() const;
};

/// CSV with records "rater_id,item_id,rating"; an optional header line is
/// skipped.
RatingTable load_rating_csv(const std::filesystem::path& path);

struct RaterPosterior {
  std::string rater;
  double offset = 0.0;  // in globally-normalized units
  double stddev = 1.0;
  std::size_t count = 0;
};

struct GibbsResult {
  std::vector<double> normalized;  // per input record
  std::vector<RaterPosterior> raters;
  double global_mean = 0.0;
  double global_std = 1.0;
};

/// Per-rater normalization under a hierarchical Gaussian model, fitted with
/// a Gibbs sampler on the globally-normalized ratings: offsets have a unit
/// Gaussian prior, per-rater variances an inverse-gamma(2, 1) prior.
/// Burn-in is sweeps / 5. Deterministic given the seed.
GibbsResult normalize_per_rater_gibbs(const RatingTable& table, int sweeps, std::uint64_t seed);

// Special functions shared by the statistics above.
double ibeta(double a, double b, double x);       // regularized incomplete beta
double ibeta_inv(double a, double b, double p);   // inverse in x

}  // namespace dragon::evalstats
