#include "dragon/eval_stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "dragon/errors.hpp"
#include "dragon/parallel.hpp"
#include "dragon/rng.hpp"

namespace dragon::evalstats {

double win_rate(const PairedScores& scores) {
  if (scores.model.size() != scores.baseline.size() || scores.model.empty())
    throw InvalidInput("win_rate: need equal-length non-empty score arrays");
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.model.size(); ++i) {
    const double m = scores.model[i];
    const double b = scores.baseline[i];
    if (m == b) {
      wins += 0.5;
    } else if (scores.higher_better ? m > b : m < b) {
      wins += 1.0;
    }
  }
  return wins / static_cast<double>(scores.model.size());
}

std::vector<std::size_t> bootstrap_indices(std::uint64_t seed, std::size_t draw, std::size_t rows,
                                           std::size_t subset) {
  Rng rng(mix_seed(seed, draw));
  std::vector<std::size_t> idx(subset);
  for (std::size_t i = 0; i < subset; ++i) idx[i] = static_cast<std::size_t>(rng.below(rows));
  return idx;
}

namespace {

double bootstrap_draw_score(const EmbeddingMatrix& model_embeds,
                            const EmbeddingMatrix& baseline_embeds, const stats::GaussStats& ref,
                            std::uint64_t seed, std::size_t draw, std::size_t subset) {
  const auto idx = bootstrap_indices(seed, draw, model_embeds.rows(), subset);
  const double fad_model =
      stats::frechet_distance(stats::accumulate_stats(model_embeds.take_rows(idx)), ref);
  const double fad_base =
      stats::frechet_distance(stats::accumulate_stats(baseline_embeds.take_rows(idx)), ref);
  if (fad_model == fad_base) return 0.5;
  return fad_model < fad_base ? 1.0 : 0.0;
}

void check_bootstrap_inputs(const EmbeddingMatrix& model_embeds,
                            const EmbeddingMatrix& baseline_embeds, int n_boot, int subset) {
  if (model_embeds.rows() != baseline_embeds.rows())
    throw InvalidInput("bootstrap: embedding sets must be index-aligned");
  if (subset < 2) throw InvalidInput("bootstrap: subset must be >= 2");
  if (n_boot < 1) throw InvalidInput("bootstrap: n_boot must be >= 1");
}

}  // namespace

double bootstrap_dataset_win_rate(const EmbeddingMatrix& model_embeds,
                                  const EmbeddingMatrix& baseline_embeds,
                                  const stats::GaussStats& ref, int n_boot, int subset,
                                  std::uint64_t seed) {
  check_bootstrap_inputs(model_embeds, baseline_embeds, n_boot, subset);
  auto partials = par::map_chunks<double>(static_cast<std::size_t>(n_boot),
                                          [&](std::size_t b, std::size_t e) {
    double acc = 0.0;
    for (std::size_t j = b; j < e; ++j)
      acc += bootstrap_draw_score(model_embeds, baseline_embeds, ref, seed, j,
                                  static_cast<std::size_t>(subset));
    return acc;
  });
  double wins = 0.0;
  for (double p : partials) wins += p;
  return wins / static_cast<double>(n_boot);
}

double bootstrap_dataset_win_rate_serial(const EmbeddingMatrix& model_embeds,
                                         const EmbeddingMatrix& baseline_embeds,
                                         const stats::GaussStats& ref, int n_boot, int subset,
                                         std::uint64_t seed) {
  check_bootstrap_inputs(model_embeds, baseline_embeds, n_boot, subset);
  double wins = 0.0;
  for (std::size_t j = 0; j < static_cast<std::size_t>(n_boot); ++j)
    wins += bootstrap_draw_score(model_embeds, baseline_embeds, ref, seed, j,
                                 static_cast<std::size_t>(subset));
  return wins / static_cast<double>(n_boot);
}

double plcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InvalidInput("plcc: need two equal-length arrays with >= 2 entries");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidInput("plcc: constant input");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

bool all_equal(std::span<const double> v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] != v[0]) return false;
  return true;
}

}  // namespace

SrccResult srcc_per_group(std::span<const double> x, std::span<const double> y,
                          std::span<const std::int64_t> groups) {
  if (x.size() != y.size() || x.size() != groups.size() || x.empty())
    throw InvalidInput("srcc_per_group: need equal-length non-empty arrays");

  std::map<std::int64_t, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < groups.size(); ++i) by_group[groups[i]].push_back(i);

  SrccResult out;
  double total = 0.0;
  for (const auto& [group, idx] : by_group) {
    if (idx.size() < 2) {
      ++out.groups_skipped;
      continue;
    }
    std::vector<double> gx, gy;
    for (std::size_t i : idx) {
      gx.push_back(x[i]);
      gy.push_back(y[i]);
    }
    if (all_equal(gx) || all_equal(gy)) {
      ++out.groups_skipped;
      continue;
    }
    const auto rx = average_ranks(gx);
    const auto ry = average_ranks(gy);
    total += plcc(rx, ry);
    ++out.groups_used;
  }
  if (out.groups_used == 0) throw InvalidInput("srcc_per_group: no usable groups");
  out.value = total / static_cast<double>(out.groups_used);
  return out;
}

double binomial_test_one_sided(std::uint64_t k, std::uint64_t n) {
  if (n < 1 || k > n) throw InvalidInput("binomial_test: need 0 <= k <= n, n >= 1");
  if (k == 0) return 1.0;
  if (k == n) return std::ldexp(1.0, -static_cast<int>(n));
  // Log-space tail sum with the largest term as the pivot.
  const double log_half_n = -static_cast<double>(n) * std::log(2.0);
  const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  std::vector<double> log_terms;
  log_terms.reserve(n - k + 1);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::uint64_t i = k; i <= n; ++i) {
    const double lt = lg_n1 - std::lgamma(static_cast<double>(i) + 1.0) -
                      std::lgamma(static_cast<double>(n - i) + 1.0) + log_half_n;
    log_terms.push_back(lt);
    max_log = std::max(max_log, lt);
  }
  double acc = 0.0;
  for (double lt : log_terms) acc += std::exp(lt - max_log);
  return std::exp(max_log + std::log(acc));
}

double ibeta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidInput("ibeta: parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                        b * std::log1p(-x);
  // Continued fraction (modified Lentz).
  auto betacf = [](double ca, double cb, double cx) {
    constexpr double eps = 1e-15;
    constexpr double fpmin = 1e-300;
    const double qab = ca + cb;
    const double qap = ca + 1.0;
    const double qam = ca - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * cx / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
      const double m2 = 2.0 * m;
      double aa = m * (cb - m) * cx / ((qam + m2) * (ca + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < fpmin) d = fpmin;
      c = 1.0 + aa / c;
      if (std::abs(c) < fpmin) c = fpmin;
      d = 1.0 / d;
      h *= d * c;
      aa = -(ca + m) * (qab + m) * cx / ((ca + m2) * (qap + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < fpmin) d = fpmin;
      c = 1.0 + aa / c;
      if (std::abs(c) < fpmin) c = fpmin;
      d = 1.0 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < eps) break;
    }
    return h;
  };
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_bt) * betacf(a, b, x) / a;
  return 1.0 - std::exp(log_bt) * betacf(b, a, 1.0 - x) / b;
}

double ibeta_inv(double a, double b, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("ibeta_inv: p must be in [0,1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ibeta(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double clopper_pearson_lower(std::uint64_t k, std::uint64_t n, double alpha) {
  if (n < 1 || k > n) throw InvalidInput("clopper_pearson_lower: need 0 <= k <= n, n >= 1");
  if (k == 0) return 0.0;
  return ibeta_inv(static_cast<double>(k), static_cast<double>(n - k) + 1.0, alpha);
}

double posterior_prob_win(std::uint64_t k, std::uint64_t n) {
  if (n < 1 || k > n) throw InvalidInput("posterior_prob_win: need 0 <= k <= n, n >= 1");
  return 1.0 - ibeta(static_cast<double>(k) + 1.0, static_cast<double>(n - k) + 1.0, 0.5);
}

std::vector<double> normalize_global(std::span<const double> ratings) {
  if (ratings.empty()) throw InvalidInput("normalize_global: empty input");
  const double n = static_cast<double>(ratings.size());
  double mean = 0.0;
  for (double r : ratings) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : ratings) var += (r - mean) * (r - mean);
  var /= n;  // population divisor
  if (var == 0.0) throw AllTied("normalize_global: all ratings identical");
  const double inv_std = 1.0 / std::sqrt(var);
  std::vector<double> out(ratings.size());
  for (std::size_t i = 0; i < ratings.size(); ++i) out[i] = (ratings[i] - mean) * inv_std;
  return out;
}

void RatingTable::validate() const {
  if (records.empty()) throw InvalidInput("RatingTable: no records");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!(r.rating >= scale_min && r.rating <= scale_max))
      throw InvalidInput("RatingTable: rating out of scale bounds at record " + std::to_string(i));
  }
}

RatingTable load_rating_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput(path.string() + ": cannot open");
  RatingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    RatingRecord rec;
    std::string rating_field;
    if (!std::getline(ls, rec.rater, ',') || !std::getline(ls, rec.item, ',') ||
        !std::getline(ls, rating_field))
      throw InvalidInput(path.string() + ": line " + std::to_string(lineno) +
                         ": expected rater_id,item_id,rating");
    try {
      rec.rating = std::stod(rating_field);
    } catch (const std::exception&) {
      if (lineno == 1) continue;  // header line
      throw InvalidInput(path.string() + ": line " + std::to_string(lineno) +
                         ": rating is not a number");
    }
    table.records.push_back(std::move(rec));
  }
  table.validate();
  return table;
}

GibbsResult normalize_per_rater_gibbs(const RatingTable& table, int sweeps, std::uint64_t seed) {
  table.validate();
  if (sweeps < 1) throw InvalidInput("normalize_per_rater_gibbs: sweeps must be >= 1");

  // Global normalization first; the hierarchical model lives in z-space.
  std::vector<double> raw(table.records.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = table.records[i].rating;
  double mean = 0.0;
  for (double r : raw) mean += r;
  mean /= static_cast<double>(raw.size());
  double var = 0.0;
  for (double r : raw) var += (r - mean) * (r - mean);
  var /= static_cast<double>(raw.size());
  if (var == 0.0) var = 1.0;  // degenerate table: offsets absorb everything
  const double global_std = std::sqrt(var);
  std::vector<double> z(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) z[i] = (raw[i] - mean) / global_std;

  // Group records per rater, first-appearance order.
  std::vector<std::string> rater_names;
  std::map<std::string, std::size_t> rater_index;
  std::vector<std::vector<std::size_t>> rater_records;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& name = table.records[i].rater;
    auto [it, inserted] = rater_index.try_emplace(name, rater_names.size());
    if (inserted) {
      rater_names.push_back(name);
      rater_records.emplace_back();
    }
    rater_records[it->second].push_back(i);
  }
  const std::size_t n_raters = rater_names.size();

  // Priors: offset ~ N(0, 1), variance ~ InvGamma(2, 1).
  constexpr double kPriorShape = 2.0;
  constexpr double kPriorScale = 1.0;

  std::vector<double> offsets(n_raters, 0.0);
  std::vector<double> vars(n_raters, 1.0);
  for (std::size_t r = 0; r < n_raters; ++r) {
    double m = 0.0;
    for (std::size_t i : rater_records[r]) m += z[i];
    offsets[r] = m / static_cast<double>(rater_records[r].size());
  }

  const int burnin = sweeps / 5;
  std::vector<double> offset_acc(n_raters, 0.0);
  std::vector<double> std_acc(n_raters, 0.0);
  std::size_t n_acc = 0;

  Rng rng(mix_seed(seed, fnv1a64("gibbs-normalize")));
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t r = 0; r < n_raters; ++r) {
      const auto& idx = rater_records[r];
      const double n_r = static_cast<double>(idx.size());
      double sum_z = 0.0;
      for (std::size_t i : idx) sum_z += z[i];
      // offset | var: Gaussian posterior against the N(0,1) prior.
      const double precision = 1.0 + n_r / vars[r];
      const double post_mean = (sum_z / vars[r]) / precision;
      offsets[r] = post_mean + rng.normal() / std::sqrt(precision);
      // var | offset: conjugate inverse-gamma update.
      double ss = 0.0;
      for (std::size_t i : idx) {
        const double d = z[i] - offsets[r];
        ss += d * d;
      }
      const double shape = kPriorShape + 0.5 * n_r;
      const double scale = kPriorScale + 0.5 * ss;
      vars[r] = scale / rng.gamma(shape);
    }
    if (sweep >= burnin) {
      for (std::size_t r = 0; r < n_raters; ++r) {
        offset_acc[r] += offsets[r];
        std_acc[r] += std::sqrt(vars[r]);
      }
      ++n_acc;
    }
  }

  GibbsResult out;
  out.global_mean = mean;
  out.global_std = global_std;
  out.raters.resize(n_raters);
  for (std::size_t r = 0; r < n_raters; ++r) {
    out.raters[r].rater = rater_names[r];
    out.raters[r].offset = offset_acc[r] / static_cast<double>(n_acc);
    out.raters[r].stddev = std_acc[r] / static_cast<double>(n_acc);
    out.raters[r].count = rater_records[r].size();
  }
  out.normalized.resize(z.size());
  for (std::size_t r = 0; r < n_raters; ++r)
    for (std::size_t i : rater_records[r])
      out.normalized[i] = (z[i] - out.raters[r].offset) / out.raters[r].stddev;
  return out;
}

}  // namespace dragon::evalstats
