#ifndef CLUSTERSTABLE_RESAMPLING_HPP
#define CLUSTERSTABLE_RESAMPLING_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clusterstable/data.hpp"
#include "clusterstable/errors.hpp"
#include "clusterstable/estimators.hpp"
#include "clusterstable/parallel.hpp"
#include "clusterstable/rng.hpp"

namespace clusterstable {

enum class ResamplingMode { Auto, Sample, Enumerate };

/// Auto mode enumerates every size-b subset when there are at most this many.
inline constexpr double kEnumerationLimit = 5000.0;
/// A subsampling run fails when more than this share of draws is degenerate.
inline constexpr double kMaxDegenerateShare = 0.5;
/// A pairs bootstrap fails when more than this share of resamples is singular.
inline constexpr double kMaxSingularResampleShare = 0.2;
/// Score sums below this fraction of their summands' magnitude are zero.
inline constexpr double kRelativeZero = 1e-11;

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

// ---------------------------------------------------------------------------
// Empirical quantiles
// ---------------------------------------------------------------------------

/// inf{t : F_n(t) >= q} for sorted draws, with F_n evaluated exactly as
/// i/n in double precision. q = 0 returns the minimum.
inline double empirical_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::InvalidArgument, "quantile level outside [0,1]");
  const std::size_t n = sorted.size();
  const double dn = static_cast<double>(n);
  auto cdf_at = [&](std::size_t i) { return static_cast<double>(i) / dn; };
  std::size_t i = static_cast<std::size_t>(std::ceil(q * dn));
  i = std::clamp<std::size_t>(i, 1, n);
  while (i > 1 && cdf_at(i - 1) >= q) --i;
  while (i < n && cdf_at(i) < q) ++i;
  return sorted[i - 1];
}

inline double empirical_cdf(std::span<const double> sorted, double t) {
  if (sorted.empty()) return 0.0;
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

/// sup_t |F(t) - G(t)| between two empirical CDFs.
inline double ks_distance(std::span<const double> a_sorted, std::span<const double> b_sorted) {
  double d = 0.0;
  for (double t : a_sorted) {
    d = std::max(d, std::abs(empirical_cdf(a_sorted, t) - empirical_cdf(b_sorted, t)));
  }
  for (double t : b_sorted) {
    d = std::max(d, std::abs(empirical_cdf(a_sorted, t) - empirical_cdf(b_sorted, t)));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Score subsampling
// ---------------------------------------------------------------------------

struct SubsampleDraw {
  double delta = 0.0;
  double sigma = 0.0;
  bool degenerate() const { return !(sigma > 0.0) || !std::isfinite(sigma); }
};

/// Score-subsampled estimator and scale for subsets of clusters. The
/// full-sample Gram inverse is computed once and reused for every subset;
/// only the linear score part is recomputed.
class ScoreSubsampler {
 public:
  ScoreSubsampler(const ClusterMoments& moments, const RegressionFit& full_ols, const LinearContrast& contrast)
      : moments_(&moments), contrast_(contrast) {
    if (full_ols.kind != FitKind::OLS)
      throw Error(ErrorKind::InvalidArgument, "score subsampling needs the OLS fit");
    const std::size_t G = moments.G();
    q_ = full_ols.gram_inverse * contrast.r();  // Q^-1 r
    a_.resize(G);
    h_.resize(G);
    for (std::size_t g = 0; g < G; ++g) {
      a_[g] = q_.dot(moments.xty[g]);
      h_[g] = moments.xtx[g] * q_;
    }
    delta_hat_ = 0.0;
    for (std::size_t g = 0; g < G; ++g) delta_hat_ += a_[g];
    double s2 = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      const double e = q_.dot(full_ols.scores[g]);
      s2 += e * e;
    }
    sigma_hat_ = std::sqrt(s2);
    gram_inverse_ = full_ols.gram_inverse;
  }

  std::size_t G() const { return a_.size(); }
  const LinearContrast& contrast() const { return contrast_; }
  /// r' Q^-1 sum_g X_g'Y_g, summed in cluster order.
  double delta_hat() const { return delta_hat_; }
  /// Full-sample cluster-robust standard error of delta_hat (a_G = 1).
  double sigma_hat() const { return sigma_hat_; }
  double t_statistic() const { return (delta_hat_ - contrast_.delta_null()) / sigma_hat_; }

  /// (delta_bj, sigma_bj) for the given cluster indices. Indices are summed
  /// in ascending order so the full set reproduces delta_hat exactly.
  SubsampleDraw draw(std::span<const std::size_t> subset) const {
    std::vector<std::size_t> idx(subset.begin(), subset.end());
    std::sort(idx.begin(), idx.end());
    return draw_sorted(idx);
  }

  SubsampleDraw draw_sorted(std::span<const std::size_t> idx) const {
    const std::size_t b = idx.size();
    const double scale = static_cast<double>(G()) / static_cast<double>(b);
    const Index dim = q_.size();
    Vector xty_sum = Vector::Zero(dim);
    double a_sum = 0.0;
    for (std::size_t g : idx) {
      xty_sum.noalias() += moments_->xty[g];
      a_sum += a_[g];
    }
    const Vector theta_bj = scale * (gram_inverse_ * xty_sum);
    double s2 = 0.0, mag = 0.0;
    for (std::size_t g : idx) {
      const double fitted = h_[g].dot(theta_bj);
      const double e = a_[g] - fitted;
      s2 += e * e;
      mag += std::abs(a_[g]) + std::abs(fitted);
    }
    // scores that vanish up to rounding count as exactly zero
    const double sigma = std::sqrt(s2) > kRelativeZero * mag ? scale * std::sqrt(s2) : 0.0;
    return {scale * a_sum, sigma};
  }

  /// (delta_bj - delta_hat) / sigma_bj; NaN for degenerate draws.
  double statistic_sorted(std::span<const std::size_t> idx) const {
    const auto d = draw_sorted(idx);
    if (d.degenerate()) return std::numeric_limits<double>::quiet_NaN();
    return (d.delta - delta_hat_) / d.sigma;
  }

 private:
  const ClusterMoments* moments_;
  LinearContrast contrast_;
  Vector q_;
  Matrix gram_inverse_;
  std::vector<double> a_;
  std::vector<Vector> h_;
  double delta_hat_ = 0.0;
  double sigma_hat_ = 0.0;
};

/// Convenience form: returns (delta_bj, sigma_bj) and throws ZeroSigma on a
/// degenerate subset.
inline SubsampleDraw score_subsample_statistic(const ClusteredDataset& ds, const RegressionFit& fit_full,
                                               const LinearContrast& c, std::span<const std::size_t> subset) {
  if (subset.size() < 2) throw Error(ErrorKind::InvalidArgument, "subset needs at least 2 clusters");
  std::vector<std::size_t> idx(subset.begin(), subset.end());
  std::sort(idx.begin(), idx.end());
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end() || idx.back() >= ds.G())
    throw Error(ErrorKind::InvalidArgument, "subset indices must be distinct and < G");
  const auto m = compute_moments(ds);
  const ScoreSubsampler sub(m, fit_full, c);
  const auto d = sub.draw_sorted(idx);
  if (d.degenerate()) throw Error(ErrorKind::ZeroSigma, "subset has zero score variation");
  return d;
}

struct SubsamplingOptions {
  ResamplingMode mode = ResamplingMode::Auto;
  unsigned threads = 1;
};

struct SubsamplingDistribution {
  std::vector<double> draws;  // ascending, finite
  std::size_t b = 0;
  std::size_t M = 0;           // subsets evaluated, degenerate ones included
  std::size_t degenerate = 0;  // excluded from draws
  std::uint64_t seed = 0;
  bool enumerated = false;

  double cdf(double t) const { return empirical_cdf(draws, t); }
};

namespace detail {

inline bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  for (std::size_t i = k; i-- > 0;) {
    if (idx[i] < n - k + i) {
      ++idx[i];
      for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Sorted self-normalized statistics (delta_bj - delta_hat)/sigma_bj over M
/// random size-b subsets (distinct clusters within a subset, subsets drawn
/// independently), or over all C(G,b) subsets in enumeration mode.
inline SubsamplingDistribution build_subsampling_distribution(const ScoreSubsampler& sub, std::size_t b,
                                                              std::size_t M, std::uint64_t seed,
                                                              const SubsamplingOptions& opt = {}) {
  const std::size_t G = sub.G();
  if (b < 2 || b >= G) throw Error(ErrorKind::InvalidArgument, "need 2 <= b < G");
  if (M < 1 && opt.mode != ResamplingMode::Enumerate)
    throw Error(ErrorKind::InvalidArgument, "need M >= 1");

  const double n_subsets = binomial_coefficient(G, b);
  const bool enumerate = opt.mode == ResamplingMode::Enumerate ||
                         (opt.mode == ResamplingMode::Auto && n_subsets <= kEnumerationLimit);

  std::vector<std::size_t> flat;  // subsets back to back, each sorted
  std::size_t count = 0;
  if (enumerate) {
    if (n_subsets > 5e7) throw Error(ErrorKind::InvalidArgument, "too many subsets to enumerate");
    count = static_cast<std::size_t>(n_subsets);
    flat.reserve(count * b);
    std::vector<std::size_t> idx(b);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    do {
      flat.insert(flat.end(), idx.begin(), idx.end());
    } while (detail::next_combination(idx, G));
  } else {
    count = M;
    flat.resize(count * b);
    auto rng = make_stream(seed, b, StreamTag::Subsample);
    std::vector<std::size_t> perm(G);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t j = 0; j < count; ++j) {
      // partial Fisher-Yates: the first b entries form a uniform b-subset
      for (std::size_t i = 0; i < b; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, G - 1);
        std::swap(perm[i], perm[pick(rng)]);
      }
      auto dst = flat.begin() + static_cast<std::ptrdiff_t>(j * b);
      std::copy(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(b), dst);
      std::sort(dst, dst + static_cast<std::ptrdiff_t>(b));
    }
  }

  std::vector<double> stats(count);
  parallel_for(count, opt.threads, [&](std::size_t j) {
    stats[j] = sub.statistic_sorted(std::span<const std::size_t>(flat.data() + j * b, b));
  });

  SubsamplingDistribution dist;
  dist.b = b;
  dist.M = count;
  dist.seed = seed;
  dist.enumerated = enumerate;
  dist.draws.reserve(count);
  for (double s : stats) {
    if (std::isfinite(s)) dist.draws.push_back(s);
    else ++dist.degenerate;
  }
  if (static_cast<double>(dist.degenerate) > kMaxDegenerateShare * static_cast<double>(count))
    throw Error(ErrorKind::TooManyDegenerateDraws, std::to_string(dist.degenerate) + " of " +
                                                       std::to_string(count) + " subsamples have zero sigma");
  std::sort(dist.draws.begin(), dist.draws.end());
  return dist;
}

inline SubsamplingDistribution build_subsampling_distribution(const ClusteredDataset& ds, const LinearContrast& c,
                                                              std::size_t b, std::size_t M, std::uint64_t seed,
                                                              const SubsamplingOptions& opt = {}) {
  const auto m = compute_moments(ds);
  const auto full = fit(ds, m, FitKind::OLS);
  const ScoreSubsampler sub(m, full, c);
  return build_subsampling_distribution(sub, b, M, seed, opt);
}

/// Left-continuous empirical quantile, inf{t : L(t) >= q}.
inline double critical_value(const SubsamplingDistribution& dist, double q) {
  return empirical_quantile(dist.draws, q);
}

struct CriticalValues {
  double lower = 0.0;  // c(a1)
  double upper = 0.0;  // c(1 - a2)
  double level = 0.0;  // a1 + a2
};

inline CriticalValues critical_values(const SubsamplingDistribution& dist, double a1, double a2) {
  if (!(a1 >= 0.0 && a2 >= 0.0 && a1 + a2 < 1.0))
    throw Error(ErrorKind::InvalidArgument, "need a1, a2 >= 0 and a1 + a2 < 1");
  return {critical_value(dist, a1), critical_value(dist, 1.0 - a2), a1 + a2};
}

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double delta_hat = 0.0;
  double sigma_hat = 0.0;
  CriticalValues critical;
  std::size_t b = 0;
};

/// Test inversion: [delta - sigma c(1-a2), delta - sigma c(a1)].
inline ConfidenceInterval confidence_interval(const ScoreSubsampler& sub, const SubsamplingDistribution& dist,
                                              double a1, double a2) {
  ConfidenceInterval ci;
  ci.critical = critical_values(dist, a1, a2);
  ci.delta_hat = sub.delta_hat();
  ci.sigma_hat = sub.sigma_hat();
  ci.lo = ci.delta_hat - ci.sigma_hat * ci.critical.upper;
  ci.hi = ci.delta_hat - ci.sigma_hat * ci.critical.lower;
  ci.b = dist.b;
  return ci;
}

/// Equal-tailed two-sided interval at level a.
inline ConfidenceInterval confidence_interval(const ClusteredDataset& ds, const LinearContrast& c, std::size_t b,
                                              std::size_t M, double a, std::uint64_t seed,
                                              const SubsamplingOptions& opt = {}) {
  const auto m = compute_moments(ds);
  const auto full = fit(ds, m, FitKind::OLS);
  const ScoreSubsampler sub(m, full, c);
  const auto dist = build_subsampling_distribution(sub, b, M, seed, opt);
  return confidence_interval(sub, dist, a / 2.0, a / 2.0);
}

// ---------------------------------------------------------------------------
// Minimum-volatility choice of b
// ---------------------------------------------------------------------------

struct BlockGrid {
  std::size_t b_small = 0;
  std::size_t b_big = 0;
  std::size_t k = 2;
};

/// b_small = max(4, ceil(G^0.4)), b_big = floor(G/2), k = 2.
inline BlockGrid default_block_grid(std::size_t G) {
  BlockGrid grid;
  grid.b_small = std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(G), 0.4))));
  grid.b_big = G / 2;
  grid.k = 2;
  return grid;
}

inline void check_block_grid(const BlockGrid& grid, std::size_t G) {
  if (grid.k < 1 || grid.b_small < 2 || grid.b_small + 2 * grid.k > grid.b_big || grid.b_big >= G)
    throw Error(ErrorKind::InvalidGrid, "need 2 <= b_small, b_small + k <= b_big - k and b_big < G (got b_small=" +
                                            std::to_string(grid.b_small) + ", b_big=" + std::to_string(grid.b_big) +
                                            ", k=" + std::to_string(grid.k) + ", G=" + std::to_string(G) + ")");
}

struct BlockSizeSelection {
  std::size_t b_star = 0;
  std::vector<std::pair<std::size_t, double>> critical_values;  // (b, c_b) for b_small..b_big
  std::vector<std::pair<std::size_t, double>> volatility;       // (b, VI_b) for b_small+k..b_big-k
};

/// Volatility index: sample standard deviation of the critical values in the
/// window [b-k, b+k]; argmin with ties going to the smaller b.
inline BlockSizeSelection min_volatility_from_table(std::size_t b_small, std::span<const double> crit, std::size_t k) {
  if (k < 1 || crit.size() < 2 * k + 1) throw Error(ErrorKind::InvalidGrid, "grid shorter than 2k+1");
  BlockSizeSelection sel;
  for (std::size_t i = 0; i < crit.size(); ++i) sel.critical_values.emplace_back(b_small + i, crit[i]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = k; i + k < crit.size(); ++i) {
    const std::size_t n = 2 * k + 1;
    double mean = 0.0;
    // deviations taken from the first element keep a flat window exactly 0
    const double base = crit[i - k];
    for (std::size_t j = i - k; j <= i + k; ++j) mean += crit[j] - base;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t j = i - k; j <= i + k; ++j) ss += (crit[j] - base - mean) * (crit[j] - base - mean);
    const double vi = std::sqrt(ss / static_cast<double>(n - 1));
    sel.volatility.emplace_back(b_small + i, vi);
    if (vi < best) {
      best = vi;
      sel.b_star = b_small + i;
    }
  }
  return sel;
}

/// Computes c_{G,b}(1 - a) for every b on the grid (stream per b) and picks
/// the b whose neighbourhood of critical values is least volatile.
inline BlockSizeSelection select_b_min_volatility(const ScoreSubsampler& sub, double a, const BlockGrid& grid,
                                                  std::size_t M, std::uint64_t seed,
                                                  const SubsamplingOptions& opt = {}) {
  check_block_grid(grid, sub.G());
  std::vector<double> crit;
  for (std::size_t b = grid.b_small; b <= grid.b_big; ++b) {
    const auto dist = build_subsampling_distribution(sub, b, M, seed, opt);
    crit.push_back(critical_value(dist, 1.0 - a));
  }
  return min_volatility_from_table(grid.b_small, crit, grid.k);
}

inline BlockSizeSelection select_b_min_volatility(const ClusteredDataset& ds, const LinearContrast& c, double a,
                                                  std::size_t b_small, std::size_t b_big, std::size_t k,
                                                  std::size_t M, std::uint64_t seed,
                                                  const SubsamplingOptions& opt = {}) {
  const auto m = compute_moments(ds);
  const auto full = fit(ds, m, FitKind::OLS);
  const ScoreSubsampler sub(m, full, c);
  return select_b_min_volatility(sub, a, BlockGrid{b_small, b_big, k}, M, seed, opt);
}

// ---------------------------------------------------------------------------
// Cluster bootstraps (baselines)
// ---------------------------------------------------------------------------

enum class BootstrapMethod { PAIRS, WILD_RADEMACHER };

inline std::string to_string(BootstrapMethod m) { return m == BootstrapMethod::PAIRS ? "PAIRS" : "WILD_RADEMACHER"; }

struct BootstrapResult {
  std::vector<double> statistics;  // in draw order, degenerate draws removed
  BootstrapMethod method = BootstrapMethod::PAIRS;
  std::size_t requested = 0;
  std::size_t skipped = 0;  // singular resamples or zero denominators
  double observed = 0.0;    // the sample statistic the draws are compared with
  bool enumerated = false;

  std::vector<double> sorted() const {
    auto s = statistics;
    std::sort(s.begin(), s.end());
    return s;
  }
};

/// Fills `out` with the G cluster indices of resample `rep`.
using IndexSource = std::function<void(std::size_t rep, std::vector<std::size_t>& out)>;
/// Fills `out` with the G Rademacher signs of draw `rep`.
using SignSource = std::function<void(std::size_t rep, std::vector<int>& out)>;

struct BootstrapOptions {
  ResamplingMode mode = ResamplingMode::Sample;
  unsigned threads = 1;
};

/// Pairs cluster bootstrap statistic for one multiset of cluster indices:
/// (delta* - delta_hat)/sigma*, nullopt when the resample is singular.
inline std::optional<double> pairs_statistic(const ClusterMoments& m, const LinearContrast& c, double delta_hat,
                                             std::span<const std::size_t> indices) {
  const Index dim = m.dim();
  Matrix gram = Matrix::Zero(dim, dim);
  Vector rhs = Vector::Zero(dim);
  for (std::size_t g : indices) {
    gram.noalias() += m.xtx[g];
    rhs.noalias() += m.xty[g];
  }
  if (!(condition_number(gram) < kMaxConditionNumber)) return std::nullopt;
  const auto ldlt = gram.ldlt();
  const Vector theta = ldlt.solve(rhs);
  const Vector q = ldlt.solve(c.r());
  double s2 = 0.0, mag = 0.0;
  for (std::size_t g : indices) {
    const double a = q.dot(m.xty[g]);
    const double fitted = q.dot(m.xtx[g] * theta);
    s2 += (a - fitted) * (a - fitted);
    mag += std::abs(a) + std::abs(fitted);
  }
  if (!(std::sqrt(s2) > kRelativeZero * mag)) return std::nullopt;
  return (c.apply(theta) - delta_hat) / std::sqrt(s2);
}

inline BootstrapResult pairs_cluster_bootstrap(const ClusteredDataset& ds, const LinearContrast& c, std::size_t B,
                                               const IndexSource& source, const BootstrapOptions& opt = {}) {
  if (B < 1) throw Error(ErrorKind::InvalidArgument, "need B >= 1");
  const auto m = compute_moments(ds);
  const auto full = fit(ds, m, FitKind::OLS);
  const std::size_t G = ds.G();
  const double delta_hat = c.apply(full.theta);

  std::vector<std::optional<double>> stats(B);
  parallel_for(B, opt.threads, [&](std::size_t rep) {
    std::vector<std::size_t> idx(G);
    source(rep, idx);
    stats[rep] = pairs_statistic(m, c, delta_hat, idx);
  });

  BootstrapResult res;
  res.method = BootstrapMethod::PAIRS;
  res.requested = B;
  res.observed = t_statistic(full, cr_variance(full), c);
  for (const auto& s : stats) {
    if (s) res.statistics.push_back(*s);
    else ++res.skipped;
  }
  if (static_cast<double>(res.skipped) > kMaxSingularResampleShare * static_cast<double>(B))
    throw Error(ErrorKind::TooManySingularResamples,
                std::to_string(res.skipped) + " of " + std::to_string(B) + " resamples are singular");
  return res;
}

/// B resamples of G clusters with replacement, or all G^G ordered resamples
/// in enumeration mode.
inline BootstrapResult pairs_cluster_bootstrap(const ClusteredDataset& ds, const LinearContrast& c, std::size_t B,
                                               std::uint64_t seed, const BootstrapOptions& opt = {}) {
  const std::size_t G = ds.G();
  if (opt.mode == ResamplingMode::Enumerate) {
    const double total = std::pow(static_cast<double>(G), static_cast<double>(G));
    if (total > 2e6) throw Error(ErrorKind::InvalidArgument, "G^G too large to enumerate");
    const auto n = static_cast<std::size_t>(total);
    auto res = pairs_cluster_bootstrap(
        ds, c, n,
        [G](std::size_t rep, std::vector<std::size_t>& out) {
          for (std::size_t i = 0; i < G; ++i) {
            out[i] = rep % G;
            rep /= G;
          }
        },
        opt);
    res.enumerated = true;
    return res;
  }
  return pairs_cluster_bootstrap(
      ds, c, B,
      [seed, G](std::size_t rep, std::vector<std::size_t>& out) {
        auto rng = make_stream(seed, rep, StreamTag::PairsBootstrap);
        std::uniform_int_distribution<std::size_t> pick(0, G - 1);
        for (auto& i : out) i = pick(rng);
      },
      opt);
}

/// How the bootstrap scores in the wild-bootstrap denominator are built.
/// RefitResiduals: X_g'(y*_g - X_g theta*) with y*_g = X_g theta_r + v_g u_g,
/// the usual null-imposed wild cluster bootstrap.
/// SignedRestricted: v_g X_g'(u_g - X_g(theta* - theta_r)), the sign applied
/// after re-centering.
enum class WildDenominator { RefitResiduals, SignedRestricted };

struct WildOptions {
  ResamplingMode mode = ResamplingMode::Sample;
  WildDenominator denominator = WildDenominator::RefitResiduals;
  unsigned threads = 1;
};

/// Null-imposed wild cluster bootstrap with Rademacher weights. The
/// restricted estimate satisfies r'theta_r = delta_null; each draw
/// recomputes theta* and the cluster-robust denominator.
class WildClusterBootstrap {
 public:
  WildClusterBootstrap(const ClusterMoments& m, const RegressionFit& full_ols, const LinearContrast& c,
                       WildDenominator denominator = WildDenominator::RefitResiduals)
      : denominator_(denominator) {
    const Vector q = full_ols.gram_inverse * c.r();
    gram_inverse_ = full_ols.gram_inverse;
    const double excess = c.apply(full_ols.theta) - c.delta_null();
    const Vector theta_r = full_ols.theta - q * (excess / c.r().dot(q));
    const std::size_t G = m.G();
    s_.resize(G);
    h_.resize(G);
    restricted_scores_.resize(G);
    for (std::size_t g = 0; g < G; ++g) {
      restricted_scores_[g] = m.xty[g] - m.xtx[g] * theta_r;
      s_[g] = q.dot(restricted_scores_[g]);
      h_[g] = m.xtx[g] * q;
    }
    double s2 = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      const double e = q.dot(full_ols.scores[g]);
      s2 += e * e;
    }
    observed_ = excess / std::sqrt(s2);
  }

  std::size_t G() const { return s_.size(); }
  /// The sample t-statistic (r'theta - delta_null)/sigma_CR.
  double observed() const { return observed_; }

  /// T* for one sign vector; nullopt when the denominator vanishes.
  std::optional<double> statistic(std::span<const int> v) const {
    const Index dim = restricted_scores_.front().size();
    Vector sum = Vector::Zero(dim);
    double num = 0.0;
    for (std::size_t g = 0; g < G(); ++g) {
      sum.noalias() += static_cast<double>(v[g]) * restricted_scores_[g];
      num += v[g] * s_[g];
    }
    const Vector d = gram_inverse_ * sum;  // theta* - theta_r
    double s2 = 0.0;
    for (std::size_t g = 0; g < G(); ++g) {
      const double hd = h_[g].dot(d);
      const double e = denominator_ == WildDenominator::RefitResiduals ? v[g] * s_[g] - hd : v[g] * (s_[g] - hd);
      s2 += e * e;
    }
    if (!(s2 > 0.0)) return std::nullopt;
    return num / std::sqrt(s2);
  }

 private:
  WildDenominator denominator_;
  Matrix gram_inverse_;
  std::vector<Vector> restricted_scores_;
  std::vector<double> s_;
  std::vector<Vector> h_;
  double observed_ = 0.0;
};

inline BootstrapResult wild_cluster_bootstrap(const WildClusterBootstrap& wcb, std::size_t B, const SignSource& source,
                                              unsigned threads = 1) {
  if (B < 1) throw Error(ErrorKind::InvalidArgument, "need B >= 1");
  std::vector<std::optional<double>> stats(B);
  parallel_for(B, threads, [&](std::size_t rep) {
    std::vector<int> v(wcb.G());
    source(rep, v);
    stats[rep] = wcb.statistic(v);
  });
  BootstrapResult res;
  res.method = BootstrapMethod::WILD_RADEMACHER;
  res.requested = B;
  res.observed = wcb.observed();
  for (const auto& s : stats) {
    if (s) res.statistics.push_back(*s);
    else ++res.skipped;
  }
  return res;
}

inline BootstrapResult wild_cluster_bootstrap(const WildClusterBootstrap& wcb, std::size_t B, std::uint64_t seed,
                                              const WildOptions& opt = {}) {
  const std::size_t G = wcb.G();
  if (opt.mode == ResamplingMode::Enumerate) {
    if (G > 24) throw Error(ErrorKind::InvalidArgument, "2^G too large to enumerate");
    const std::size_t n = std::size_t{1} << G;
    auto res = wild_cluster_bootstrap(
        wcb, n,
        [G](std::size_t rep, std::vector<int>& out) {
          for (std::size_t g = 0; g < G; ++g) out[g] = ((rep >> g) & 1u) ? -1 : 1;
        },
        opt.threads);
    res.enumerated = true;
    return res;
  }
  return wild_cluster_bootstrap(
      wcb, B,
      [seed](std::size_t rep, std::vector<int>& out) {
        auto rng = make_stream(seed, rep, StreamTag::WildBootstrap);
        std::bernoulli_distribution coin(0.5);
        for (auto& v : out) v = coin(rng) ? 1 : -1;
      },
      opt.threads);
}

inline BootstrapResult wild_cluster_bootstrap(const ClusteredDataset& ds, const LinearContrast& c, std::size_t B,
                                              std::uint64_t seed, const WildOptions& opt = {}) {
  const auto m = compute_moments(ds);
  const auto full = fit(ds, m, FitKind::OLS);
  const WildClusterBootstrap wcb(m, full, c, opt.denominator);
  return wild_cluster_bootstrap(wcb, B, seed, opt);
}

/// Equal-tailed percentile-t decision: reject when the observed statistic
/// falls outside [c(a/2), c(1 - a/2)] of the sorted bootstrap draws.
inline bool equal_tailed_reject(double observed, std::span<const double> sorted_draws, double a) {
  return observed < empirical_quantile(sorted_draws, a / 2.0) ||
         observed > empirical_quantile(sorted_draws, 1.0 - a / 2.0);
}

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_RESAMPLING_HPP
