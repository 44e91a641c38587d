#ifndef CLUSTERSTABLE_STABLE_HPP
#define CLUSTERSTABLE_STABLE_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "clusterstable/errors.hpp"
#include "clusterstable/estimators.hpp"
#include "clusterstable/parallel.hpp"
#include "clusterstable/rng.hpp"

namespace clusterstable {

inline constexpr std::size_t kDefaultTruncation = 10000;

/// Centering of the signed series. FullMean subtracts (2p-1) E[Z_k], which
/// is the centering of a self-normalized sum of mean-zero scores.
/// Truncated subtracts (2p-1) E[Z_k 1(Z_k < 1)], the form written for the
/// general domain-of-attraction case.
enum class LePageCentering { FullMean, Truncated };

/// Index of stability alpha in (1, 2], tail balance p in [0, 1] and the
/// number of exact terms kept from the LePage series.
struct StableLimitParams {
  double alpha = 2.0;
  double p = 0.5;
  std::size_t truncation_K = kDefaultTruncation;
  /// Replace the discarded terms k > K by their conditional Gaussian
  /// approximation given E_1 + ... + E_K (see lepage_remainder).
  bool tail_correction = true;
  LePageCentering centering = LePageCentering::FullMean;

  void validate() const {
    if (!(alpha > 1.0 && alpha <= 2.0))
      throw Error(ErrorKind::AlphaOutOfRange, "alpha must lie in (1, 2], got " + std::to_string(alpha));
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::InvalidArgument, "p must lie in [0, 1]");
    if (truncation_K < 10) throw Error(ErrorKind::InvalidArgument, "truncation_K must be at least 10");
  }
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_quantile(double q) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), q);
}

// ---------------------------------------------------------------------------
// Characteristic function
// ---------------------------------------------------------------------------

/// exp{-(|s|^a + i s (1-a) tan(a pi/2) (|s|^(a-1) - 1)/(a-1))} for 1 < a < 2.
inline std::complex<double> stable_cf(double alpha, double s) {
  if (!(alpha > 1.0 && alpha < 2.0))
    throw Error(ErrorKind::AlphaOutOfRange, "characteristic function needs 1 < alpha < 2");
  const double as = std::abs(s);
  const double re = std::pow(as, alpha);
  const double im = s * (1.0 - alpha) * std::tan(alpha * std::numbers::pi / 2.0) *
                    (std::pow(as, alpha - 1.0) - 1.0) / (alpha - 1.0);
  return std::exp(-std::complex<double>(re, im));
}

// ---------------------------------------------------------------------------
// LePage series
// ---------------------------------------------------------------------------

/// Centering term for Z_k = Gamma_k^(-1/alpha), Gamma_k ~ Gamma(k, 1).
/// FullMean: E[Z_k] = Gamma(k - 1/alpha) / Gamma(k).
/// Truncated: E[Z_k 1(Z_k < 1)] = Gamma(k - 1/alpha, 1) / Gamma(k).
inline double lepage_centering_term(double alpha, std::size_t k, LePageCentering kind = LePageCentering::FullMean) {
  const double a = 1.0 / alpha;
  const double s = static_cast<double>(k) - a;
  const double mean = boost::math::tgamma_ratio(s, static_cast<double>(k));
  return kind == LePageCentering::FullMean ? mean : boost::math::gamma_q(s, 1.0) * mean;
}

/// sum_{k<=K} of the centering terms, cached per (alpha, K, kind).
inline double lepage_centering_sum(double alpha, std::size_t K, LePageCentering kind = LePageCentering::FullMean) {
  static std::mutex mutex;
  static std::map<std::tuple<double, std::size_t, int>, double> cache;
  const auto key = std::make_tuple(alpha, K, static_cast<int>(kind));
  {
    std::lock_guard<std::mutex> lock(mutex);
    if (const auto it = cache.find(key); it != cache.end()) return it->second;
  }
  double sum = 0.0;
  for (std::size_t k = K; k >= 1; --k) sum += lepage_centering_term(alpha, k, kind);  // small terms first
  std::lock_guard<std::mutex> lock(mutex);
  cache.emplace(key, sum);
  return sum;
}

/// Conditional approximation of the series beyond K given Gamma_K. The
/// terms Z_{K+j} ~ (Gamma_K + j)^(-1/alpha) are small and many, so their
/// centered signed sum is Gaussian with variance sum Z_{K+j}^2 (sign noise
/// 4p(1-p) plus the (2p-1)^2 share from the fluctuation of the Gamma
/// increments) and the squared sum is deterministic. Sums over j are
/// replaced by integrals from j = 1/2.
struct LePageRemainder {
  double mean = 0.0;      // added to S
  double variance = 0.0;  // of the Gaussian part of S
  double v = 0.0;         // added to V
};

inline LePageRemainder lepage_remainder(double alpha, double p, std::size_t K, double gamma_K) {
  const double a = 1.0 / alpha;
  const double kk = static_cast<double>(K) + 0.5;
  const double gg = gamma_K + 0.5;
  LePageRemainder r;
  r.v = std::pow(gg, 1.0 - 2.0 * a) / (2.0 * a - 1.0);
  r.mean = (2.0 * p - 1.0) * (std::pow(kk, 1.0 - a) - std::pow(gg, 1.0 - a)) / (1.0 - a);
  r.variance = r.v;
  return r;
}

/// One draw of S / sqrt(V) from the stream `rng`.
inline double lepage_draw(const StableLimitParams& params, double centering_sum, Rng& rng) {
  const double a = 1.0 / params.alpha;
  const std::uint64_t plus_threshold =
      params.p >= 1.0 ? std::numeric_limits<std::uint64_t>::max()
                      : static_cast<std::uint64_t>(std::ldexp(params.p, 64));
  const bool always_plus = params.p >= 1.0;
  double gamma = 0.0, s = 0.0, v = 0.0;
  for (std::size_t k = 0; k < params.truncation_K; ++k) {
    gamma -= std::log(uniform_open_zero(rng));
    const double z = std::exp(-a * std::log(gamma));
    const bool plus = rng() < plus_threshold || always_plus;  // draw consumed for every p
    s += plus ? z : -z;
    v += z * z;
  }
  s -= (2.0 * params.p - 1.0) * centering_sum;
  if (params.tail_correction) {
    const auto rem = lepage_remainder(params.alpha, params.p, params.truncation_K, gamma);
    s += rem.mean;
    if (rem.variance > 0.0) s += std::sqrt(rem.variance) * std::normal_distribution<double>()(rng);
    v += rem.v;
  }
  return s / std::sqrt(v);
}

/// n draws of the self-normalized limit S/sqrt(V),
///   S = sum_k {eps_k Z_k - (2p-1) c_k},  V = sum_k Z_k^2,
///   Z_k = (E_1 + ... + E_k)^(-1/alpha),  P(eps_k = 1) = p.
/// with c_k chosen by params.centering. Terms k > K are approximated when
/// params.tail_correction is set. alpha = 2 returns exact standard normal draws. Draw i uses its own
/// stream, so results do not depend on the thread count.
inline std::vector<double> lepage_sample(const StableLimitParams& params, std::size_t n, std::uint64_t seed,
                                         unsigned threads = 1) {
  params.validate();
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "need n >= 1");
  std::vector<double> out(n);
  if (params.alpha == 2.0) {
    parallel_for(n, threads, [&](std::size_t i) {
      auto rng = make_stream(seed, i, StreamTag::LePage);
      out[i] = std::normal_distribution<double>()(rng);
    });
    return out;
  }
  const double centering = lepage_centering_sum(params.alpha, params.truncation_K, params.centering);
  parallel_for(n, threads, [&](std::size_t i) {
    auto rng = make_stream(seed, i, StreamTag::LePage);
    out[i] = lepage_draw(params, centering, rng);
  });
  return out;
}

/// Asymptotic size of the two-sided test that rejects when |t| > crit.
/// alpha = 2 uses the exact normal tail.
inline double normal_critical_size(const StableLimitParams& params, double crit, std::size_t n_draws,
                                   std::uint64_t seed, unsigned threads = 1) {
  params.validate();
  if (!(crit > 0.0)) throw Error(ErrorKind::InvalidArgument, "crit must be positive");
  if (params.alpha == 2.0) return std::erfc(crit / std::numbers::sqrt2);
  const auto draws = lepage_sample(params, n_draws, seed, threads);
  std::size_t exceed = 0;
  for (double d : draws) exceed += std::abs(d) > crit ? 1 : 0;
  return static_cast<double>(exceed) / static_cast<double>(n_draws);
}

// ---------------------------------------------------------------------------
// Tail diagnostic
// ---------------------------------------------------------------------------

/// Hill-estimator stand-in for a formal test of alpha = 2; it is not the
/// likelihood-ratio test used in the literature.
struct TailDiagnostic {
  double alpha_hat = 0.0;
  double p_hat = 0.0;
  double k_fraction = 0.1;
  std::size_t k = 0;
  double level = 0.05;
  bool reject_alpha2 = false;
  std::string note = "Hill-estimator surrogate for an external tail-index test";
};

/// Hill estimate of the tail index from the top ceil(k_fraction * G)
/// order statistics of |score|; p_hat is the share of positive scores among
/// them. H0: alpha = 2 is rejected when alpha_hat + z_{1-level} alpha_hat /
/// sqrt(k) < 2.
inline TailDiagnostic estimate_tail(std::span<const double> scores, double k_fraction = 0.1, double level = 0.05) {
  const std::size_t G = scores.size();
  if (G < 20) throw Error(ErrorKind::TooFewClusters, "tail diagnostic needs at least 20 clusters, got " +
                                                         std::to_string(G));
  if (!(k_fraction > 0.0 && k_fraction <= 0.5))
    throw Error(ErrorKind::InvalidArgument, "k_fraction must lie in (0, 0.5]");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "level must lie in (0, 1)");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](double x, double y) { return std::abs(x) > std::abs(y); });
  const auto k = static_cast<std::size_t>(std::ceil(k_fraction * static_cast<double>(G)));

  TailDiagnostic d;
  d.k_fraction = k_fraction;
  d.k = k;
  d.level = level;
  const double threshold = std::abs(sorted[k]);
  if (!(threshold > 0.0))
    throw Error(ErrorKind::InvalidArgument, "tail threshold is zero; too many zero scores");
  double h = 0.0;
  std::size_t positive = 0;
  for (std::size_t i = 0; i < k; ++i) {
    h += std::log(std::abs(sorted[i]) / threshold);
    positive += sorted[i] > 0.0 ? 1 : 0;
  }
  h /= static_cast<double>(k);
  d.p_hat = static_cast<double>(positive) / static_cast<double>(k);
  if (!(h > 0.0)) {
    d.alpha_hat = std::numeric_limits<double>::infinity();
    d.reject_alpha2 = false;
    return d;
  }
  d.alpha_hat = 1.0 / h;
  const double z = normal_quantile(1.0 - level);
  d.reject_alpha2 = d.alpha_hat + z * d.alpha_hat / std::sqrt(static_cast<double>(k)) < 2.0;
  return d;
}

/// Per-cluster contrast scores r'Q^-1 S_g of a fit.
inline std::vector<double> contrast_scores(const RegressionFit& fit, const LinearContrast& c) {
  const Vector q = fit.gram_inverse * c.r();
  std::vector<double> out;
  out.reserve(fit.G());
  for (const auto& s : fit.scores) out.push_back(q.dot(s));
  return out;
}

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_STABLE_HPP
