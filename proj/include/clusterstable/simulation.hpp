#ifndef CLUSTERSTABLE_SIMULATION_HPP
#define CLUSTERSTABLE_SIMULATION_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clusterstable/data.hpp"
#include "clusterstable/errors.hpp"
#include "clusterstable/estimators.hpp"
#include "clusterstable/parallel.hpp"
#include "clusterstable/resampling.hpp"
#include "clusterstable/rng.hpp"
#include "clusterstable/stable.hpp"

namespace clusterstable {

inline constexpr double kDefaultSizeCap = 1e7;

/// Cluster-treatment design: Y = theta_0 + theta_1 T_g + sum_j theta_{j+1} X_j + U.
struct DgpConfig {
  std::size_t G = 50;
  double alpha = 1.0;       // Pareto exponent of the cluster sizes
  double size_scale = 10.0;  // N_g = ceil(size_scale * Pareto(1, alpha))
  std::size_t K = 0;         // covariates beyond the treatment dummy
  double rho = 0.5;          // within-cluster equicorrelation of X~ and U~
  std::vector<double> theta;  // length K + 2; empty means all ones
  double treat_fraction = 0.2;
  double error_sd_control = 0.2;
  double error_sd_treated = 1.0;
  double size_cap = kDefaultSizeCap;

  std::vector<double> theta_vector() const {
    return theta.empty() ? std::vector<double>(K + 2, 1.0) : theta;
  }

  std::size_t treated_count() const {
    // guard against 0.2 * G landing a hair above an integer
    return static_cast<std::size_t>(std::ceil(treat_fraction * static_cast<double>(G) - 1e-9));
  }

  void validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
    if (G < 2) bad("G must be at least 2");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) bad("alpha must be positive");
    if (!(size_scale > 0.0) || !std::isfinite(size_scale)) bad("size_scale must be positive");
    if (!(rho >= 0.0 && rho < 1.0)) bad("rho must lie in [0, 1)");
    if (!theta.empty() && theta.size() != K + 2) bad("theta must have length K + 2");
    if (!(treat_fraction > 0.0 && treat_fraction < 1.0)) bad("treat_fraction must lie in (0, 1)");
    if (treated_count() < 1 || treated_count() >= G) bad("need at least one treated and one control cluster");
    if (!(error_sd_control >= 0.0) || !(error_sd_treated >= 0.0)) bad("error scales must be non-negative");
    if (!(size_cap >= 1.0)) bad("size_cap must be at least 1");
  }
};

/// Quantile of Beta(2, 2): the root in [0, 1] of 3x^2 - 2x^3 = u.
inline double beta22_quantile(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return 0.5 + std::cos((std::acos(1.0 - 2.0 * u) + 4.0 * std::numbers::pi) / 3.0);
}

/// ceil(scale * U^(-1/alpha)), U uniform on (0, 1]. Throws GiantCluster
/// above the cap.
inline Index draw_cluster_size(double alpha, double scale, double cap, Rng& rng) {
  const double n = std::ceil(scale * std::pow(uniform_open_zero(rng), -1.0 / alpha));
  if (!(n <= cap))
    throw Error(ErrorKind::GiantCluster, "cluster size " + std::to_string(n) + " exceeds cap " + std::to_string(cap));
  return static_cast<Index>(n);
}

/// Dataset number `index` of the stream family `seed`. Columns are
/// (Intercept), T, X1..XK; treatment goes to a uniformly random set of
/// exactly ceil(treat_fraction * G) clusters.
inline ClusteredDataset draw_dataset(const DgpConfig& cfg, std::uint64_t seed, std::uint64_t index = 0) {
  cfg.validate();
  auto rng = make_stream(seed, index, StreamTag::Dataset);
  const std::size_t G = cfg.G;
  const auto theta = cfg.theta_vector();
  const Index dim = static_cast<Index>(cfg.K + 2);

  std::vector<Index> sizes(G);
  for (auto& n : sizes) n = draw_cluster_size(cfg.alpha, cfg.size_scale, cfg.size_cap, rng);

  std::vector<std::size_t> perm(G);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<char> treated(G, 0);
  const std::size_t n_treated = cfg.treated_count();
  for (std::size_t i = 0; i < n_treated; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, G - 1);
    std::swap(perm[i], perm[pick(rng)]);
    treated[perm[i]] = 1;
  }

  std::normal_distribution<double> normal;
  const double common = std::sqrt(cfg.rho);
  const double own = std::sqrt(1.0 - cfg.rho);
  // One equicorrelated N(0, Omega) vector of length n into `out`.
  auto equicorrelated = [&](Index n, auto&& out) {
    const double z0 = normal(rng);
    for (Index i = 0; i < n; ++i) out(i) = common * z0 + own * normal(rng);
  };

  std::vector<Cluster> clusters(G);
  for (std::size_t g = 0; g < G; ++g) {
    const Index n = sizes[g];
    Cluster& c = clusters[g];
    c.id = "g" + std::to_string(g + 1);
    c.X.resize(n, dim);
    c.X.col(0).setOnes();
    c.X.col(1).setConstant(treated[g] ? 1.0 : 0.0);
    for (std::size_t j = 0; j < cfg.K; ++j) {
      auto col = c.X.col(static_cast<Index>(j + 2));
      equicorrelated(n, col);
      for (Index i = 0; i < n; ++i) col(i) = 0.2 * beta22_quantile(normal_cdf(col(i)));
    }
    Vector u(n);
    equicorrelated(n, u);
    u *= treated[g] ? cfg.error_sd_treated : cfg.error_sd_control;
    Vector th = Eigen::Map<const Vector>(theta.data(), dim);
    c.Y = c.X * th + u;
  }

  std::vector<std::string> names{std::string(kInterceptName), "T"};
  for (std::size_t j = 0; j < cfg.K; ++j) names.push_back("X" + std::to_string(j + 1));
  return ClusteredDataset(std::move(clusters), std::move(names));
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

enum class McMethod { SUB, WCB, PAIRS, JACK, CR, SACR, SACR_JACK };

inline constexpr McMethod kAllMcMethods[] = {McMethod::SUB,  McMethod::WCB,  McMethod::PAIRS,    McMethod::JACK,
                                             McMethod::CR,   McMethod::SACR, McMethod::SACR_JACK};

inline std::string to_string(McMethod m) {
  switch (m) {
    case McMethod::SUB: return "SUB";
    case McMethod::WCB: return "WCB";
    case McMethod::PAIRS: return "PAIRS";
    case McMethod::JACK: return "JACK";
    case McMethod::CR: return "CR";
    case McMethod::SACR: return "SACR";
    case McMethod::SACR_JACK: return "SACR_JACK";
  }
  return "?";
}

inline McMethod parse_mc_method(std::string_view s) {
  for (McMethod m : kAllMcMethods)
    if (to_string(m) == s) return m;
  throw Error(ErrorKind::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

/// Estimator whose coefficient a method reports.
inline FitKind estimator_of(McMethod m) {
  return (m == McMethod::SACR || m == McMethod::SACR_JACK) ? FitKind::SACR : FitKind::OLS;
}

/// Methods whose statistic is a t-ratio with a normal reference.
inline bool is_t_method(McMethod m) {
  return m == McMethod::CR || m == McMethod::JACK || m == McMethod::SACR || m == McMethod::SACR_JACK;
}

struct MonteCarloOptions {
  std::size_t subsample_M = 1000;
  std::optional<std::size_t> subsample_b;  // empty: minimum-volatility choice per replication
  std::size_t bootstrap_B = 399;
  bool cr1 = false;  // CR method scales its variance by the CR1 factor
  WildDenominator wild_denominator = WildDenominator::RefitResiduals;
  unsigned threads = 1;
  bool keep_statistics = false;  // store t-statistics of t-methods for Q-Q output
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Per-replication outcome of one method.
struct MethodOutcome {
  bool ok = false;
  bool covered = false;
  double estimate = 0.0;   // theta_1 of the method's estimator
  double statistic = 0.0;  // t-ratio at the true value (t-methods and SUB/WCB/PAIRS observed)
  double ci_length = std::numeric_limits<double>::quiet_NaN();
  std::size_t b = 0;       // SUB only
};

struct MethodSummary {
  McMethod method = McMethod::CR;
  std::string estimator;  // OLS or SACR
  std::size_t ok = 0;
  std::size_t failed = 0;
  double coverage = 0.0;
  double rejection = 0.0;
  double mse = 0.0;
  double mean_ci_length = std::numeric_limits<double>::quiet_NaN();
  double mean_b = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> statistics;  // filled when keep_statistics
};

struct MonteCarloReport {
  DgpConfig config;
  std::vector<McMethod> methods;
  std::size_t replications = 0;
  double level = 0.05;
  std::uint64_t seed = 0;
  std::size_t failed_replications = 0;
  std::size_t giant_cluster_events = 0;
  bool cr1 = false;
  std::size_t subsample_M = 0;
  std::size_t bootstrap_B = 0;
  std::vector<MethodSummary> rows;
  double wall_seconds = 0.0;  // not written to CSV so reruns stay byte-identical

  const MethodSummary& row(McMethod m) const {
    for (const auto& r : rows)
      if (r.method == m) return r;
    throw Error(ErrorKind::InvalidArgument, "method " + to_string(m) + " not in report");
  }
};

/// Covers the truth when the estimate sits on it to rounding accuracy, so
/// noiseless designs (zero standard errors) count as covered.
inline bool numerically_exact(double estimate, double truth) {
  return std::abs(estimate - truth) <= 1e-9 * (1.0 + std::abs(truth));
}

namespace detail {

inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

inline std::uint64_t method_seed(std::uint64_t seed, std::uint64_t rep, McMethod m) {
  auto rng = make_stream(seed, rep, static_cast<std::uint64_t>(StreamTag::MethodBase) + static_cast<std::uint64_t>(m));
  return rng();
}

struct ReplicationContext {
  const ClusteredDataset& ds;
  const ClusterMoments& m;
  const LinearContrast& at_truth;  // r = e_1, delta_null = theta_1
  double truth;
  double z;  // normal critical value
  double level;
  std::optional<RegressionFit> ols, sacr;
};

inline MethodOutcome evaluate_method(McMethod method, ReplicationContext& ctx, std::uint64_t seed,
                                     const MonteCarloOptions& opt) {
  MethodOutcome out;
  const FitKind kind = estimator_of(method);
  if (kind == FitKind::OLS && !ctx.ols) ctx.ols = fit(ctx.ds, ctx.m, FitKind::OLS);
  if (kind == FitKind::SACR && !ctx.sacr) ctx.sacr = fit(ctx.ds, ctx.m, FitKind::SACR);
  const RegressionFit& f = kind == FitKind::OLS ? *ctx.ols : *ctx.sacr;
  out.estimate = ctx.at_truth.apply(f.theta);
  const bool exact = numerically_exact(out.estimate, ctx.truth);

  if (is_t_method(method)) {
    VarianceEstimate v;
    if (method == McMethod::CR) {
      v = cr_variance(f, opt.cr1 ? cr1_factor(ctx.ds.G(), ctx.ds.N(), ctx.ds.dim_theta()) : 1.0);
    } else if (method == McMethod::SACR) {
      v = sacr_variance(f);
    } else {
      v = jackknife_variance(ctx.m, f.theta, kind);
    }
    const double se = standard_error(v, ctx.at_truth);
    out.ci_length = 2.0 * ctx.z * se;
    if (exact) {
      out.covered = true;
    } else {
      out.statistic = t_statistic(f, v, ctx.at_truth);
      out.covered = std::abs(out.statistic) <= ctx.z;
    }
  } else if (exact) {
    out.covered = true;  // noiseless fit: every resampled statistic is degenerate
    out.ci_length = 0.0;
  } else if (method == McMethod::SUB) {
    const ScoreSubsampler sub(ctx.m, f, ctx.at_truth);
    std::size_t b = 0;
    if (opt.subsample_b) {
      b = *opt.subsample_b;
    } else {
      b = select_b_min_volatility(sub, ctx.level / 2.0, default_block_grid(ctx.ds.G()), opt.subsample_M, seed).b_star;
    }
    const auto dist = build_subsampling_distribution(sub, b, opt.subsample_M, seed);
    const auto ci = confidence_interval(sub, dist, ctx.level / 2.0, ctx.level / 2.0);
    out.b = b;
    out.ci_length = ci.hi - ci.lo;
    out.statistic = sub.sigma_hat() > 0.0 ? sub.t_statistic() : 0.0;
    out.covered = ci.lo <= ctx.truth && ctx.truth <= ci.hi;
  } else {
    BootstrapResult res;
    if (method == McMethod::WCB) {
      const WildClusterBootstrap wcb(ctx.m, f, ctx.at_truth, opt.wild_denominator);
      res = wild_cluster_bootstrap(wcb, opt.bootstrap_B, seed);
    } else {
      BootstrapOptions bo;
      res = pairs_cluster_bootstrap(ctx.ds, ctx.at_truth, opt.bootstrap_B, seed, bo);
    }
    if (res.statistics.empty()) throw Error(ErrorKind::ZeroDenominator, "every bootstrap draw degenerate");
    out.statistic = res.observed;
    const auto sorted = res.sorted();
    out.covered = !equal_tailed_reject(res.observed, sorted, ctx.level);
  }
  out.ok = true;
  return out;
}

}  // namespace detail

/// Runs `replications` independent datasets through every method. Dataset r
/// comes from stream (seed, r); method m in replication r draws from a seed
/// derived from (seed, r, m), so results do not depend on the method list
/// order or on the thread count.
inline MonteCarloReport run_monte_carlo(const DgpConfig& cfg, const std::vector<McMethod>& methods,
                                        std::size_t replications, double level, std::uint64_t seed,
                                        const MonteCarloOptions& opt = {}) {
  cfg.validate();
  if (replications < 1) throw Error(ErrorKind::InvalidArgument, "need at least one replication");
  if (methods.empty()) throw Error(ErrorKind::InvalidArgument, "no methods requested");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "level must lie in (0, 1)");
  const auto start = std::chrono::steady_clock::now();

  const double truth = cfg.theta_vector()[1];
  const double z = normal_quantile(1.0 - level / 2.0);
  const std::size_t nm = methods.size();

  std::vector<MethodOutcome> outcomes(replications * nm);
  std::vector<char> giant(replications, 0);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;

  parallel_for(replications, opt.threads, [&](std::size_t r) {
    std::optional<ClusteredDataset> ds;
    try {
      ds = draw_dataset(cfg, seed, r);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::GiantCluster) throw;
      giant[r] = 1;
    }
    if (ds) {
      const auto m = compute_moments(*ds);
      const auto contrast = LinearContrast::unit(ds->dim_theta(), 1, truth);
      detail::ReplicationContext ctx{*ds, m, contrast, truth, z, level, std::nullopt, std::nullopt};
      for (std::size_t i = 0; i < nm; ++i) {
        try {
          outcomes[r * nm + i] = detail::evaluate_method(methods[i], ctx, detail::method_seed(seed, r, methods[i]), opt);
        } catch (const Error&) {
          outcomes[r * nm + i].ok = false;
        }
      }
    }
    const std::size_t d = done.fetch_add(1) + 1;
    if (opt.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      opt.progress(d, replications);
    }
  });

  MonteCarloReport rep;
  rep.config = cfg;
  rep.methods = methods;
  rep.replications = replications;
  rep.level = level;
  rep.seed = seed;
  rep.cr1 = opt.cr1;
  rep.subsample_M = opt.subsample_M;
  rep.bootstrap_B = opt.bootstrap_B;
  for (std::size_t r = 0; r < replications; ++r) {
    bool failed = giant[r] != 0;
    for (std::size_t i = 0; i < nm; ++i) failed = failed || !outcomes[r * nm + i].ok;
    rep.failed_replications += failed ? 1 : 0;
    rep.giant_cluster_events += giant[r];
  }

  for (std::size_t i = 0; i < nm; ++i) {
    MethodSummary s;
    s.method = methods[i];
    s.estimator = to_string(estimator_of(methods[i]));
    std::vector<double> cover, sq, len, bs;
    for (std::size_t r = 0; r < replications; ++r) {
      const auto& o = outcomes[r * nm + i];
      if (!o.ok) {
        ++s.failed;
        continue;
      }
      ++s.ok;
      cover.push_back(o.covered ? 1.0 : 0.0);
      sq.push_back((o.estimate - truth) * (o.estimate - truth));
      if (std::isfinite(o.ci_length)) len.push_back(o.ci_length);
      if (o.b > 0) bs.push_back(static_cast<double>(o.b));
      if (opt.keep_statistics && is_t_method(methods[i])) s.statistics.push_back(o.statistic);
    }
    if (s.ok > 0) {
      const double n = static_cast<double>(s.ok);
      s.coverage = detail::pairwise_sum(cover) / n;
      s.rejection = 1.0 - s.coverage;
      s.mse = detail::pairwise_sum(sq) / n;
      if (!len.empty()) s.mean_ci_length = detail::pairwise_sum(len) / static_cast<double>(len.size());
      if (!bs.empty()) s.mean_b = detail::pairwise_sum(bs) / static_cast<double>(bs.size());
    }
    rep.rows.push_back(std::move(s));
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (static_cast<double>(rep.failed_replications) > 0.1 * static_cast<double>(replications))
    throw Error(ErrorKind::TooManyFailedReplications, std::to_string(rep.failed_replications) + " of " +
                                                          std::to_string(replications) + " replications failed");
  return rep;
}

/// One row per method: method,estimator,replications,ok,failed,coverage,
/// rejection,mse,mean_ci_length,mean_b.
inline void write_report_csv(const MonteCarloReport& rep, std::ostream& out) {
  out << "method,estimator,replications,ok,failed,coverage,rejection,mse,mean_ci_length,mean_b\n";
  auto num = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string(); };
  for (const auto& r : rep.rows) {
    out << to_string(r.method) << ',' << r.estimator << ',' << rep.replications << ',' << r.ok << ',' << r.failed
        << ',' << num(r.coverage) << ',' << num(r.rejection) << ',' << num(r.mse) << ',' << num(r.mean_ci_length)
        << ',' << num(r.mean_b) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Q-Q summaries
// ---------------------------------------------------------------------------

/// (normal quantile at (i - 0.5)/n, i-th smallest statistic).
inline std::vector<std::pair<double, double>> qq_pairs(std::vector<double> stats) {
  std::sort(stats.begin(), stats.end());
  const double n = static_cast<double>(stats.size());
  std::vector<std::pair<double, double>> out;
  out.reserve(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i)
    out.emplace_back(normal_quantile((static_cast<double>(i) + 0.5) / n), stats[i]);
  return out;
}

/// Least-squares slope of empirical on theoretical quantiles.
inline double qq_slope(std::span<const std::pair<double, double>> qq) {
  if (qq.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two points");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : qq) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(qq.size());
  my /= static_cast<double>(qq.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [x, y] : qq) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  return sxy / sxx;
}

/// sup_t |F_n(t) - Phi(t)|.
inline double ks_to_normal(std::vector<double> stats) {
  std::sort(stats.begin(), stats.end());
  const double n = static_cast<double>(stats.size());
  double d = 0.0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const double f = normal_cdf(stats[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Q-Q data for the t-statistic of one method over fresh datasets.
inline std::vector<std::pair<double, double>> qq_data(const DgpConfig& cfg, McMethod method, std::size_t replications,
                                                      std::uint64_t seed, MonteCarloOptions opt = {}) {
  if (!is_t_method(method))
    throw Error(ErrorKind::InvalidArgument, "Q-Q data is available for CR, JACK, SACR and SACR_JACK");
  if (replications < 100) throw Error(ErrorKind::InvalidArgument, "need at least 100 replications");
  opt.keep_statistics = true;
  const auto rep = run_monte_carlo(cfg, {method}, replications, 0.05, seed, opt);
  return qq_pairs(rep.rows.front().statistics);
}

inline void write_qq_csv(std::span<const std::pair<double, double>> qq, std::ostream& out) {
  out << "theoretical,empirical\n";
  for (const auto& [x, y] : qq) out << detail::format_double(x) << ',' << detail::format_double(y) << '\n';
}

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_SIMULATION_HPP
