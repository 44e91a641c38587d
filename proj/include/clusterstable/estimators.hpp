#ifndef CLUSTERSTABLE_ESTIMATORS_HPP
#define CLUSTERSTABLE_ESTIMATORS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clusterstable/data.hpp"
#include "clusterstable/errors.hpp"

namespace clusterstable {

enum class FitKind { OLS, SACR };
enum class VarianceMethod { CR, CR_JACK, SACR, SACR_JACK };

inline std::string to_string(FitKind k) { return k == FitKind::OLS ? "OLS" : "SACR"; }
inline std::string to_string(VarianceMethod m) {
  switch (m) {
    case VarianceMethod::CR: return "CR";
    case VarianceMethod::CR_JACK: return "CR_JACK";
    case VarianceMethod::SACR: return "SACR";
    case VarianceMethod::SACR_JACK: return "SACR_JACK";
  }
  return "?";
}

/// Gram matrices whose 2-norm condition number reaches this are rejected.
inline constexpr double kMaxConditionNumber = 1e12;

/// Per-cluster weight in the Gram matrix and in X'Y: 1 for OLS, 1/N_g for
/// the size-adjusted estimator.
inline double cluster_weight(FitKind kind, Index cluster_size) {
  return kind == FitKind::OLS ? 1.0 : 1.0 / static_cast<double>(cluster_size);
}

/// Per-cluster sufficient statistics X_g'X_g, X_g'Y_g and N_g. Everything
/// that refits on subsets of clusters (jackknife, subsampling, bootstraps)
/// works from these instead of the raw rows.
struct ClusterMoments {
  std::vector<Matrix> xtx;
  std::vector<Vector> xty;
  std::vector<Index> size;

  std::size_t G() const { return xtx.size(); }
  Index dim() const { return xtx.empty() ? 0 : xtx.front().rows(); }
};

inline ClusterMoments compute_moments(const ClusteredDataset& ds) {
  ClusterMoments m;
  m.xtx.reserve(ds.G());
  m.xty.reserve(ds.G());
  m.size.reserve(ds.G());
  for (const auto& c : ds.clusters()) {
    Matrix xtx = Matrix::Zero(c.X.cols(), c.X.cols());
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(c.X.transpose());
    m.xtx.push_back(xtx.selfadjointView<Eigen::Lower>());
    m.xty.push_back(c.X.transpose() * c.Y);
    m.size.push_back(c.size());
  }
  return m;
}

/// 2-norm condition number of a symmetric matrix; +inf when not positive
/// definite.
inline double condition_number(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  if (ev.size() == 0) return std::numeric_limits<double>::infinity();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || !std::isfinite(hi)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// Inverse of a symmetric positive definite Gram matrix via pivoted LDL'.
/// Throws SingularGram (with the condition number) past kMaxConditionNumber.
inline Matrix invert_gram(const Matrix& gram, ErrorKind kind = ErrorKind::SingularGram) {
  const double cond = condition_number(gram);
  if (!(cond < kMaxConditionNumber)) {
    Error e(kind, "Gram matrix is singular or ill-conditioned (condition number " +
                      detail::format_double(cond) + ")");
    e.condition_number = cond;
    throw e;
  }
  Matrix inv = gram.ldlt().solve(Matrix::Identity(gram.rows(), gram.cols()));
  return 0.5 * (inv + inv.transpose());
}

// ---------------------------------------------------------------------------

/// Unit-norm contrast r with hypothesized value of r'theta. A vector that is
/// not of unit length is rescaled, and delta_null with it, so the
/// hypothesis r'theta = delta_null is unchanged.
class LinearContrast {
 public:
  LinearContrast(Vector r, double delta_null = 0.0) : r_(std::move(r)), delta_null_(delta_null) {
    const double norm = r_.norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw Error(ErrorKind::InvalidArgument, "contrast vector must be finite and non-zero");
    if (std::abs(norm - 1.0) > 1e-12) {
      r_ /= norm;
      delta_null_ /= norm;
    }
  }

  static LinearContrast unit(Index dim, Index j, double delta_null = 0.0) {
    if (j < 0 || j >= dim) throw Error(ErrorKind::InvalidArgument, "coefficient index out of range");
    Vector r = Vector::Zero(dim);
    r(j) = 1.0;
    return LinearContrast(std::move(r), delta_null);
  }

  const Vector& r() const { return r_; }
  double delta_null() const { return delta_null_; }
  double apply(const Vector& theta) const { return r_.dot(theta); }
  LinearContrast with_null(double delta) const { return LinearContrast(r_, delta); }

 private:
  Vector r_;
  double delta_null_;
};

// ---------------------------------------------------------------------------

struct RegressionFit {
  FitKind kind = FitKind::OLS;
  Vector theta;
  Matrix gram;          // sum_g w_g X_g'X_g
  Matrix gram_inverse;
  std::vector<Vector> scores;     // S_g = X_g'U_g (unweighted)
  std::vector<Vector> residuals;  // U_g
  std::vector<double> weights;    // w_g

  std::size_t G() const { return scores.size(); }
};

namespace detail {

inline RegressionFit fit_weighted(const ClusteredDataset& ds, const ClusterMoments& m, FitKind kind) {
  const Index dim = ds.dim_theta();
  RegressionFit fit;
  fit.kind = kind;
  fit.gram = Matrix::Zero(dim, dim);
  Vector rhs = Vector::Zero(dim);
  fit.weights.reserve(ds.G());
  for (std::size_t g = 0; g < ds.G(); ++g) {
    const double w = cluster_weight(kind, m.size[g]);
    fit.weights.push_back(w);
    fit.gram.noalias() += w * m.xtx[g];
    rhs.noalias() += w * m.xty[g];
  }
  fit.gram_inverse = invert_gram(fit.gram);
  fit.theta = fit.gram.ldlt().solve(rhs);
  fit.scores.reserve(ds.G());
  fit.residuals.reserve(ds.G());
  for (const auto& c : ds.clusters()) {
    Vector u = c.Y - c.X * fit.theta;
    fit.scores.push_back(c.X.transpose() * u);
    fit.residuals.push_back(std::move(u));
  }
  return fit;
}

inline Matrix sandwich(const RegressionFit& fit, double a_G) {
  const Index dim = fit.theta.size();
  Matrix meat = Matrix::Zero(dim, dim);
  for (std::size_t g = 0; g < fit.G(); ++g) {
    const double w = fit.weights[g];
    meat.noalias() += (w * w) * fit.scores[g] * fit.scores[g].transpose();
  }
  Matrix v = a_G * fit.gram_inverse * meat * fit.gram_inverse;
  return 0.5 * (v + v.transpose());
}

}  // namespace detail

inline RegressionFit fit(const ClusteredDataset& ds, FitKind kind) {
  return detail::fit_weighted(ds, compute_moments(ds), kind);
}
inline RegressionFit fit(const ClusteredDataset& ds, const ClusterMoments& m, FitKind kind) {
  return detail::fit_weighted(ds, m, kind);
}

/// Pooled OLS, theta = (sum X_g'X_g)^-1 sum X_g'Y_g.
inline RegressionFit fit_ols(const ClusteredDataset& ds) { return fit(ds, FitKind::OLS); }

/// Size-adjusted least squares: every cluster enters with weight 1/N_g,
/// i.e. weighted least squares with observation weight 1/N_g.
inline RegressionFit fit_sacr(const ClusteredDataset& ds) { return fit(ds, FitKind::SACR); }

// ---------------------------------------------------------------------------

struct VarianceEstimate {
  Matrix matrix;
  VarianceMethod method = VarianceMethod::CR;
  double a_G = 1.0;
};

/// The common software small-sample factor G/(G-1) * (N-1)/(N-k).
inline double cr1_factor(std::size_t G, Index N, Index dim) {
  const double g = static_cast<double>(G);
  const double n = static_cast<double>(N);
  return g / (g - 1.0) * (n - 1.0) / (n - static_cast<double>(dim));
}

/// a_G * Q^-1 (sum S_g S_g') Q^-1 with Q = sum X_g'X_g.
inline VarianceEstimate cr_variance(const RegressionFit& fit, double a_G = 1.0) {
  if (fit.kind != FitKind::OLS) throw Error(ErrorKind::InvalidArgument, "cr_variance needs an OLS fit");
  return {detail::sandwich(fit, a_G), VarianceMethod::CR, a_G};
}

/// a_G * Q_w^-1 (sum N_g^-2 S_g S_g') Q_w^-1 with Q_w = sum N_g^-1 X_g'X_g.
inline VarianceEstimate sacr_variance(const RegressionFit& fit, double a_G = 1.0) {
  if (fit.kind != FitKind::SACR) throw Error(ErrorKind::InvalidArgument, "sacr_variance needs a SACR fit");
  return {detail::sandwich(fit, a_G), VarianceMethod::SACR, a_G};
}

inline VarianceEstimate analytic_variance(const RegressionFit& fit, double a_G = 1.0) {
  return fit.kind == FitKind::OLS ? cr_variance(fit, a_G) : sacr_variance(fit, a_G);
}

/// Leave-one-cluster-out coefficient for every cluster, in cluster order.
/// Leave-one-out sums are assembled from prefix and suffix sums, never by
/// subtraction from the total.
inline std::vector<Vector> leave_one_out_estimates(const ClusterMoments& m, FitKind kind) {
  const std::size_t G = m.G();
  const Index dim = m.dim();
  std::vector<Matrix> pre_a(G + 1, Matrix::Zero(dim, dim)), suf_a(G + 1, Matrix::Zero(dim, dim));
  std::vector<Vector> pre_b(G + 1, Vector::Zero(dim)), suf_b(G + 1, Vector::Zero(dim));
  for (std::size_t g = 0; g < G; ++g) {
    const double w = cluster_weight(kind, m.size[g]);
    pre_a[g + 1] = pre_a[g] + w * m.xtx[g];
    pre_b[g + 1] = pre_b[g] + w * m.xty[g];
  }
  for (std::size_t g = G; g-- > 0;) {
    const double w = cluster_weight(kind, m.size[g]);
    suf_a[g] = suf_a[g + 1] + w * m.xtx[g];
    suf_b[g] = suf_b[g + 1] + w * m.xty[g];
  }
  std::vector<Vector> out;
  out.reserve(G);
  for (std::size_t g = 0; g < G; ++g) {
    const Matrix a = pre_a[g] + suf_a[g + 1];
    if (!(condition_number(a) < kMaxConditionNumber)) {
      Error e(ErrorKind::SingularLeaveOneOutGram,
              "Gram matrix without cluster " + std::to_string(g) + " is singular");
      e.cluster = g;
      throw e;
    }
    out.push_back(a.ldlt().solve(pre_b[g] + suf_b[g + 1]));
  }
  return out;
}

/// sum_g (theta_{-g} - theta)(theta_{-g} - theta)'. Already on the scale of
/// Var(theta_hat); t-statistics use it as is.
inline VarianceEstimate jackknife_variance(const ClusterMoments& m, const Vector& theta_full, FitKind kind) {
  const auto loo = leave_one_out_estimates(m, kind);
  const Index dim = m.dim();
  Matrix v = Matrix::Zero(dim, dim);
  for (const auto& t : loo) {
    const Vector d = t - theta_full;
    v.noalias() += d * d.transpose();
  }
  return {0.5 * (v + v.transpose()),
          kind == FitKind::OLS ? VarianceMethod::CR_JACK : VarianceMethod::SACR_JACK, 1.0};
}

inline VarianceEstimate jackknife_variance(const ClusteredDataset& ds, FitKind kind) {
  const auto m = compute_moments(ds);
  const auto full = fit(ds, m, kind);
  return jackknife_variance(m, full.theta, kind);
}

/// (r'theta - delta_null) / sqrt(r' V r).
inline double t_statistic(const RegressionFit& fit, const VarianceEstimate& v, const LinearContrast& c) {
  const double var = c.r().dot(v.matrix * c.r());
  if (!(var > 0.0) || !std::isfinite(var))
    throw Error(ErrorKind::ZeroStandardError, "r'Vr = " + detail::format_double(var));
  return (c.apply(fit.theta) - c.delta_null()) / std::sqrt(var);
}

inline double standard_error(const VarianceEstimate& v, const LinearContrast& c) {
  const double var = c.r().dot(v.matrix * c.r());
  return var > 0.0 ? std::sqrt(var) : 0.0;
}

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_ESTIMATORS_HPP
