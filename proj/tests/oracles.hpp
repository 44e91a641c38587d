// Independent reference computations for the unit tests. Everything here
// works on plain nested std::vector<double> and long double arithmetic so it
// shares no code path with the library (no Eigen decompositions).
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "clusterstable/data.hpp"

namespace oracle {

using Mat = std::vector<std::vector<long double>>;
using Vec = std::vector<long double>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0L)); }

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Vec matvec(const Mat& a, const Vec& v) {
  Vec out(a.size(), 0.0L);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += a[i][j] * v[j];
  return out;
}

/// Gauss-Jordan inverse with partial pivoting.
inline Mat inverse(Mat a) {
  const std::size_t n = a.size();
  Mat inv = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0L;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (a[piv][col] == 0.0L) throw std::runtime_error("singular");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const long double d = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const long double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

/// One observation: regressors and response.
struct Obs {
  std::size_t cluster;
  Vec x;
  long double y;
};

inline std::vector<Obs> flatten(const clusterstable::ClusteredDataset& ds) {
  std::vector<Obs> out;
  for (std::size_t g = 0; g < ds.G(); ++g) {
    const auto& c = ds[g];
    for (clusterstable::Index i = 0; i < c.size(); ++i) {
      Obs o{g, Vec(static_cast<std::size_t>(c.X.cols())), c.Y(i)};
      for (clusterstable::Index j = 0; j < c.X.cols(); ++j) o.x[static_cast<std::size_t>(j)] = c.X(i, j);
      out.push_back(std::move(o));
    }
  }
  return out;
}

/// Observation-level weighted normal equations: (sum w x x')^-1 sum w x y,
/// with w = 1 or w = 1/N_g, skipping cluster `skip` when given.
inline Vec wls(const clusterstable::ClusteredDataset& ds, bool size_weights, long skip = -1) {
  const auto obs = flatten(ds);
  const std::size_t k = static_cast<std::size_t>(ds.dim_theta());
  Mat xtx = zeros(k, k);
  Vec xty(k, 0.0L);
  for (const auto& o : obs) {
    if (static_cast<long>(o.cluster) == skip) continue;
    const long double w = size_weights ? 1.0L / static_cast<long double>(ds[o.cluster].size()) : 1.0L;
    for (std::size_t a = 0; a < k; ++a) {
      xty[a] += w * o.x[a] * o.y;
      for (std::size_t b = 0; b < k; ++b) xtx[a][b] += w * o.x[a] * o.x[b];
    }
  }
  return matvec(inverse(xtx), xty);
}

/// Cluster sandwich built observation by observation:
/// B^-1 (sum_g w_g^2 s_g s_g') B^-1 with B = sum w x x' and s_g = sum_i x e.
inline Mat sandwich(const clusterstable::ClusteredDataset& ds, bool size_weights) {
  const auto obs = flatten(ds);
  const std::size_t k = static_cast<std::size_t>(ds.dim_theta());
  const Vec theta = wls(ds, size_weights);
  Mat bread = zeros(k, k);
  std::vector<Vec> s(ds.G(), Vec(k, 0.0L));
  for (const auto& o : obs) {
    const long double w = size_weights ? 1.0L / static_cast<long double>(ds[o.cluster].size()) : 1.0L;
    long double fitted = 0.0L;
    for (std::size_t a = 0; a < k; ++a) fitted += o.x[a] * theta[a];
    const long double e = o.y - fitted;
    for (std::size_t a = 0; a < k; ++a) {
      s[o.cluster][a] += o.x[a] * e;
      for (std::size_t b = 0; b < k; ++b) bread[a][b] += w * o.x[a] * o.x[b];
    }
  }
  Mat meat = zeros(k, k);
  for (std::size_t g = 0; g < ds.G(); ++g) {
    const long double w = size_weights ? 1.0L / static_cast<long double>(ds[g].size()) : 1.0L;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) meat[a][b] += w * w * s[g][a] * s[g][b];
  }
  const Mat binv = inverse(bread);
  return matmul(matmul(binv, meat), binv);
}

/// HC0: (X'X)^-1 (sum_i e_i^2 x_i x_i') (X'X)^-1 over individual rows.
inline Mat hc0(const clusterstable::ClusteredDataset& ds) {
  const auto obs = flatten(ds);
  const std::size_t k = static_cast<std::size_t>(ds.dim_theta());
  const Vec theta = wls(ds, false);
  Mat xtx = zeros(k, k), meat = zeros(k, k);
  for (const auto& o : obs) {
    long double fitted = 0.0L;
    for (std::size_t a = 0; a < k; ++a) fitted += o.x[a] * theta[a];
    const long double e = o.y - fitted;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        xtx[a][b] += o.x[a] * o.x[b];
        meat[a][b] += e * e * o.x[a] * o.x[b];
      }
  }
  const Mat inv = inverse(xtx);
  return matmul(matmul(inv, meat), inv);
}

/// Random clustered dataset with an intercept and `k - 1` regressors.
inline clusterstable::ClusteredDataset random_dataset(std::size_t G, std::size_t k, std::uint64_t seed,
                                                      std::size_t min_size = 1, std::size_t max_size = 6) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> size(min_size, max_size);
  std::vector<clusterstable::Cluster> clusters;
  std::vector<std::string> names{"(Intercept)"};
  for (std::size_t j = 1; j < k; ++j) names.push_back("x" + std::to_string(j));
  for (std::size_t g = 0; g < G; ++g) {
    const auto n = static_cast<clusterstable::Index>(size(rng));
    clusterstable::Cluster c;
    c.id = "c" + std::to_string(g);
    c.X.resize(n, static_cast<clusterstable::Index>(k));
    c.Y.resize(n);
    const double shock = normal(rng);
    for (clusterstable::Index i = 0; i < n; ++i) {
      c.X(i, 0) = 1.0;
      double y = 0.5;
      for (std::size_t j = 1; j < k; ++j) {
        c.X(i, static_cast<clusterstable::Index>(j)) = normal(rng) + 0.3 * shock;
        y += static_cast<double>(j) * c.X(i, static_cast<clusterstable::Index>(j));
      }
      c.Y(i) = y + shock + normal(rng) * (1.0 + std::abs(c.X(i, k > 1 ? 1 : 0)));
    }
    clusters.push_back(std::move(c));
  }
  return clusterstable::make_dataset(std::move(clusters), names);
}

}  // namespace oracle
