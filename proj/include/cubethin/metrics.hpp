#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cubethin/control_variates.hpp"
#include "cubethin/errors.hpp"
#include "cubethin/numerics.hpp"
#include "cubethin/rng.hpp"
#include "cubethin/thinning.hpp"

namespace cubethin {

/// Gaussian radial base kernel k(x, y) = exp(-|x-y|^2 / (2 l^2)).
struct SteinKernelConfig {
  double bandwidth = 1.0;

  void validate() const {
    if (!(bandwidth > 0.0)) throw InvalidRange("SteinKernelConfig: bandwidth must be positive");
  }
};

/// Stein kernel k_p(x, y) for the Gaussian base kernel, closed form:
///   k * [ d/l^2 - r^2/l^4 + <s_x - s_y, x - y>/l^2 + <s_x, s_y> ].
inline double stein_kernel(const Vector& x, const Vector& y, const Vector& sx, const Vector& sy,
                           const SteinKernelConfig& cfg) {
  cfg.validate();
  const Index d = x.size();
  if (y.size() != d || sx.size() != d || sy.size() != d)
    throw DimensionMismatch("stein_kernel: dimension mismatch");
  const double inv_l2 = 1.0 / (cfg.bandwidth * cfg.bandwidth);
  const double r2 = (x - y).squaredNorm();
  const double base = std::exp(-0.5 * r2 * inv_l2);
  const double term = static_cast<double>(d) * inv_l2 - r2 * inv_l2 * inv_l2 +
                      (sx - sy).dot(x - y) * inv_l2 + sx.dot(sy);
  return base * term;
}

/// Kernel Stein discrepancy (1/M^2) sum_{m,n} sign_m sign_n k_p(X_m, X_n).
/// Pass an empty `signs` for a plain (unsigned) subsample.
inline double ksd(const Matrix& points, const Matrix& scores, const SteinKernelConfig& cfg,
                  const std::vector<int>& signs = {}) {
  cfg.validate();
  const Index m = points.rows();
  if (m < 1) throw InvalidRange("ksd: needs at least one point");
  if (scores.rows() != m || scores.cols() != points.cols())
    throw MissingScores("ksd: scores missing or mismatched");
  if (!signs.empty() && static_cast<Index>(signs.size()) != m)
    throw DimensionMismatch("ksd: signs length mismatch");

  auto sign_of = [&](Index i) { return signs.empty() ? 1.0 : static_cast<double>(signs[i]); };
  double acc = 0.0;
  Vector xi, si;
  for (Index i = 0; i < m; ++i) {
    xi = points.row(i).transpose();
    si = scores.row(i).transpose();
    acc += sign_of(i) * sign_of(i) * stein_kernel(xi, xi, si, si, cfg);
    for (Index j = i + 1; j < m; ++j) {
      const double v = stein_kernel(xi, points.row(j).transpose(), si,
                                    scores.row(j).transpose(), cfg);
      acc += 2.0 * sign_of(i) * sign_of(j) * v;
    }
  }
  return acc / (static_cast<double>(m) * static_cast<double>(m));
}

/// Median of the pairwise Euclidean distances over a seeded subsample of at
/// most 1000 points.
inline double median_bandwidth(const Matrix& points, std::uint64_t seed = 0x9d1c5) {
  const Index n = points.rows();
  if (n < 2) throw InvalidRange("median_bandwidth: needs at least two points");

  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  Index use = std::min<Index>(n, 1000);
  if (n > use) {
    Rng rng(seed);
    for (Index i = 0; i < use; ++i) {
      const Index j = i + rng.uniform_below(n - i);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
  }

  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(use * (use - 1) / 2));
  for (Index i = 0; i < use; ++i)
    for (Index j = i + 1; j < use; ++j)
      dist.push_back((points.row(idx[static_cast<std::size_t>(i)]) -
                      points.row(idx[static_cast<std::size_t>(j)]))
                         .norm());

  const std::size_t half = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + half, dist.end());
  double med = dist[half];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + half);
    med = 0.5 * (med + lower);
  }
  if (!(med > 0.0)) throw DegenerateSample("median_bandwidth: all sampled points identical");
  return med;
}

/// Finite signed measure with an explicit support.
struct EmpiricalSignedMeasure {
  Matrix points;   // M' x d
  Vector weights;  // signed

  double total_mass() const { return weights.sum(); }

  void validate() const {
    if (points.rows() != weights.size())
      throw DimensionMismatch("EmpiricalSignedMeasure: one weight per point");
    if (points.rows() < 1) throw InvalidRange("EmpiricalSignedMeasure: empty support");
  }
};

/// Measure of a signed subsample: point masses sgn(w_n) Omega/M at the
/// selected states (multiplicities kept as separate atoms).
inline EmpiricalSignedMeasure measure_from_subsample(const Chain& chain,
                                                     const SignedSubsample& sub) {
  const Index m = sub.size();
  if (m < 1) throw InvalidRange("measure_from_subsample: empty subsample");
  Matrix pts(m, chain.dim());
  Vector w(m);
  for (Index i = 0; i < m; ++i) {
    pts.row(i) = chain.states.row(sub.indices[static_cast<std::size_t>(i)]);
    w(i) = sub.magnitude * static_cast<double>(sub.signs[static_cast<std::size_t>(i)]);
  }
  return EmpiricalSignedMeasure{std::move(pts), std::move(w)};
}

/// Uniform measure on the listed states, mass 1/M each.
inline EmpiricalSignedMeasure measure_from_indices(const Chain& chain,
                                                   const std::vector<Index>& indices) {
  const Index m = static_cast<Index>(indices.size());
  if (m < 1) throw InvalidRange("measure_from_indices: empty index list");
  Matrix pts(m, chain.dim());
  for (Index i = 0; i < m; ++i) pts.row(i) = chain.states.row(indices[static_cast<std::size_t>(i)]);
  return EmpiricalSignedMeasure{std::move(pts), Vector::Constant(m, 1.0 / static_cast<double>(m))};
}

/// Uniform measure on the post-burn-in chain.
inline EmpiricalSignedMeasure measure_from_chain(const Chain& chain, Index burn_in = 0) {
  if (burn_in < 0 || burn_in >= chain.size())
    throw InvalidRange("measure_from_chain: burn-in out of range");
  const Index m = chain.size() - burn_in;
  return EmpiricalSignedMeasure{chain.states.bottomRows(m),
                                Vector::Constant(m, 1.0 / static_cast<double>(m))};
}

/// Generalized energy distance between finite signed measures:
///   2/(a1 a2) sum |x - y| - 1/a1^2 sum |x - x'| - 1/a2^2 sum |y - y'|,
/// the last term omitted when drop_ref_term is set (it does not depend on
/// nu).  Throws ZeroMass when either total mass vanishes.
inline double energy_distance(const EmpiricalSignedMeasure& nu,
                              const EmpiricalSignedMeasure& ref, bool drop_ref_term = false) {
  nu.validate();
  ref.validate();
  if (nu.points.cols() != ref.points.cols())
    throw DimensionMismatch("energy_distance: dimension mismatch");
  const double a1 = nu.total_mass();
  const double a2 = ref.total_mass();
  const double scale1 = nu.weights.cwiseAbs().sum();
  const double scale2 = ref.weights.cwiseAbs().sum();
  if (std::abs(a1) <= 1e-12 * scale1 || std::abs(a2) <= 1e-12 * scale2)
    throw ZeroMass("energy_distance: zero total mass");

  double cross = 0.0;
  for (Index i = 0; i < nu.points.rows(); ++i)
    for (Index j = 0; j < ref.points.rows(); ++j)
      cross += nu.weights(i) * ref.weights(j) * (nu.points.row(i) - ref.points.row(j)).norm();

  double self1 = 0.0;
  for (Index i = 0; i < nu.points.rows(); ++i)
    for (Index j = i + 1; j < nu.points.rows(); ++j)
      self1 += 2.0 * nu.weights(i) * nu.weights(j) * (nu.points.row(i) - nu.points.row(j)).norm();

  double result = 2.0 * cross / (a1 * a2) - self1 / (a1 * a1);
  if (!drop_ref_term) {
    double self2 = 0.0;
    for (Index i = 0; i < ref.points.rows(); ++i)
      for (Index j = i + 1; j < ref.points.rows(); ++j)
        self2 +=
            2.0 * ref.weights(i) * ref.weights(j) * (ref.points.row(i) - ref.points.row(j)).norm();
    result -= self2 / (a2 * a2);
  }
  return result;
}

/// Componentwise standardization followed by the standard normal CDF; maps
/// R^d into (0, 1)^d.
inline Matrix gaussian_map(const Matrix& points, const Vector& ref_mean, const Vector& ref_sd) {
  if (ref_mean.size() != points.cols() || ref_sd.size() != points.cols())
    throw DimensionMismatch("gaussian_map: moment vectors must match dimension");
  if ((ref_sd.array() <= 0.0).any())
    throw InvalidRange("gaussian_map: reference sd must be positive");
  Matrix out(points.rows(), points.cols());
  for (Index j = 0; j < points.cols(); ++j) {
    const double inv_sd = 1.0 / ref_sd(j);
    for (Index i = 0; i < points.rows(); ++i) {
      const double z = (points(i, j) - ref_mean(j)) * inv_sd;
      out(i, j) = 0.5 * std::erfc(-z / std::sqrt(2.0));
    }
  }
  return out;
}

/// Randomized star discrepancy: both supports are pushed to the unit cube
/// through gaussian_map (moments from ref), and the maximal absolute gap of
/// the signed box masses over n_boxes random anchored boxes is returned.
inline double star_discrepancy(const EmpiricalSignedMeasure& nu,
                               const EmpiricalSignedMeasure& ref, Index n_boxes, Rng& rng) {
  nu.validate();
  ref.validate();
  if (n_boxes < 1) throw InvalidRange("star_discrepancy: n_boxes must be >= 1");
  const Index d = ref.points.cols();
  if (nu.points.cols() != d) throw DimensionMismatch("star_discrepancy: dimension mismatch");

  const double a2 = ref.total_mass();
  if (std::abs(a2) <= 1e-12 * ref.weights.cwiseAbs().sum())
    throw ZeroMass("star_discrepancy: reference has zero mass");
  Vector mean = ref.points.transpose() * ref.weights / a2;
  Vector sd(d);
  for (Index j = 0; j < d; ++j) {
    const double var =
        (ref.points.col(j).array() - mean(j)).square().matrix().dot(ref.weights) / a2;
    if (!(var > 0.0))
      throw DegenerateSample("star_discrepancy: reference is degenerate in a component");
    sd(j) = std::sqrt(var);
  }

  Matrix mapped_nu = gaussian_map(nu.points, mean, sd);
  Matrix mapped_ref = gaussian_map(ref.points, mean, sd);

  double worst = 0.0;
  Vector corner(d);
  for (Index b = 0; b < n_boxes; ++b) {
    for (Index j = 0; j < d; ++j) corner(j) = rng.uniform01();
    double mass_nu = 0.0, mass_ref = 0.0;
    for (Index i = 0; i < mapped_nu.rows(); ++i)
      if ((mapped_nu.row(i).transpose().array() <= corner.array()).all()) mass_nu += nu.weights(i);
    for (Index i = 0; i < mapped_ref.rows(); ++i)
      if ((mapped_ref.row(i).transpose().array() <= corner.array()).all())
        mass_ref += ref.weights(i);
    worst = std::max(worst, std::abs(mass_ref - mass_nu));
  }
  return worst;
}

}  // namespace cubethin
