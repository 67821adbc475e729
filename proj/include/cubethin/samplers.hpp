#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>

#include "cubethin/control_variates.hpp"
#include "cubethin/errors.hpp"
#include "cubethin/numerics.hpp"
#include "cubethin/rng.hpp"

namespace cubethin {

namespace detail {

/// Scaled complementary error function exp(x^2) erfc(x); stable for large x
/// where the naive product would overflow/underflow.
inline double erfcx(double x) {
  if (x < 0.0) {
    // erfcx(x) = 2 exp(x^2) - erfcx(-x); overflows to +inf for x << 0,
    // which downstream ratios handle (they tend to zero).
    const double e = std::exp(x * x);
    return 2.0 * e - erfcx(-x);
  }
  if (x < 25.0) return std::exp(x * x) * std::erfc(x);
  // Asymptotic series 1/(x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4) - 15/(8x^6)).
  const double inv2 = 1.0 / (2.0 * x * x);
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= -(2.0 * k - 1.0) * inv2;
    sum += term;
  }
  return sum / (x * std::sqrt(M_PI));
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

/// Multivariate normal restricted to the positive orthant [0, inf)^d.
/// Holds the precision matrix so conditional parameters are O(d) per query.
class TruncatedNormalTarget {
 public:
  TruncatedNormalTarget(Vector mu, Matrix sigma) : mu_(std::move(mu)), sigma_(std::move(sigma)) {
    const Index d = mu_.size();
    if (sigma_.rows() != d || sigma_.cols() != d)
      throw DimensionMismatch("TruncatedNormalTarget: Sigma must be d x d");
    detail::require_finite(mu_, "TruncatedNormalTarget: mu");
    detail::require_finite(sigma_, "TruncatedNormalTarget: Sigma");
    const double scale = sigma_.cwiseAbs().maxCoeff();
    if ((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + scale))
      throw Error("TruncatedNormalTarget: Sigma not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_);
    if (eig.eigenvalues()(0) <= 0.0)
      throw Error("TruncatedNormalTarget: Sigma not positive definite");
    precision_ = sigma_.llt().solve(Matrix::Identity(d, d));
  }

  Index dim() const { return mu_.size(); }
  const Vector& mu() const { return mu_; }
  const Matrix& sigma() const { return sigma_; }
  const Matrix& precision() const { return precision_; }

 private:
  Vector mu_;
  Matrix sigma_;
  Matrix precision_;
};

/// Mean and standard deviation of coordinate i of the *untruncated* Gaussian
/// conditioned on the other coordinates of x.
inline std::pair<double, double> cond_params(const TruncatedNormalTarget& target,
                                             const Vector& x, Index i) {
  const Index d = target.dim();
  if (x.size() != d) throw DimensionMismatch("cond_params: x has wrong length");
  if (i < 0 || i >= d) throw InvalidRange("cond_params: coordinate out of range");
  const Matrix& lambda = target.precision();
  const double lii = lambda(i, i);
  double dot = lambda.col(i).dot(x - target.mu()) - lii * (x(i) - target.mu()(i));
  const double mean = target.mu()(i) - dot / lii;
  return {mean, 1.0 / std::sqrt(lii)};
}

/// Mean of N(m, s^2) truncated to [0, inf):  m + s phi(a)/(1 - Phi(a)) with
/// a = -m/s, evaluated through the scaled complementary error function.
inline double truncnorm_mean(double m, double s) {
  if (!(s > 0.0)) throw InvalidRange("truncnorm_mean: s must be positive");
  const double a = -m / s;
  const double ratio = std::sqrt(2.0 / M_PI) / detail::erfcx(a / std::sqrt(2.0));
  return m + s * ratio;
}

/// Exact draw from N(m, s^2) restricted to [0, inf).  Plain rejection when the
/// truncation point is left of the mean; the translated-exponential
/// accept-reject scheme in the deep tail.
inline double sample_truncnorm(double m, double s, Rng& rng) {
  if (!(s > 0.0)) throw InvalidRange("sample_truncnorm: s must be positive");
  const double a = -m / s;  // draw Z ~ N(0,1) conditioned on Z >= a
  double z;
  if (a <= 0.0) {
    do {
      z = rng.normal();
    } while (z < a);
  } else {
    const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
      z = a + rng.exponential(lambda);
      const double u = rng.uniform01();
      const double rho = std::exp(-0.5 * (z - lambda) * (z - lambda));
      if (u <= rho) break;
    }
  }
  const double x = m + s * z;
  // z >= -m/s guarantees x >= 0 in exact arithmetic; guard the boundary.
  return x > 0.0 ? x : std::numeric_limits<double>::min();
}

/// Chain produced by the random-scan Gibbs sampler for a truncated normal.
struct GibbsChain {
  Matrix states;  // N x d, every state in the positive orthant
  std::uint64_t seed = 0;
  Vector mu;
  Matrix sigma;

  Chain to_chain() const { return Chain{states, std::nullopt, 0}; }
};

/// Random-scan Gibbs sampler: each iteration resamples one uniformly chosen
/// coordinate from its conditional truncated normal and records the full
/// state.  Default start is componentwise max(mu, 1).
inline GibbsChain truncnorm_gibbs(const TruncatedNormalTarget& target, Index n_steps,
                                  std::uint64_t seed,
                                  std::optional<Vector> x0 = std::nullopt) {
  if (n_steps < 1) throw InvalidRange("truncnorm_gibbs: N must be >= 1");
  const Index d = target.dim();
  Vector x;
  if (x0) {
    if (x0->size() != d) throw DimensionMismatch("truncnorm_gibbs: x0 has wrong length");
    if ((x0->array() <= 0.0).any())
      throw InvalidRange("truncnorm_gibbs: x0 must lie in the open positive orthant");
    x = *x0;
  } else {
    x = target.mu().cwiseMax(1.0);
  }

  Rng rng(seed);
  Matrix states(n_steps, d);
  for (Index n = 0; n < n_steps; ++n) {
    const Index i = rng.uniform_below(d);
    auto [m, s] = cond_params(target, x, i);
    x(i) = sample_truncnorm(m, s, rng);
    states.row(n) = x.transpose();
  }
  return GibbsChain{std::move(states), seed, target.mu(), target.sigma()};
}

/// Raw Gibbs control-variate values for the random-scan truncated-normal
/// sampler: column i at step n is X_n[i] - E[X_n[i] | X_{n-1}] with
/// E[X_n[i] | X_{n-1}] = (1/d) m_i(X_{n-1}) + (1 - 1/d) X_{n-1}[i], where m_i
/// is the conditional truncated-normal mean.  Row 1 is zero.
inline Matrix gibbs_cv_values(const Chain& chain, const TruncatedNormalTarget& target) {
  const Index n = chain.size();
  const Index d = chain.dim();
  const double inv_d = 1.0 / static_cast<double>(d);
  Matrix h = Matrix::Zero(n, d);
  Vector prev(d);
  for (Index row = 1; row < n; ++row) {
    prev = chain.states.row(row - 1).transpose();
    for (Index i = 0; i < d; ++i) {
      auto [m, s] = cond_params(target, prev, i);
      const double cond_mean = inv_d * truncnorm_mean(m, s) + (1.0 - inv_d) * prev(i);
      h(row, i) = chain.states(row, i) - cond_mean;
    }
  }
  return h;
}

/// Gibbs control variates as a checked J = d column matrix.
inline ControlVariateMatrix gibbs_cv_truncnorm(const Chain& chain, const Vector& mu,
                                               const Matrix& sigma) {
  chain.validate();
  const Index d = chain.dim();
  if (mu.size() != d || sigma.rows() != d || sigma.cols() != d)
    throw DimensionMismatch("gibbs_cv_truncnorm: mu/Sigma incompatible with chain");
  TruncatedNormalTarget target(mu, sigma);
  Matrix h = gibbs_cv_values(chain, target);
  std::vector<std::string> labels;
  for (Index i = 0; i < d; ++i) labels.push_back("gibbs[" + std::to_string(i) + "]");
  return make_control_variates(std::move(h), std::move(labels));
}

/// Gram matrix Sigma = M^t M of a d x d standard-normal matrix; jittered by
/// 1e-9 I when needed for strict positive definiteness.
inline Matrix random_spd(Index d, std::uint64_t seed) {
  if (d < 1) throw InvalidRange("random_spd: d must be >= 1");
  Rng rng(seed);
  Matrix m(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) m(i, j) = rng.normal();
  Matrix sigma = m.transpose() * m;
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) sigma += 1e-9 * Matrix::Identity(d, d);
  return sigma;
}

/// Score of the Gaussian N(mu, Sigma): s(x) = -Sigma^{-1} (x - mu).
inline Vector gaussian_score(const Vector& mu, const Matrix& sigma_inv, const Vector& x) {
  if (mu.size() != x.size() || sigma_inv.rows() != x.size() || sigma_inv.cols() != x.size())
    throw DimensionMismatch("gaussian_score: shape mismatch");
  return -sigma_inv * (x - mu);
}

}  // namespace cubethin
