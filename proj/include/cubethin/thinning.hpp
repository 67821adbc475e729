#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "cubethin/control_variates.hpp"
#include "cubethin/cube.hpp"
#include "cubethin/errors.hpp"
#include "cubethin/numerics.hpp"
#include "cubethin/rng.hpp"

namespace cubethin {

/// Signed weights rewritten as inclusion probabilities: Omega = sum |w_n|,
/// W_n = M |w_n| / Omega (so sum W_n = M), points with W_n > 1 expanded into
/// ceil(W_n) copies of equal weight in (0, 1], zero-weight points dropped.
struct NormalizedWeights {
  double omega = 0.0;
  Eigen::VectorXi signs;             // per original point, in {-1, 0, +1}
  Vector W;                          // per expanded point, in (0, 1]
  std::vector<Index> origin;         // expanded point -> original index
  Index M = 0;

  Index expanded_size() const { return W.size(); }

  std::map<Index, Index> copy_counts() const {
    std::map<Index, Index> counts;
    for (Index n : origin) ++counts[n];
    return counts;
  }
};

inline NormalizedWeights normalize_weights(const Vector& w, Index M) {
  if (M < 1) throw InvalidRange("normalize_weights: M must be >= 1");
  detail::require_finite(w, "normalize_weights: w");
  const double omega = w.cwiseAbs().sum();
  if (omega <= 0.0) throw DegenerateWeights("normalize_weights: all weights are zero");

  NormalizedWeights nw;
  nw.omega = omega;
  nw.M = M;
  nw.signs = Eigen::VectorXi::Zero(w.size());

  std::vector<double> expanded;
  for (Index n = 0; n < w.size(); ++n) {
    if (w(n) == 0.0) continue;
    nw.signs(n) = (w(n) > 0.0) ? 1 : -1;
    const double wn = static_cast<double>(M) * std::abs(w(n)) / omega;
    const Index copies = (wn > 1.0) ? static_cast<Index>(std::ceil(wn)) : 1;
    for (Index c = 0; c < copies; ++c) {
      expanded.push_back(wn / static_cast<double>(copies));
      nw.origin.push_back(n);
    }
  }
  nw.W = Eigen::Map<Vector>(expanded.data(), static_cast<Index>(expanded.size()));
  return nw;
}

/// Constraint matrix of the cube-thinning problem over the expanded points:
/// first row all ones (fixed size), row j+1 carries sgn(w_n) h_j(X_n).
inline Matrix build_constraints(const ControlVariateMatrix& cv, const NormalizedWeights& nw) {
  if (static_cast<Index>(nw.signs.size()) != cv.size())
    throw DimensionMismatch("build_constraints: weights do not match control variates");
  const Index j = cv.count();
  const Index n_exp = nw.expanded_size();
  Matrix a(j + 1, n_exp);
  a.row(0).setOnes();
  for (Index col = 0; col < n_exp; ++col) {
    const Index n = nw.origin[static_cast<std::size_t>(col)];
    a.block(1, col, j, 1) =
        static_cast<double>(nw.signs(n)) * cv.values.row(n).transpose();
  }
  return a;
}

/// Output of cube thinning: a size-M multiset of original indices with signs
/// and the common mass Omega/M, defining a signed empirical measure.
struct SignedSubsample {
  std::vector<Index> indices;  // multiset, aligned with signs
  std::vector<int> signs;
  double magnitude = 0.0;  // Omega / M
  Index M = 0;

  // Run diagnostics (reported, not part of the measure).
  bool landing_used = false;
  Vector constraint_residuals;  // per control variate: sum_selected sgn * h_j

  Index size() const { return static_cast<Index>(indices.size()); }
};

/// Subsampled estimate (Omega/M) sum_selected sgn(w_n) f(X_n).
inline double subsample_estimate(const SignedSubsample& sub, const Vector& f_values) {
  double acc = 0.0;
  for (std::size_t i = 0; i < sub.indices.size(); ++i) {
    const Index n = sub.indices[i];
    if (n < 0 || n >= f_values.size())
      throw DimensionMismatch("subsample_estimate: index outside f_values");
    acc += static_cast<double>(sub.signs[i]) * f_values(n);
  }
  return sub.magnitude * acc;
}

/// Cube thinning with precomputed weights: normalize, build constraints, run
/// the cube method, and collapse selected copies back to original indices.
inline SignedSubsample cube_thin_weighted(const ControlVariateMatrix& cv,
                                          const WeightedSample& ws, Index M, Rng& rng,
                                          const FlightOptions& options = {}) {
  if (ws.size() != cv.size())
    throw DimensionMismatch("cube_thin: weights do not match control variates");
  if (M < 1 || M > cv.size()) throw InvalidRange("cube_thin: M must satisfy 1 <= M <= N");

  NormalizedWeights nw = normalize_weights(ws.weights, M);
  Matrix a = build_constraints(cv, nw);
  BalancedProblem problem{nw.W, a};

  Vector pi_star = flight_phase(problem, rng, options);
  bool integral = true;
  for (Index k = 0; k < pi_star.size(); ++k) {
    if (pi_star(k) > kIntegerSnapTol && pi_star(k) < 1.0 - kIntegerSnapTol) {
      integral = false;
      break;
    }
  }
  Vector s;
  if (integral) {
    s = pi_star;
    for (Index k = 0; k < s.size(); ++k) s(k) = (s(k) >= 0.5) ? 1.0 : 0.0;
  } else {
    s = landing_phase(pi_star, problem, rng);
  }

  SignedSubsample sub;
  sub.M = M;
  sub.magnitude = nw.omega / static_cast<double>(M);
  sub.landing_used = !integral;
  for (Index k = 0; k < s.size(); ++k) {
    if (s(k) != 1.0) continue;
    const Index n = nw.origin[static_cast<std::size_t>(k)];
    sub.indices.push_back(n);
    sub.signs.push_back(nw.signs(n));
  }

  sub.constraint_residuals = Vector::Zero(cv.count());
  for (std::size_t i = 0; i < sub.indices.size(); ++i)
    sub.constraint_residuals +=
        static_cast<double>(sub.signs[i]) * cv.values.row(sub.indices[i]).transpose();
  return sub;
}

/// End-to-end cube thinning: control-variate weights, weight normalization,
/// constraint construction, cube sampling.
inline SignedSubsample cube_thin(const Chain& chain, const ControlVariateMatrix& cv, Index M,
                                 Rng& rng, const FlightOptions& options = {}) {
  chain.validate();
  if (cv.size() != chain.size())
    throw DimensionMismatch("cube_thin: control variates do not match chain");
  if (M > chain.size()) throw InvalidRange("cube_thin: M must be <= N");
  WeightedSample ws = cv_weights(cv);
  return cube_thin_weighted(cv, ws, M, rng, options);
}

/// Uniform-stride thinning: indices b + round(k (N - b) / M) for k = 0..M-1.
inline std::vector<Index> standard_thin(const Chain& chain, Index b, Index M) {
  const Index n = chain.size();
  if (b < 0 || b >= n) throw InvalidRange("standard_thin: burn-in out of range");
  if (M < 1 || M > n - b) throw InvalidRange("standard_thin: M out of range");
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(M));
  const double span = static_cast<double>(n - b);
  for (Index k = 0; k < M; ++k) {
    const Index idx = b + static_cast<Index>(std::llround(static_cast<double>(k) * span /
                                                          static_cast<double>(M)));
    out.push_back(std::min(idx, n - 1));
  }
  return out;
}

/// Greedy Stein thinning baseline: at each iteration adds the state
/// minimizing k_p(X_i, X_i) + sum_{j in S} k_p(X_i, X_j).  Repeats are
/// allowed.  The inner sum is recomputed every iteration: O(N M^2) kernel
/// evaluations in total.
inline std::vector<Index> stein_thin_greedy(const Chain& chain, Index M, double bandwidth) {
  chain.validate();
  if (!chain.scores) throw MissingScores("stein_thin_greedy: chain has no scores");
  if (M < 1) throw InvalidRange("stein_thin_greedy: M must be >= 1");
  if (!(bandwidth > 0.0)) throw InvalidRange("stein_thin_greedy: bandwidth must be positive");

  const Index n = chain.size();
  const Index d = chain.dim();
  // Column-major d x N copies so each point is contiguous.
  Matrix xt = chain.states.transpose();
  Matrix st = chain.scores->transpose();

  const double inv_l2 = 1.0 / (bandwidth * bandwidth);
  const double dim_term = static_cast<double>(d) * inv_l2;

  auto kp = [&](Index i, Index j) {
    const auto xi = xt.col(i), xj = xt.col(j);
    const auto si = st.col(i), sj = st.col(j);
    const double r2 = (xi - xj).squaredNorm();
    const double cross = (si - sj).dot(xi - xj);
    const double base = std::exp(-0.5 * r2 * inv_l2);
    return base * (dim_term - r2 * inv_l2 * inv_l2 + cross * inv_l2 + si.dot(sj));
  };

  Vector diag(n);
  for (Index i = 0; i < n; ++i) diag(i) = kp(i, i);

  std::vector<Index> selected;
  selected.reserve(static_cast<std::size_t>(M));
  for (Index t = 0; t < M; ++t) {
    Index best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      double value = diag(i);
      for (Index j : selected) value += kp(i, j);
      if (value < best_value) {
        best_value = value;
        best = i;
      }
    }
    selected.push_back(best);
  }
  return selected;
}

}  // namespace cubethin
