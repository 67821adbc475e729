#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cubethin/errors.hpp"
#include "cubethin/numerics.hpp"

namespace cubethin {

/// An MCMC chain: N states in R^d, optionally paired with per-state score
/// vectors (gradient of the log target density at each state).
struct Chain {
  Matrix states;                  // N x d
  std::optional<Matrix> scores;   // N x d when present
  Index burn_in = 0;

  Index size() const { return states.rows(); }
  Index dim() const { return states.cols(); }
  bool has_scores() const { return scores.has_value(); }

  void validate() const {
    if (states.rows() < 1 || states.cols() < 1)
      throw InvalidRange("Chain: needs at least one state and one dimension");
    detail::require_finite(states, "Chain: states");
    if (scores) {
      if (scores->rows() != states.rows() || scores->cols() != states.cols())
        throw DimensionMismatch("Chain: scores shape must match states");
      detail::require_finite(*scores, "Chain: scores");
    }
    if (burn_in < 0 || burn_in >= states.rows())
      throw InvalidRange("Chain: burn_in out of range");
  }

  /// Copy of the chain with the first b states removed.
  Chain drop_burn_in(Index b) const {
    if (b < 0 || b >= states.rows()) throw InvalidRange("drop_burn_in: b out of range");
    Chain out;
    out.states = states.bottomRows(states.rows() - b);
    if (scores) out.scores = scores->bottomRows(states.rows() - b);
    return out;
  }
};

/// N x J matrix of control-variate evaluations, one column per variate.
/// Columns are checked for linear independence at construction.
struct ControlVariateMatrix {
  Matrix values;                    // N x J
  std::vector<std::string> labels;  // J names

  Index size() const { return values.rows(); }
  Index count() const { return values.cols(); }
};

enum class RankCheck {
  Strict,           // reject dependent columns
  AllowConsistent,  // keep them; the weighting scheme resolves consistent sets
};

/// Builds a ControlVariateMatrix, rejecting non-finite entries and (under
/// RankCheck::Strict) rank-deficient column sets.  The gradient-based
/// builders pass AllowConsistent: on a target with exactly linear score
/// (e.g. Gaussian) the d + d^2 set carries structural dependencies
/// h_ij - h_ji, which cv_weights resolves by a minimum-norm solve.
inline ControlVariateMatrix make_control_variates(Matrix values, std::vector<std::string> labels,
                                                  RankCheck check = RankCheck::Strict) {
  if (values.cols() < 1) throw InvalidRange("control variates: J must be >= 1");
  if (static_cast<Index>(labels.size()) != values.cols())
    throw DimensionMismatch("control variates: one label per column");
  detail::require_finite(values, "control variates");
  if (check == RankCheck::Strict) {
    Eigen::ColPivHouseholderQR<Matrix> qr(values);
    qr.setThreshold(kSingularRelTol *
                    static_cast<double>(std::max(values.rows(), values.cols())));
    if (qr.rank() < values.cols())
      throw RankDeficient("control variates: columns are linearly dependent");
  }
  return ControlVariateMatrix{std::move(values), std::move(labels)};
}

/// The d + d^2 gradient-based control variates: h_i(x) = s(x)[i] followed by
/// h_ij(x) = 1{i=j} + x[i] s(x)[j], (i, j) in row-major order.
inline ControlVariateMatrix score_cv_full(const Chain& chain) {
  chain.validate();
  if (!chain.scores) throw MissingScores("score_cv_full: chain has no scores");
  const Index n = chain.size();
  const Index d = chain.dim();
  const Matrix& x = chain.states;
  const Matrix& s = *chain.scores;

  Matrix h(n, d + d * d);
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(d + d * d));
  h.leftCols(d) = s;
  for (Index i = 0; i < d; ++i) labels.push_back("score[" + std::to_string(i) + "]");
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      Index col = d + i * d + j;
      h.col(col) = x.col(i).cwiseProduct(s.col(j));
      if (i == j) h.col(col).array() += 1.0;
      labels.push_back("xscore[" + std::to_string(i) + "," + std::to_string(j) + "]");
    }
  }
  return make_control_variates(std::move(h), std::move(labels), RankCheck::AllowConsistent);
}

/// The 2d "diagonal" set: h_i followed by h_ii only.
inline ControlVariateMatrix score_cv_diagonal(const Chain& chain) {
  chain.validate();
  if (!chain.scores) throw MissingScores("score_cv_diagonal: chain has no scores");
  const Index n = chain.size();
  const Index d = chain.dim();
  const Matrix& x = chain.states;
  const Matrix& s = *chain.scores;

  Matrix h(n, 2 * d);
  std::vector<std::string> labels;
  h.leftCols(d) = s;
  for (Index i = 0; i < d; ++i) labels.push_back("score[" + std::to_string(i) + "]");
  for (Index i = 0; i < d; ++i) {
    h.col(d + i) = x.col(i).cwiseProduct(s.col(i)).array() + 1.0;
    labels.push_back("xscore[" + std::to_string(i) + "," + std::to_string(i) + "]");
  }
  return make_control_variates(std::move(h), std::move(labels), RankCheck::AllowConsistent);
}

/// Chain plus signed real weights summing to one and annihilating every
/// control-variate column.
struct WeightedSample {
  Vector weights;

  Index size() const { return weights.size(); }
};

/// Control-variate weighting scheme: with design H = [1 | h_1 .. h_J],
/// w = H (H^t H)^{-1} e_1, i.e. the solution of H^t w = e_1 in range(H).
/// Computed through an SVD of the internally centered and scaled design; a
/// rank-deficient column set is accepted as long as the constraint system
/// stays consistent (the minimum-norm weights then satisfy every constraint
/// exactly); an inconsistent system throws RankDeficient.
inline WeightedSample cv_weights(const ControlVariateMatrix& cv) {
  const Index n = cv.size();
  const Index j = cv.count();
  if (n < j + 1) throw InvalidRange("cv_weights: needs N >= J + 1");

  Vector center(j), scale(j);
  for (Index k = 0; k < j; ++k) {
    center(k) = cv.values.col(k).mean();
    const double var =
        (cv.values.col(k).array() - center(k)).square().sum() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    scale(k) = (sd > 1e-300) ? sd : 1.0;
  }

  Matrix design(n, j + 1);
  design.col(0).setOnes();
  for (Index k = 0; k < j; ++k)
    design.col(k + 1) = (cv.values.col(k).array() - center(k)) / scale(k);

  // Centering is a change of basis H_c = H T; solving H_c^t w = T^t e_1
  // returns the weights of the raw design.  b is the first row of T.
  Vector b(j + 1);
  b(0) = 1.0;
  for (Index k = 0; k < j; ++k) b(k + 1) = -center(k) / scale(k);

  Eigen::BDCSVD<Matrix> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = detail::singular_cutoff(sv(0), n, j + 1);
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  if (rank == 0) throw RankDeficient("cv_weights: zero design matrix");

  Vector vb = svd.matrixV().leftCols(rank).transpose() * b;
  if (rank < j + 1) {
    // Consistency of H^t w = e_1: b must lie in the row space of the design.
    Vector back = svd.matrixV().leftCols(rank) * vb;
    if ((back - b).norm() > 1e-8 * b.norm())
      throw RankDeficient("cv_weights: inconsistent redundant control variates");
  }
  for (Index k = 0; k < rank; ++k) vb(k) /= sv(k);
  return WeightedSample{svd.matrixU().leftCols(rank) * vb};
}

/// Weighted estimate sum_n w_n f(X_n).
inline double weighted_estimate(const WeightedSample& ws, const Vector& f_values) {
  if (ws.weights.size() != f_values.size())
    throw DimensionMismatch("weighted_estimate: length mismatch");
  return ws.weights.dot(f_values);
}

/// OLS regression coefficients of f on the control variates (the last J
/// entries of the [1 | H] regression).
inline Vector beta_ols(const ControlVariateMatrix& cv, const Vector& f_values) {
  const Index n = cv.size();
  const Index j = cv.count();
  if (f_values.size() != n) throw DimensionMismatch("beta_ols: length mismatch");
  if (n <= j + 1) throw InvalidRange("beta_ols: needs N > J + 1");
  Matrix design(n, j + 1);
  design.col(0).setOnes();
  design.rightCols(j) = cv.values;
  return ols(design, f_values).tail(j);
}

}  // namespace cubethin
