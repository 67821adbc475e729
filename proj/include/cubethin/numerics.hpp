#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cubethin/errors.hpp"

namespace cubethin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using BoolMask = std::vector<bool>;

/// Singular values below kSingularRelTol * max(rows, cols) * sigma_max are
/// treated as zero everywhere in the library.
constexpr double kSingularRelTol = 1e-12;

namespace detail {

inline double singular_cutoff(double sigma_max, Index rows, Index cols) {
  return kSingularRelTol * static_cast<double>(std::max(rows, cols)) * sigma_max;
}

inline void require_finite(const Matrix& a, const char* name) {
  if (!a.allFinite()) throw Error(std::string(name) + ": non-finite entries");
}

inline void require_finite(const Vector& a, const char* name) {
  if (!a.allFinite()) throw Error(std::string(name) + ": non-finite entries");
}

}  // namespace detail

/// OLS estimate gamma = (H^t H)^{-1} H^t F, computed through an SVD of H.
/// Throws RankDeficient when H has (numerically) dependent columns.
inline Vector ols(const Matrix& H, const Vector& F) {
  if (H.rows() != F.size()) throw DimensionMismatch("ols: row count of H must match F");
  if (H.rows() <= H.cols()) throw InvalidRange("ols: needs more rows than columns");
  detail::require_finite(H, "ols: H");
  detail::require_finite(F, "ols: F");

  Eigen::BDCSVD<Matrix> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = detail::singular_cutoff(sv(0), H.rows(), H.cols());
  if (sv(sv.size() - 1) <= cutoff) throw RankDeficient("ols: design matrix is rank deficient");

  Vector scaled = svd.matrixU().transpose() * F;
  for (Index i = 0; i < sv.size(); ++i) scaled(i) /= sv(i);
  return svd.matrixV() * scaled;
}

/// Moore-Penrose pseudo-inverse through the SVD.  Defined for every matrix.
inline Matrix pseudo_inverse(const Matrix& A) {
  detail::require_finite(A, "pseudo_inverse: A");
  if (A.size() == 0) return Matrix(A.cols(), A.rows());
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return Matrix::Zero(A.cols(), A.rows());
  const double cutoff = detail::singular_cutoff(sv(0), A.rows(), A.cols());
  Vector inv = Vector::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Projects v onto ker A restricted to the free coordinates:
///   u = I v - I A^t (A I A^t)^- A I v
/// where I masks the non-free coordinates.  The result satisfies A u = 0 and
/// u_k = 0 on every non-free coordinate; it may be the zero vector.
inline Vector project_to_null(const Vector& v, const Matrix& A, const BoolMask& free) {
  const Index n = v.size();
  if (A.cols() != n) throw DimensionMismatch("project_to_null: A column count must match v");
  if (static_cast<Index>(free.size()) != n)
    throw DimensionMismatch("project_to_null: mask length must match v");
  if (std::none_of(free.begin(), free.end(), [](bool b) { return b; }))
    throw InvalidRange("project_to_null: mask has no free coordinate");

  Vector vm = v;
  for (Index k = 0; k < n; ++k)
    if (!free[k]) vm(k) = 0.0;

  const Index m = A.rows();
  Matrix G = Matrix::Zero(m, m);
  for (Index k = 0; k < n; ++k)
    if (free[k]) G.noalias() += A.col(k) * A.col(k).transpose();

  // G is symmetric PSD and routinely rank deficient; invert via eigenvalues.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(G);
  const Vector& ev = eig.eigenvalues();
  const double emax = std::max(0.0, ev(ev.size() - 1));
  const double cutoff = detail::singular_cutoff(emax, m, m);
  Vector w = A * vm;
  Vector wt = eig.eigenvectors().transpose() * w;
  for (Index i = 0; i < ev.size(); ++i) wt(i) = (ev(i) > cutoff) ? wt(i) / ev(i) : 0.0;
  Vector y = eig.eigenvectors() * wt;

  Vector u = Vector::Zero(n);
  for (Index k = 0; k < n; ++k)
    if (free[k]) u(k) = vm(k) - A.col(k).dot(y);
  return u;
}

/// min c.x subject to A_eq x = b_eq and lo <= x <= hi (entries of lo/hi may be
/// -inf/+inf).
struct LinearProgram {
  Vector c;
  Matrix A_eq;
  Vector b_eq;
  Vector lo;
  Vector hi;

  Index num_vars() const { return c.size(); }

  void validate() const {
    const Index n = c.size();
    if (A_eq.cols() != n) throw DimensionMismatch("LinearProgram: A_eq column count != |c|");
    if (A_eq.rows() != b_eq.size())
      throw DimensionMismatch("LinearProgram: A_eq row count != |b_eq|");
    if (lo.size() != n || hi.size() != n)
      throw DimensionMismatch("LinearProgram: bound vectors must have |c| entries");
    detail::require_finite(c, "LinearProgram: c");
    detail::require_finite(A_eq, "LinearProgram: A_eq");
    detail::require_finite(b_eq, "LinearProgram: b_eq");
    for (Index j = 0; j < n; ++j) {
      if (std::isnan(lo(j)) || std::isnan(hi(j)))
        throw Error("LinearProgram: NaN bound");
      if (lo(j) > hi(j)) throw InvalidRange("LinearProgram: lo > hi");
    }
  }
};

namespace detail {

enum class VarStatus : std::uint8_t { Basic, AtLower, AtUpper, FreeAtZero };

// Bounded-variable primal simplex with Bland's rule; two phases driven by the
// caller through the cost vector.  Columns [0, n) are the real variables,
// columns [n, n+m) the artificials (their coefficient columns are +-e_i).
class BoundedSimplex {
 public:
  BoundedSimplex(const Matrix& A, const Vector& b, Vector lo, Vector hi)
      : A_(A), b_(b), lo_(std::move(lo)), hi_(std::move(hi)), m_(A.rows()), n_(A.cols()) {
    const Index total = n_ + m_;
    x_ = Vector::Zero(total);
    status_.assign(static_cast<std::size_t>(total), VarStatus::AtLower);
    art_sign_ = Vector::Ones(m_);

    for (Index j = 0; j < n_; ++j) {
      if (std::isfinite(lo_(j))) {
        status_[j] = VarStatus::AtLower;
        x_(j) = lo_(j);
      } else if (std::isfinite(hi_(j))) {
        status_[j] = VarStatus::AtUpper;
        x_(j) = hi_(j);
      } else {
        status_[j] = VarStatus::FreeAtZero;
        x_(j) = 0.0;
      }
    }

    Vector r = b_;
    for (Index j = 0; j < n_; ++j)
      if (x_(j) != 0.0) r -= A_.col(j) * x_(j);

    basis_.resize(m_);
    for (Index i = 0; i < m_; ++i) {
      art_sign_(i) = (r(i) < 0.0) ? -1.0 : 1.0;
      basis_[i] = n_ + i;
      status_[n_ + i] = VarStatus::Basic;
      x_(n_ + i) = std::abs(r(i));
    }
    // Artificial bounds: [0, inf) in phase 1, pinned to zero afterwards.
    art_lo_ = Vector::Zero(m_);
    art_hi_ = Vector::Constant(m_, std::numeric_limits<double>::infinity());
  }

  double run(const Vector& cost, bool allow_unbounded) {
    const double dtol = 1e-9 * (1.0 + cost.cwiseAbs().maxCoeff());
    const Index total = n_ + m_;
    const long max_iter = 2000 + 200 * static_cast<long>(total + m_);

    for (long iter = 0; iter < max_iter; ++iter) {
      Matrix B(m_, m_);
      for (Index i = 0; i < m_; ++i) B.col(i) = column(basis_[i]);
      Eigen::PartialPivLU<Matrix> lu(B);

      // Recompute basic values from the nonbasic assignment (keeps drift out).
      Vector rhs = b_;
      for (Index j = 0; j < total; ++j) {
        if (status_[j] == VarStatus::Basic || x_(j) == 0.0) continue;
        if (j < n_)
          rhs -= A_.col(j) * x_(j);
        else
          rhs(j - n_) -= art_sign_(j - n_) * x_(j);
      }
      Vector xb = lu.solve(rhs);
      for (Index i = 0; i < m_; ++i) x_(basis_[i]) = xb(i);

      Vector cb(m_);
      for (Index i = 0; i < m_; ++i) cb(i) = cost(basis_[i]);
      Eigen::PartialPivLU<Matrix> lut(B.transpose());
      Vector y = lut.solve(cb);

      // Pricing, Bland's rule: smallest eligible index enters.
      Index enter = -1;
      double dir = 0.0;
      for (Index j = 0; j < total; ++j) {
        if (status_[j] == VarStatus::Basic) continue;
        if (lower(j) == upper(j)) continue;  // fixed
        const double aj_y = (j < n_) ? y.dot(A_.col(j)) : art_sign_(j - n_) * y(j - n_);
        const double d = cost(j) - aj_y;
        if ((status_[j] == VarStatus::AtLower || status_[j] == VarStatus::FreeAtZero) &&
            d < -dtol) {
          enter = j;
          dir = 1.0;
          break;
        }
        if ((status_[j] == VarStatus::AtUpper || status_[j] == VarStatus::FreeAtZero) &&
            d > dtol) {
          enter = j;
          dir = -1.0;
          break;
        }
      }
      if (enter < 0) {
        double obj = 0.0;
        for (Index j = 0; j < total; ++j) obj += cost(j) * x_(j);
        return obj;
      }

      Vector w = lu.solve(column(enter));

      // Ratio test over basic variables plus the entering variable's own range.
      const double inf = std::numeric_limits<double>::infinity();
      double tmax = inf;
      Index leave_pos = -1;
      bool leave_at_upper = false;
      for (Index i = 0; i < m_; ++i) {
        const double delta = -dir * w(i);  // rate of change of x_basis[i]
        const Index bj = basis_[i];
        double t = inf;
        bool to_upper = false;
        if (delta > kPivotTol) {
          if (!std::isfinite(upper(bj))) continue;
          t = (upper(bj) - x_(bj)) / delta;
          to_upper = true;
        } else if (delta < -kPivotTol) {
          if (!std::isfinite(lower(bj))) continue;
          t = (x_(bj) - lower(bj)) / (-delta);
        } else {
          continue;
        }
        t = std::max(t, 0.0);
        // Bland tie-break: among blocking variables keep the smallest index.
        if (leave_pos < 0 || t < tmax - 1e-15) {
          tmax = t;
          leave_pos = i;
          leave_at_upper = to_upper;
        } else if (t <= tmax + 1e-15 && bj < basis_[leave_pos]) {
          tmax = std::min(tmax, t);
          leave_pos = i;
          leave_at_upper = to_upper;
        }
      }
      const double own_range = upper(enter) - lower(enter);
      bool bound_flip = false;
      if (own_range < tmax) {
        tmax = own_range;
        bound_flip = true;
      }
      if (!std::isfinite(tmax)) {
        if (allow_unbounded) throw Unbounded("solve_lp: objective unbounded below");
        throw Error("solve_lp: internal unbounded phase-1 step");
      }

      x_(enter) += dir * tmax;
      for (Index i = 0; i < m_; ++i) x_(basis_[i]) -= dir * tmax * w(i);

      if (bound_flip) {
        status_[enter] =
            (status_[enter] == VarStatus::AtLower) ? VarStatus::AtUpper : VarStatus::AtLower;
        continue;
      }
      const Index leaving = basis_[leave_pos];
      x_(leaving) = leave_at_upper ? upper(leaving) : lower(leaving);
      status_[leaving] = leave_at_upper ? VarStatus::AtUpper : VarStatus::AtLower;
      basis_[leave_pos] = enter;
      status_[enter] = VarStatus::Basic;
    }
    throw Error("solve_lp: iteration limit exceeded");
  }

  void pin_artificials() {
    for (Index i = 0; i < m_; ++i) {
      art_hi_(i) = 0.0;
      if (status_[n_ + i] != VarStatus::Basic) x_(n_ + i) = 0.0;
    }
  }

  Vector solution() const { return x_.head(n_); }

 private:
  static constexpr double kPivotTol = 1e-11;

  Vector column(Index j) const {
    if (j < n_) return A_.col(j);
    Vector e = Vector::Zero(m_);
    e(j - n_) = art_sign_(j - n_);
    return e;
  }
  double lower(Index j) const { return j < n_ ? lo_(j) : art_lo_(j - n_); }
  double upper(Index j) const { return j < n_ ? hi_(j) : art_hi_(j - n_); }

  const Matrix& A_;
  const Vector& b_;
  Vector lo_, hi_, art_lo_, art_hi_, art_sign_;
  Index m_, n_;
  Vector x_;
  std::vector<VarStatus> status_;
  std::vector<Index> basis_;
};

}  // namespace detail

/// Solves the linear program with a two-phase bounded-variable simplex and
/// returns an optimal vertex.  Throws Infeasible / Unbounded accordingly.
inline Vector solve_lp(const LinearProgram& lp) {
  lp.validate();
  const Index n = lp.num_vars();
  const Index m = lp.A_eq.rows();

  if (m == 0) {
    Vector x(n);
    for (Index j = 0; j < n; ++j) {
      if (lp.c(j) > 0.0) {
        if (!std::isfinite(lp.lo(j))) throw Unbounded("solve_lp: unbounded box direction");
        x(j) = lp.lo(j);
      } else if (lp.c(j) < 0.0) {
        if (!std::isfinite(lp.hi(j))) throw Unbounded("solve_lp: unbounded box direction");
        x(j) = lp.hi(j);
      } else {
        x(j) = std::isfinite(lp.lo(j)) ? lp.lo(j) : (std::isfinite(lp.hi(j)) ? lp.hi(j) : 0.0);
      }
    }
    return x;
  }

  detail::BoundedSimplex simplex(lp.A_eq, lp.b_eq, lp.lo, lp.hi);

  Vector phase1_cost = Vector::Zero(n + m);
  phase1_cost.tail(m).setOnes();
  const double infeas = simplex.run(phase1_cost, /*allow_unbounded=*/false);
  const double feas_tol = 1e-8 * (1.0 + lp.b_eq.cwiseAbs().maxCoeff());
  if (infeas > feas_tol) throw Infeasible("solve_lp: no feasible point");

  simplex.pin_artificials();
  Vector phase2_cost = Vector::Zero(n + m);
  phase2_cost.head(n) = lp.c;
  simplex.run(phase2_cost, /*allow_unbounded=*/true);

  Vector x = simplex.solution();
  for (Index j = 0; j < n; ++j) x(j) = std::clamp(x(j), lp.lo(j), lp.hi(j));
  return x;
}

}  // namespace cubethin
