#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "cubethin/errors.hpp"
#include "cubethin/numerics.hpp"
#include "cubethin/rng.hpp"

namespace cubethin {

/// Coordinates within this distance of 0 or 1 are snapped and frozen.
constexpr double kIntegerSnapTol = 1e-9;
/// Direction entries below this are treated as zero in the ratio test.
constexpr double kDirectionEntryTol = 1e-12;
/// Landing guard: more residual coordinates than this aborts.
constexpr Index kMaxLandingResidual = 20;

/// Inclusion probabilities plus the constraint matrix of a balanced design.
struct BalancedProblem {
  Vector pi;  // length N', entries in [0, 1]
  Matrix A;   // J' x N'

  Index population() const { return pi.size(); }
  Index constraints() const { return A.rows(); }

  void validate() const {
    if (A.cols() != pi.size())
      throw DimensionMismatch("BalancedProblem: A column count must match pi");
    if (A.rows() >= pi.size())
      throw InvalidRange("BalancedProblem: needs fewer constraints than units");
    detail::require_finite(A, "BalancedProblem: A");
    detail::require_finite(pi, "BalancedProblem: pi");
    if ((pi.array() < 0.0).any() || (pi.array() > 1.0).any())
      throw InvalidRange("BalancedProblem: pi entries must lie in [0, 1]");
  }
};

/// State of the flight-phase martingale: current point, free-coordinate mask,
/// and iteration counter.
struct FlightState {
  Vector pi_t;
  BoolMask free;
  long t = 0;

  Index free_count() const {
    return static_cast<Index>(std::count(free.begin(), free.end(), true));
  }
  Index integral_count() const { return pi_t.size() - free_count(); }
};

enum class FlightVariant { Auto, Naive, Fast };

struct FlightOptions {
  FlightVariant variant = FlightVariant::Auto;
  /// Called after every completed step (both variants); used by tests.
  std::function<void(const FlightState&)> observer;
};

namespace detail {

inline void snap_coordinate(FlightState& st, Index k) {
  if (!st.free[k]) return;
  if (st.pi_t(k) <= kIntegerSnapTol) {
    st.pi_t(k) = 0.0;
    st.free[k] = false;
  } else if (st.pi_t(k) >= 1.0 - kIntegerSnapTol) {
    st.pi_t(k) = 1.0;
    st.free[k] = false;
  }
}

/// Orthonormal basis of ker(M) as columns (may have zero columns).
inline Matrix null_basis(const Matrix& M) {
  Eigen::ColPivHouseholderQR<Matrix> qr(M.transpose());
  qr.setThreshold(kSingularRelTol * static_cast<double>(std::max(M.rows(), M.cols())));
  const Index rank = qr.rank();
  Matrix q = qr.householderQ();
  return q.rightCols(M.cols() - rank);
}

/// One martingale move of the flight process along direction u restricted to
/// `subset`; u is indexed like `subset`.  Returns false when the direction is
/// degenerate (no admissible movement).
inline bool martingale_move(FlightState& st, const std::vector<Index>& subset, Vector& u,
                            Rng& rng) {
  const double norm = u.norm();
  if (!(norm > 0.0)) return false;
  u /= norm;

  const double inf = std::numeric_limits<double>::infinity();
  double lambda1 = inf, lambda2 = inf;
  for (Index i = 0; i < u.size(); ++i) {
    const double uk = u(i);
    if (std::abs(uk) <= kDirectionEntryTol) continue;
    const double pik = st.pi_t(subset[static_cast<std::size_t>(i)]);
    if (uk > 0.0) {
      lambda1 = std::min(lambda1, (1.0 - pik) / uk);
      lambda2 = std::min(lambda2, pik / uk);
    } else {
      lambda1 = std::min(lambda1, pik / (-uk));
      lambda2 = std::min(lambda2, (1.0 - pik) / (-uk));
    }
  }
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2)) return false;
  if (lambda1 + lambda2 <= 0.0) return false;

  const double p_up = lambda2 / (lambda1 + lambda2);
  const double lambda = (rng.uniform01() < p_up) ? lambda1 : -lambda2;
  for (Index i = 0; i < u.size(); ++i) {
    const Index k = subset[static_cast<std::size_t>(i)];
    st.pi_t(k) = std::clamp(st.pi_t(k) + lambda * u(i), 0.0, 1.0);
    snap_coordinate(st, k);
  }
  ++st.t;
  return true;
}

inline std::vector<Index> free_indices(const FlightState& st) {
  std::vector<Index> out;
  for (Index k = 0; k < st.pi_t.size(); ++k)
    if (st.free[k]) out.push_back(k);
  return out;
}

}  // namespace detail

/// Initial flight state: copies pi, snapping coordinates already within
/// kIntegerSnapTol of an integer.
inline FlightState flight_init(const BalancedProblem& problem) {
  problem.validate();
  FlightState st;
  st.pi_t = problem.pi;
  st.free.assign(static_cast<std::size_t>(problem.pi.size()), true);
  for (Index k = 0; k < st.pi_t.size(); ++k) detail::snap_coordinate(st, k);
  return st;
}

/// One step of the flight phase (Deville-Tille martingale): draws a
/// standard-normal vector on the free coordinates, projects it onto ker A,
/// moves to one of the two cube faces along that direction with the
/// martingale probabilities.  Throws NoDirection when no admissible nonzero
/// direction exists (flight termination).
inline FlightState flight_step(const FlightState& state, const BalancedProblem& problem,
                               Rng& rng) {
  if (state.pi_t.size() != problem.pi.size())
    throw DimensionMismatch("flight_step: state does not match problem");
  const Index n = state.pi_t.size();
  FlightState st = state;

  const Index nfree = st.free_count();
  if (nfree == 0) throw NoDirection("flight_step: all coordinates integral");

  Vector v = Vector::Zero(n);
  for (Index k = 0; k < n; ++k)
    if (st.free[k]) v(k) = rng.normal();

  Vector u = project_to_null(v, problem.A, st.free);
  const double vnorm = v.norm();
  if (u.norm() <= 1e-12 * std::max(1.0, vnorm))
    throw NoDirection("flight_step: projected direction is numerically zero");

  std::vector<Index> all = detail::free_indices(st);
  Vector usub(static_cast<Index>(all.size()));
  for (std::size_t i = 0; i < all.size(); ++i) usub(static_cast<Index>(i)) = u(all[i]);
  if (!detail::martingale_move(st, all, usub, rng))
    throw NoDirection("flight_step: degenerate direction");
  return st;
}

namespace detail {

/// Windowed fast flight: keeps J'+1 active free units, finds a kernel
/// direction of the corresponding J' x (J'+1) submatrix, steps, and replaces
/// the units that became integral.  O(J'^3) per step, at most N' steps.
inline void fast_flight(FlightState& st, const BalancedProblem& problem, Rng& rng,
                        const std::function<void(const FlightState&)>& observer) {
  const Index jp = problem.constraints();
  std::vector<Index> order = free_indices(st);
  std::size_t next = 0;

  std::vector<Index> window;
  window.reserve(static_cast<std::size_t>(jp) + 1);
  auto refill = [&] {
    while (static_cast<Index>(window.size()) < jp + 1 && next < order.size()) {
      const Index k = order[next++];
      if (st.free[k]) window.push_back(k);
    }
  };
  refill();

  Matrix bt(jp + 1, jp);
  while (static_cast<Index>(window.size()) == jp + 1) {
    for (std::size_t i = 0; i < window.size(); ++i)
      bt.row(static_cast<Index>(i)) = problem.A.col(window[i]).transpose();
    // ker of the J' x (J'+1) submatrix is at least one-dimensional.
    Eigen::ColPivHouseholderQR<Matrix> qr(bt);
    qr.setThreshold(kSingularRelTol * static_cast<double>(jp + 1));
    const Index rank = qr.rank();
    Matrix q = qr.householderQ();
    Matrix basis = q.rightCols(jp + 1 - rank);

    Vector u;
    for (int attempt = 0; attempt < 64; ++attempt) {
      Vector v(jp + 1);
      for (Index i = 0; i < jp + 1; ++i) v(i) = rng.normal();
      u = basis * (basis.transpose() * v);
      if (u.norm() > 1e-12) break;
    }
    if (!martingale_move(st, window, u, rng))
      throw Error("fast flight: degenerate window direction");
    std::erase_if(window, [&](Index k) { return !st.free[k]; });
    if (observer) observer(st);
    refill();
  }
}

/// Endgame on at most J' free coordinates: directions from an explicit null
/// basis of the remaining columns; terminates when the kernel is trivial.
inline void flight_endgame(FlightState& st, const BalancedProblem& problem, Rng& rng,
                           const std::function<void(const FlightState&)>& observer) {
  for (;;) {
    std::vector<Index> f = free_indices(st);
    if (f.empty()) return;
    Matrix af(problem.constraints(), static_cast<Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) af.col(static_cast<Index>(i)) = problem.A.col(f[i]);
    Matrix basis = null_basis(af);
    if (basis.cols() == 0) return;  // true flight termination

    Vector u;
    bool moved = false;
    for (int attempt = 0; attempt < 64 && !moved; ++attempt) {
      Vector v(static_cast<Index>(f.size()));
      for (Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
      u = basis * (basis.transpose() * v);
      if (u.norm() <= 1e-12) continue;
      moved = martingale_move(st, f, u, rng);
    }
    if (!moved) return;  // no admissible movement despite a nontrivial kernel
    if (observer) observer(st);
  }
}

}  // namespace detail

/// Runs the flight phase to termination and returns pi* with at most J'
/// non-integer coordinates.  The windowed fast variant is used when
/// N' > 10 J' (or when forced); the naive variant applies the full projection
/// of flight_step at every iteration.
inline Vector flight_phase(const BalancedProblem& problem, Rng& rng,
                           const FlightOptions& options = {}) {
  FlightState st = flight_init(problem);
  const Index n = problem.population();
  const Index jp = problem.constraints();

  const bool use_fast = options.variant == FlightVariant::Fast ||
                        (options.variant == FlightVariant::Auto && n > 10 * jp);
  if (use_fast) {
    detail::fast_flight(st, problem, rng, options.observer);
    detail::flight_endgame(st, problem, rng, options.observer);
    return st.pi_t;
  }

  while (st.free_count() > 0) {
    try {
      st = flight_step(st, problem, rng);
      if (options.observer) options.observer(st);
    } catch (const NoDirection&) {
      // A zero projection is definitive only if ker(A restricted to the free
      // columns) is trivial; otherwise step through an explicit basis.
      std::vector<Index> f = detail::free_indices(st);
      if (f.empty()) break;
      Matrix af(jp, static_cast<Index>(f.size()));
      for (std::size_t i = 0; i < f.size(); ++i)
        af.col(static_cast<Index>(i)) = problem.A.col(f[i]);
      if (detail::null_basis(af).cols() == 0) break;
      detail::flight_endgame(st, problem, rng, options.observer);
      break;
    }
  }
  return st.pi_t;
}

/// Randomized rounding of the residual non-integer coordinates of pi*:
/// enumerates the candidate completions, solves the Deville-Tille linear
/// program for the distribution minimizing the expected quadratic distance to
/// the constraint hyperplane, and samples from it.  E[s | pi*] = pi*.
inline Vector landing_phase(const Vector& pi_star, const BalancedProblem& problem, Rng& rng) {
  if (pi_star.size() != problem.pi.size())
    throw DimensionMismatch("landing_phase: pi* does not match problem");

  Vector s = pi_star;
  std::vector<Index> residual;
  for (Index k = 0; k < s.size(); ++k) {
    if (s(k) <= kIntegerSnapTol) {
      s(k) = 0.0;
    } else if (s(k) >= 1.0 - kIntegerSnapTol) {
      s(k) = 1.0;
    } else {
      residual.push_back(k);
    }
  }
  const Index q = static_cast<Index>(residual.size());
  if (q == 0) return s;
  if (q > kMaxLandingResidual)
    throw TooManyResidual("landing_phase: " + std::to_string(q) + " residual coordinates");

  Vector pi_res(q);
  for (Index i = 0; i < q; ++i) pi_res(i) = pi_star(residual[static_cast<std::size_t>(i)]);

  // When a constant constraint row (fixed sample size) is present, the
  // residual completion size is pinned; restrict the support accordingly so
  // the size constraint holds surely, not just in expectation.
  long fixed_count = -1;
  for (Index r = 0; r < problem.A.rows(); ++r) {
    const double lo = problem.A.row(r).minCoeff();
    const double hi = problem.A.row(r).maxCoeff();
    if (std::abs(hi - lo) <= 1e-9 * (1.0 + std::abs(hi)) && std::abs(hi) > 1e-12) {
      const double total = pi_res.sum();
      const double rounded = std::round(total);
      if (std::abs(total - rounded) <= 1e-6) fixed_count = static_cast<long>(rounded);
      break;
    }
  }

  std::vector<std::uint32_t> support;
  for (std::uint32_t pattern = 0; pattern < (1u << q); ++pattern) {
    if (fixed_count >= 0 && std::popcount(pattern) != fixed_count) continue;
    support.push_back(pattern);
  }

  // Quadratic cost (s - pi*)^t A^t (A A^t)^- A (s - pi*), restricted to the
  // residual block.
  Matrix b_cols(problem.A.rows(), q);
  for (Index i = 0; i < q; ++i) b_cols.col(i) = problem.A.col(residual[static_cast<std::size_t>(i)]);
  Matrix gram = b_cols.transpose() * pseudo_inverse(problem.A * problem.A.transpose()) * b_cols;

  const Index n_support = static_cast<Index>(support.size());
  Vector cost(n_support);
  Matrix a_eq = Matrix::Zero(q + 1, n_support);
  Vector r_vec(q);
  for (Index col = 0; col < n_support; ++col) {
    const std::uint32_t pattern = support[static_cast<std::size_t>(col)];
    for (Index i = 0; i < q; ++i) {
      const double bit = (pattern >> i) & 1u;
      r_vec(i) = bit - pi_res(i);
      a_eq(i + 1, col) = bit;
    }
    a_eq(0, col) = 1.0;
    cost(col) = r_vec.dot(gram * r_vec);
  }
  Vector b_eq(q + 1);
  b_eq(0) = 1.0;
  b_eq.tail(q) = pi_res;

  LinearProgram lp{cost, a_eq, b_eq, Vector::Zero(n_support), Vector::Ones(n_support)};
  Vector xi = solve_lp(lp);

  // Sample a completion from the solved distribution.
  double total = 0.0;
  for (Index i = 0; i < n_support; ++i) total += std::max(xi(i), 0.0);
  double ticket = rng.uniform01() * total;
  std::uint32_t chosen = support.back();
  for (Index i = 0; i < n_support; ++i) {
    ticket -= std::max(xi(i), 0.0);
    if (ticket <= 0.0) {
      chosen = support[static_cast<std::size_t>(i)];
      break;
    }
  }
  for (Index i = 0; i < q; ++i)
    s(residual[static_cast<std::size_t>(i)]) = static_cast<double>((chosen >> i) & 1u);
  return s;
}

/// Full cube method: flight phase, then landing phase if any coordinate is
/// still fractional.  E[s_k] = pi_k for every unit.
inline Vector cube_sample(const BalancedProblem& problem, Rng& rng,
                          const FlightOptions& options = {}) {
  Vector pi_star = flight_phase(problem, rng, options);
  bool integral = true;
  for (Index k = 0; k < pi_star.size(); ++k) {
    if (pi_star(k) > kIntegerSnapTol && pi_star(k) < 1.0 - kIntegerSnapTol) {
      integral = false;
      break;
    }
  }
  if (!integral) return landing_phase(pi_star, problem, rng);
  Vector s = pi_star;
  for (Index k = 0; k < s.size(); ++k) s(k) = (s(k) >= 0.5) ? 1.0 : 0.0;
  return s;
}

}  // namespace cubethin
