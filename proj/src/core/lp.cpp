#include "lp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "errors.hpp"

namespace dsopt {
namespace {

constexpr double kFeasTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kPivotTol = 1e-10;
constexpr double kBigBound = 1e12;     // slack / artificial cap
constexpr double kVarBound = 1e9;      // clip for unbounded structurals
constexpr int kRefactorEvery = 40;
constexpr int kDegenerateLimit = 50;   // pivots before switching to Bland

enum class VarState { Basic, AtLower, AtUpper };

// Bounded-variable primal simplex with an explicitly maintained basis
// inverse. Small dense problems only; each row owns a slack column so the
// all-slack basis is always available.
struct Tableau {
  Mat a;        // m x n_total
  Vec lo, hi, x, cost;
  std::vector<VarState> state;
  std::vector<int> basis;  // column basic in each row
  Mat binv;
  int m = 0;

  void refactor() {
    Mat b(m, m);
    for (int i = 0; i < m; ++i) b.col(i) = a.col(basis[i]);
    Eigen::PartialPivLU<Mat> lu(b);
    binv = lu.inverse();
    if (!binv.allFinite()) throw NumericError("simplex basis is singular");
  }

  void recompute_basics() {
    // x_B = binv (rhs_eff) with rhs folded in by caller; here we refresh
    // from the residual form to contain drift.
    Vec rhs_eff = rhs_cache;
    for (int j = 0; j < static_cast<int>(state.size()); ++j)
      if (state[j] != VarState::Basic) rhs_eff -= a.col(j) * x[j];
    const Vec xb = binv * rhs_eff;
    for (int i = 0; i < m; ++i) x[basis[i]] = xb[i];
  }

  Vec rhs_cache;
};

struct PhaseResult {
  LpStatus status = LpStatus::Optimal;
  int iterations = 0;
};

PhaseResult run_simplex(Tableau& t, int max_iter) {
  const int n_total = static_cast<int>(t.state.size());
  int degenerate_run = 0;
  int it = 0;
  for (; it < max_iter; ++it) {
    if (it % kRefactorEvery == 0) {
      t.refactor();
      t.recompute_basics();
    }
    Vec cb(t.m);
    for (int i = 0; i < t.m; ++i) cb[i] = t.cost[t.basis[i]];
    const Vec y = t.binv.transpose() * cb;

    const bool bland = degenerate_run >= kDegenerateLimit;
    int enter = -1;
    double best = kCostTol;
    int direction = 0;  // +1 entering rises from lower, -1 falls from upper
    for (int j = 0; j < n_total; ++j) {
      if (t.state[j] == VarState::Basic) continue;
      if (t.hi[j] - t.lo[j] < kFeasTol) continue;  // fixed
      const double d = t.cost[j] - y.dot(t.a.col(j));
      if (t.state[j] == VarState::AtLower && d < -best) {
        enter = j;
        direction = 1;
        if (bland) break;
        best = -d;
      } else if (t.state[j] == VarState::AtUpper && d > best) {
        enter = j;
        direction = -1;
        if (bland) break;
        best = d;
      }
    }
    if (enter < 0) return {LpStatus::Optimal, it};

    const Vec u = t.binv * t.a.col(enter);
    // x_B(t) = x_B - direction * t * u; entering moves by direction * t.
    double t_max = t.hi[enter] - t.lo[enter];
    int leave_row = -1;
    int leave_to_upper = 0;
    for (int i = 0; i < t.m; ++i) {
      const double rate = direction * u[i];
      const int bi = t.basis[i];
      double lim = std::numeric_limits<double>::infinity();
      int to_upper = 0;
      if (rate > kPivotTol) {
        lim = (t.x[bi] - t.lo[bi]) / rate;
      } else if (rate < -kPivotTol) {
        lim = (t.hi[bi] - t.x[bi]) / (-rate);
        to_upper = 1;
      } else {
        continue;
      }
      if (lim < t_max - 1e-12 ||
          (lim < t_max + 1e-12 && leave_row >= 0 &&
           std::abs(u[i]) > std::abs(u[leave_row]))) {
        t_max = std::max(lim, 0.0);
        leave_row = i;
        leave_to_upper = to_upper;
      }
    }
    if (!std::isfinite(t_max)) return {LpStatus::Unbounded, it};

    if (t_max < 1e-12)
      ++degenerate_run;
    else
      degenerate_run = 0;

    // Apply the step.
    for (int i = 0; i < t.m; ++i) t.x[t.basis[i]] -= direction * t_max * u[i];
    t.x[enter] += direction * t_max;

    if (leave_row < 0) {
      // Bound flip: entering traverses its whole range.
      t.state[enter] =
          direction > 0 ? VarState::AtUpper : VarState::AtLower;
      t.x[enter] = direction > 0 ? t.hi[enter] : t.lo[enter];
      continue;
    }

    const int leave = t.basis[leave_row];
    t.state[leave] = leave_to_upper ? VarState::AtUpper : VarState::AtLower;
    t.x[leave] = leave_to_upper ? t.hi[leave] : t.lo[leave];
    t.state[enter] = VarState::Basic;
    t.basis[leave_row] = enter;

    // Elementary update of the basis inverse.
    const double piv = u[leave_row];
    if (std::abs(piv) < kPivotTol) {
      t.refactor();
      t.recompute_basics();
      continue;
    }
    Vec row = t.binv.row(leave_row);
    row /= piv;
    for (int i = 0; i < t.m; ++i) {
      if (i == leave_row) continue;
      t.binv.row(i) -= u[i] * row.transpose();
    }
    t.binv.row(leave_row) = row.transpose();
  }
  return {LpStatus::IterationLimit, it};
}

}  // namespace

LpSolution solve_lp(const LpProblem& p, int max_iter) {
  const int n = static_cast<int>(p.c.size());
  const int m = static_cast<int>(p.a.rows());
  if (p.a.cols() != n || p.rhs.size() != m ||
      static_cast<int>(p.rel.size()) != m || p.lo.size() != n ||
      p.hi.size() != n)
    throw ValidationError("lp: inconsistent problem dimensions");

  Tableau t;
  t.m = m;
  const int n_slack = m;
  t.a = Mat::Zero(m, n + n_slack);
  t.a.leftCols(n) = p.a;
  t.lo.resize(n + n_slack);
  t.hi.resize(n + n_slack);
  t.x = Vec::Zero(n + n_slack);
  t.state.assign(n + n_slack, VarState::AtLower);
  t.rhs_cache = p.rhs;

  for (int j = 0; j < n; ++j) {
    t.lo[j] = std::max(p.lo[j], -kVarBound);
    t.hi[j] = std::min(p.hi[j], kVarBound);
    if (t.lo[j] > t.hi[j])
      return {LpStatus::Infeasible, 0, Vec::Zero(n), 0};
    // Start at the bound closest to zero.
    if (t.lo[j] > 0)
      t.x[j] = t.lo[j];
    else if (t.hi[j] < 0) {
      t.x[j] = t.hi[j];
      t.state[j] = VarState::AtUpper;
    } else if (-t.lo[j] <= t.hi[j]) {
      t.x[j] = t.lo[j];
    } else {
      t.x[j] = t.hi[j];
      t.state[j] = VarState::AtUpper;
    }
  }
  for (int i = 0; i < m; ++i) {
    const int s = n + i;
    t.a(i, s) = 1.0;
    switch (p.rel[i]) {
      case LpProblem::Rel::Le:
        t.lo[s] = 0;
        t.hi[s] = kBigBound;
        break;
      case LpProblem::Rel::Ge:
        t.lo[s] = -kBigBound;
        t.hi[s] = 0;
        break;
      case LpProblem::Rel::Eq:
        t.lo[s] = 0;
        t.hi[s] = 0;
        break;
    }
  }

  // Choose the starting basis: each row's slack if its natural value fits
  // the slack bounds, otherwise an artificial that absorbs the residual.
  std::vector<int> artificial_of_row(m, -1);
  std::vector<double> residuals(m);
  int n_art = 0;
  Vec ax = t.a.leftCols(n) * t.x.head(n);
  for (int i = 0; i < m; ++i) {
    const double want = p.rhs[i] - ax[i];
    const int s = n + i;
    if (want >= t.lo[s] - kFeasTol && want <= t.hi[s] + kFeasTol) {
      residuals[i] = 0;
    } else {
      residuals[i] = want < t.lo[s] ? want - t.lo[s] : want - t.hi[s];
      ++n_art;
    }
  }

  const int n_total = n + n_slack + n_art;
  {
    Mat a2 = Mat::Zero(m, n_total);
    a2.leftCols(n + n_slack) = t.a;
    t.a = a2;
    t.lo.conservativeResize(n_total);
    t.hi.conservativeResize(n_total);
    t.x.conservativeResize(n_total);
    t.state.resize(n_total, VarState::AtLower);
  }

  t.basis.resize(m);
  int art = n + n_slack;
  for (int i = 0; i < m; ++i) {
    const int s = n + i;
    const double want = p.rhs[i] - ax[i];
    if (artificial_of_row[i] == -1 && residuals[i] == 0) {
      t.basis[i] = s;
      t.state[s] = VarState::Basic;
      t.x[s] = want;
    } else {
      const double clamped = std::min(t.hi[s], std::max(t.lo[s], want));
      t.x[s] = clamped;
      t.state[s] = clamped <= t.lo[s] ? VarState::AtLower : VarState::AtUpper;
      const double resid = want - clamped;
      t.a(i, art) = resid >= 0 ? 1.0 : -1.0;
      t.lo[art] = 0;
      t.hi[art] = kBigBound;
      t.x[art] = std::abs(resid);
      t.state[art] = VarState::Basic;
      t.basis[i] = art;
      artificial_of_row[i] = art;
      ++art;
    }
  }

  LpSolution sol;
  sol.x = Vec::Zero(n);

  // Phase 1: drive the artificials to zero.
  if (n_art > 0) {
    t.cost = Vec::Zero(n_total);
    for (int i = 0; i < m; ++i)
      if (artificial_of_row[i] >= 0) t.cost[artificial_of_row[i]] = 1.0;
    const PhaseResult r1 = run_simplex(t, max_iter);
    sol.iterations += r1.iterations;
    if (r1.status == LpStatus::IterationLimit) {
      sol.status = LpStatus::IterationLimit;
      return sol;
    }
    double art_sum = 0;
    for (int i = 0; i < m; ++i)
      if (artificial_of_row[i] >= 0) art_sum += t.x[artificial_of_row[i]];
    if (art_sum > 1e-7) {
      sol.status = LpStatus::Infeasible;
      return sol;
    }
    // Freeze the artificials at zero for phase 2.
    for (int i = 0; i < m; ++i) {
      const int a_col = artificial_of_row[i];
      if (a_col < 0) continue;
      t.lo[a_col] = 0;
      t.hi[a_col] = 0;
      if (t.state[a_col] == VarState::Basic) t.x[a_col] = 0;
    }
  }

  // Phase 2: original objective.
  t.cost = Vec::Zero(n_total);
  t.cost.head(n) = p.c;
  const PhaseResult r2 = run_simplex(t, max_iter);
  sol.iterations += r2.iterations;
  sol.status = r2.status;
  if (r2.status == LpStatus::Optimal || r2.status == LpStatus::Unbounded) {
    t.refactor();
    t.recompute_basics();
    sol.x = t.x.head(n);
    sol.objective = p.c.dot(sol.x);
  }
  return sol;
}

}  // namespace dsopt
