#include "tra.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "errors.hpp"
#include "qp.hpp"

namespace dsopt::tra {
namespace {

constexpr double kActiveTol = 1e-8;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Multipliers {
  Vec lambda;
  double kkt_residual = 0;
};

// Stationarity violation of the Lagrangian gradient under the given row
// multipliers: at a bound only the signs that could not be produced by a
// legal bound multiplier count, in the interior any residual counts.
double projected_kkt(const Linearization& lin, const Vec& x, const Vec& lo,
                     const Vec& hi, const Vec& lambda) {
  const Vec dl = lin.grad + lin.jac.transpose() * lambda;
  double res = 0;
  for (int i = 0; i < x.size(); ++i) {
    double v;
    if (x[i] <= lo[i] + kActiveTol)
      v = std::max(0.0, -dl[i]);
    else if (x[i] >= hi[i] - kActiveTol)
      v = std::max(0.0, dl[i]);
    else
      v = std::abs(dl[i]);
    res = std::max(res, v);
  }
  return res;
}

// Least-squares multipliers over the rows of variables strictly inside
// their bounds, then the projected stationarity residual over all of them.
// Any multiplier vector passing the residual test is a valid certificate,
// but this estimate can miss one that exists: variables sitting on bounds
// contribute no equation, so their reduced costs are not explained.
Multipliers estimate_multipliers(const Linearization& lin, const Vec& x,
                                 const Vec& lo, const Vec& hi) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(lin.g.size());
  std::vector<int> free_rows;
  for (int i = 0; i < n; ++i)
    if (x[i] > lo[i] + kActiveTol && x[i] < hi[i] - kActiveTol)
      free_rows.push_back(i);

  Multipliers out;
  out.lambda = Vec::Zero(m);
  if (!free_rows.empty() && m > 0) {
    Mat jt(free_rows.size(), m);
    Vec rhs(free_rows.size());
    for (size_t k = 0; k < free_rows.size(); ++k) {
      jt.row(k) = lin.jac.col(free_rows[k]).transpose();
      rhs[k] = -lin.grad[free_rows[k]];
    }
    // Minimum-norm least squares keeps multipliers of slacked rows at zero
    // whenever the slack itself is free.
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(jt);
    out.lambda = cod.solve(rhs);
  }
  out.kkt_residual = projected_kkt(lin, x, lo, hi, out.lambda);
  return out;
}

// Convexify the model Hessian: shift the weighted (non-slack) block just
// enough to make it positive semidefinite.
Mat convexified(const Mat& hess, const Vec& weights) {
  std::vector<int> blk;
  for (int i = 0; i < weights.size(); ++i)
    if (weights[i] > 0) blk.push_back(i);
  Mat h = hess;
  if (blk.empty()) return h;
  Mat sub(blk.size(), blk.size());
  for (size_t a = 0; a < blk.size(); ++a)
    for (size_t b = 0; b < blk.size(); ++b) sub(a, b) = hess(blk[a], blk[b]);
  const Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (sub + sub.transpose()));
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin < 0)
    for (int i : blk) h(i, i) += -lmin + 1e-8;
  return h;
}

// Feasibility step: bring the linearized constraints as close to zero as the
// inner ball allows. Solved in (d, t) with t bounding |g + J d| row-wise.
Vec vertical_step(const Linearization& lin, const Vec& d_lo, const Vec& d_hi,
                  const Vec& weights, double radius, bool* ok) {
  const int n = static_cast<int>(d_lo.size());
  const int m = static_cast<int>(lin.g.size());
  QpProblem qp;
  qp.q = Mat::Zero(n + m, n + m);
  qp.q.bottomRightCorner(m, m) = 2.0 * Mat::Identity(m, m);
  qp.c = Vec::Zero(n + m);
  qp.g = Mat::Zero(2 * m, n + m);
  qp.h = Vec::Zero(2 * m);
  for (int j = 0; j < m; ++j) {
    qp.g.block(j, 0, 1, n) = lin.jac.row(j);
    qp.g(j, n + j) = -1.0;
    qp.h[j] = -lin.g[j];
    qp.g.block(m + j, 0, 1, n) = -lin.jac.row(j);
    qp.g(m + j, n + j) = -1.0;
    qp.h[m + j] = lin.g[j];
  }
  qp.lo.resize(n + m);
  qp.hi.resize(n + m);
  qp.lo.head(n) = d_lo;
  qp.hi.head(n) = d_hi;
  qp.lo.tail(m).setZero();
  qp.hi.tail(m).setConstant(kInf);
  qp.ball_w = Vec::Zero(n + m);
  qp.ball_w.head(n) = weights;
  qp.ball_radius = radius;

  const QpSolution s = solve_qp(qp);
  *ok = s.ok;
  return s.ok ? Vec(s.x.head(n)) : Vec(Vec::Zero(n));
}

// Feasibility step for pure slack structure. With jac = [A | I] the slack
// block absorbs any row residual the box allows, so for a candidate head
// step u_j = g_j + A_j d the row residual is the part of -u_j that the
// slack box clips off. Rows whose residual is certifiably zero over the
// whole step box are dropped, which keeps the program at the size of the
// head block plus a handful of near-violated rows.
Vec vertical_step_slack(const Linearization& lin, const Vec& d_lo,
                        const Vec& d_hi, const Vec& weights, double radius,
                        bool* ok) {
  const int m = static_cast<int>(lin.g.size());
  const int nw = static_cast<int>(d_lo.size()) - m;
  const auto a = lin.jac.leftCols(nw);

  // Componentwise step range: box intersected with the per-axis ball bound.
  Vec step_lo(nw), step_hi(nw);
  for (int i = 0; i < nw; ++i) {
    const double b = weights[i] > 0 ? radius / weights[i] : kInf;
    step_lo[i] = std::min(0.0, std::max(d_lo[i], -b));
    step_hi[i] = std::max(0.0, std::min(d_hi[i], b));
  }

  std::vector<int> pos_rows, neg_rows;
  for (int j = 0; j < m; ++j) {
    double reach = 0;
    for (int i = 0; i < nw; ++i)
      reach += std::max(std::abs(a(j, i) * step_lo[i]),
                        std::abs(a(j, i) * step_hi[i]));
    if (lin.g[j] + d_lo[nw + j] + reach > 0) pos_rows.push_back(j);
    if (lin.g[j] + d_hi[nw + j] - reach < 0) neg_rows.push_back(j);
  }

  const int kp = static_cast<int>(pos_rows.size());
  const int kn = static_cast<int>(neg_rows.size());
  const int nq = nw + kp + kn;

  Vec d = Vec::Zero(d_lo.size());
  *ok = true;
  if (nq > 0) {
    QpProblem qp;
    qp.q = Mat::Zero(nq, nq);
    for (int k = 0; k < kp + kn; ++k) qp.q(nw + k, nw + k) = 2.0;
    qp.c = Vec::Zero(nq);
    qp.g = Mat::Zero(kp + kn, nq);
    qp.h = Vec::Zero(kp + kn);
    for (int k = 0; k < kp; ++k) {
      const int j = pos_rows[k];
      qp.g.block(k, 0, 1, nw) = a.row(j);
      qp.g(k, nw + k) = -1.0;  // t+ >= u_j + slack_lo
      qp.h[k] = -lin.g[j] - d_lo[nw + j];
    }
    for (int k = 0; k < kn; ++k) {
      const int j = neg_rows[k];
      qp.g.block(kp + k, 0, 1, nw) = -a.row(j);
      qp.g(kp + k, nw + kp + k) = 1.0;  // t- <= u_j + slack_hi
      qp.h[kp + k] = lin.g[j] + d_hi[nw + j];
    }
    qp.lo.resize(nq);
    qp.hi.resize(nq);
    qp.lo.head(nw) = d_lo.head(nw);
    qp.hi.head(nw) = d_hi.head(nw);
    qp.lo.segment(nw, kp).setZero();
    qp.hi.segment(nw, kp).setConstant(kInf);
    qp.lo.tail(kn).setConstant(-kInf);
    qp.hi.tail(kn).setZero();
    qp.ball_w = Vec::Zero(nq);
    qp.ball_w.head(nw) = weights.head(nw);
    qp.ball_radius = radius;

    const QpSolution s = solve_qp(qp);
    *ok = s.ok;
    if (!s.ok) return Vec(Vec::Zero(d_lo.size()));
    d.head(nw) = s.x.head(nw);
  }
  for (int j = 0; j < m; ++j) {
    const double u = lin.g[j] + a.row(j).dot(d.head(nw));
    d[nw + j] = std::min(std::max(-u, d_lo[nw + j]), d_hi[nw + j]);
  }
  return d;
}

// Optimality step for pure slack structure. Only the feasibility step's
// per-row achieved residuals are kept (those are unique even when the step
// itself wanders on a flat face): the head block minimizes the model over
// the true linearized row intervals relaxed by exactly those residuals, and
// the slack components are recovered by clipping afterwards. Rows the
// feasibility step restored stay restored, and at a feasible point this is
// the plain one-shot step with no coupling to the feasibility step at all.
Vec horizontal_step_slack(const Linearization& lin, const Mat& hess_psd,
                          const Vec& d_v, const Vec& d_lo, const Vec& d_hi,
                          const Vec& weights, double radius, bool* ok,
                          Vec* lam) {
  const int m = static_cast<int>(lin.g.size());
  const int nw = static_cast<int>(d_lo.size()) - m;
  const auto a = lin.jac.leftCols(nw);
  const Vec resid = (lin.g + lin.jac * d_v).cwiseAbs();

  *lam = Vec::Zero(m);
  Vec d(d_lo.size());
  if (nw == 0) {
    *ok = true;
    d = d_v;
    return d;
  }

  std::vector<int> lo_rows, hi_rows;
  for (int j = 0; j < m; ++j) {
    if (std::isfinite(d_lo[nw + j])) lo_rows.push_back(j);
    if (std::isfinite(d_hi[nw + j])) hi_rows.push_back(j);
  }

  QpProblem qp;
  qp.q = hess_psd.topLeftCorner(nw, nw);
  qp.c = lin.grad.head(nw);
  qp.g = Mat::Zero(lo_rows.size() + hi_rows.size(), nw);
  qp.h = Vec::Zero(qp.g.rows());
  int r = 0;
  // Row j is feasible when g_j + A_j d_w lands in [-shi_j, -slo_j]; each
  // finite side contributes a half-space, widened by the row's residual.
  for (int j : lo_rows) {
    qp.g.row(r) = a.row(j);
    qp.h[r] = -lin.g[j] - d_lo[nw + j] + resid[j];
    ++r;
  }
  for (int j : hi_rows) {
    qp.g.row(r) = -a.row(j);
    qp.h[r] = lin.g[j] + d_hi[nw + j] + resid[j];
    ++r;
  }
  qp.lo = d_lo.head(nw);
  qp.hi = d_hi.head(nw);
  qp.ball_w = weights.head(nw);
  qp.ball_radius = radius;

  const QpSolution s = solve_qp(qp);
  *ok = s.ok;
  if (!s.ok) return d_v;
  d.head(nw) = s.x;
  for (int j = 0; j < m; ++j)
    d[nw + j] = std::clamp(-(lin.g[j] + a.row(j).dot(s.x)), d_lo[nw + j],
                           d_hi[nw + j]);
  // Each row's equality multiplier is the difference of its two side duals.
  r = 0;
  for (int j : lo_rows) (*lam)[j] += s.z[r++];
  for (int j : hi_rows) (*lam)[j] -= s.z[r++];
  return d;
}

// Optimality step: minimize the quadratic model subject to matching the
// linearized constraint values reached by the feasibility step. Dependent
// rows of the Jacobian are dropped by a rank-revealing factorization (the
// target is consistent by construction).
Vec horizontal_step(const Linearization& lin, const Mat& hess_psd,
                    const Vec& d_v, const Vec& d_lo, const Vec& d_hi,
                    const Vec& weights, double radius, bool* ok, Vec* lam) {
  const int n = static_cast<int>(d_lo.size());
  const int m = static_cast<int>(lin.g.size());
  QpProblem qp;
  qp.q = hess_psd;
  qp.c = lin.grad;
  qp.lo = d_lo;
  qp.hi = d_hi;
  qp.ball_w = weights;
  qp.ball_radius = radius;

  *lam = Vec::Zero(m);
  std::vector<int> kept;
  if (m > 0) {
    Eigen::ColPivHouseholderQR<Mat> qr(lin.jac.transpose());
    qr.setThreshold(1e-10);
    const int rank = static_cast<int>(qr.rank());
    const auto perm = qr.colsPermutation().indices();
    qp.a_eq.resize(rank, n);
    qp.b_eq.resize(rank);
    const Vec target = lin.jac * d_v;
    for (int k = 0; k < rank; ++k) {
      qp.a_eq.row(k) = lin.jac.row(perm[k]);
      qp.b_eq[k] = target[perm[k]];
      kept.push_back(perm[k]);
    }
  }

  const QpSolution s = solve_qp(qp);
  *ok = s.ok;
  if (s.ok)
    for (size_t k = 0; k < kept.size(); ++k) (*lam)[kept[k]] = s.nu[k];
  return s.ok ? s.x : d_v;
}

}  // namespace

Solution solve_nlp(Problem& problem, const Vec& x0, const Options& opts) {
  const int n = problem.num_vars();
  const Vec lo = problem.lower();
  const Vec hi = problem.upper();
  const Vec weights = problem.trust_weights();

  Solution sol;
  sol.x = x0;
  for (int i = 0; i < n; ++i)
    sol.x[i] = std::min(hi[i], std::max(lo[i], sol.x[i]));

  double f = 0;
  Vec g;
  problem.eval(sol.x, &f, &g);
  ++sol.evals;
  Linearization lin = problem.linearize(sol.x);

  double alpha = opts.alpha0;
  double eta = opts.eta0;
  double merit = f + eta * g.norm();

  Multipliers mult = estimate_multipliers(lin, sol.x, lo, hi);

  int it = 0;
  for (; it < opts.max_iter; ++it) {
    // The penalty must dominate the multipliers in the norm dual to the
    // residual measure, which for the 2-norm is the 2-norm itself.
    eta = std::max(eta, 2.0 * (mult.lambda.norm() + 1.0));
    merit = f + eta * g.norm();

    // Stationarity is judged relative to the gradient scale so the same
    // tolerance works whether the objective is in cents or thousands.
    const double stat_tol =
        opts.tol_stationarity *
        std::max(1.0, lin.grad.lpNorm<Eigen::Infinity>());

    if (mult.kkt_residual < stat_tol && g.norm() < opts.tol_feasibility) {
      sol.status = NlpStatus::Optimal;
      break;
    }
    if (alpha < opts.alpha_min) {
      // The radius collapsed. Decide what that means from how close the
      // current point already is.
      if (mult.kkt_residual < 10.0 * stat_tol &&
          g.norm() < 10.0 * opts.tol_feasibility)
        sol.status = NlpStatus::Optimal;
      else if (g.norm() < opts.tol_feasibility)
        sol.status = NlpStatus::IterationLimit;
      else
        sol.status = NlpStatus::Infeasible;
      break;
    }

    const Vec d_lo = lo - sol.x;
    const Vec d_hi = hi - sol.x;

    const bool slack_form =
        lin.num_slack > 0 && lin.num_slack == lin.g.size();
    bool ok_v = false, ok_h = false;
    const Vec d_v =
        slack_form
            ? vertical_step_slack(lin, d_lo, d_hi, weights, opts.xi * alpha,
                                  &ok_v)
            : vertical_step(lin, d_lo, d_hi, weights, opts.xi * alpha, &ok_v);
    if (!ok_v) {
      alpha *= 0.25;
      if (opts.record_trace)
        sol.trace.push_back(
            {it, alpha, -1.0, merit, g.norm(), false, 0, 0, eta});
      continue;
    }
    // A failed optimality solve falls back to the pure feasibility step,
    // which is always inside the ball and the box.
    const Mat hess_psd = convexified(lin.hess, weights);
    Vec lam_qp;
    Vec d = slack_form
                ? horizontal_step_slack(lin, hess_psd, d_v, d_lo, d_hi,
                                        weights, alpha, &ok_h, &lam_qp)
                : horizontal_step(lin, hess_psd, d_v, d_lo, d_hi, weights,
                                  alpha, &ok_h, &lam_qp);
    // Sub-problem solvers honor the box only to their own tolerance; clamp
    // so bound drift can never accumulate across iterations.
    for (int i = 0; i < n; ++i)
      d[i] = std::min(d_hi[i], std::max(d_lo[i], d[i]));

    if (ok_h) {
      // The optimality sub-problem prices every row it held; those duals
      // certify stationarity at points where the least-squares estimate
      // cannot (it ignores variables parked on their bounds).
      const double kkt_qp = projected_kkt(lin, sol.x, lo, hi, lam_qp);
      if (kkt_qp < mult.kkt_residual) mult = {lam_qp, kkt_qp};
      if (g.norm() < opts.tol_feasibility && kkt_qp < stat_tol) {
        sol.status = NlpStatus::Optimal;
        break;
      }
    }

    // Predicted merit decrease from the local model. When the step is
    // restoration-dominant and its objective price would outweigh the
    // predicted feasibility gain, the penalty is raised so the model keeps
    // preferring restoration. Fallback steps are excluded (their price is
    // not the market rate), and growth is capped so one junk step cannot
    // poison the weight for good.
    const double pred_f = lin.grad.dot(d) + 0.5 * d.dot(lin.hess * d);
    const double vpred = g.norm() - (g + lin.jac * d).norm();
    if (ok_h && vpred > std::max(0.1 * g.norm(), 1e-12) &&
        pred_f > 0.5 * eta * vpred)
      eta = std::min(2.0 * pred_f / vpred, 10.0 * eta);
    merit = f + eta * g.norm();
    const double pred = -pred_f + eta * vpred;

    double ratio;
    double actual = 0;
    double f_new = 0;
    Vec g_new;
    bool evaluable = true;
    try {
      problem.eval(sol.x + d, &f_new, &g_new);
      ++sol.evals;
    } catch (const NumericError&) {
      evaluable = false;
    }
    if (!evaluable) {
      ratio = -kInf;
    } else {
      actual = merit - (f_new + eta * g_new.norm());
      if (std::abs(pred) <= 1e-15 * std::max(1.0, std::abs(merit)))
        ratio = actual >= 0 ? 1.0 : 0.0;
      else if (pred < 0)
        // The model itself predicts an increase: the penalty has not caught
        // up with the local trade between objective and feasibility. Take
        // realized progress if there is any, but never expand the radius on
        // it, and never step uphill.
        ratio = actual > 0 ? 0.5 : -1.0;
      else
        ratio = actual / pred;
    }

    const bool accept = ratio >= 0.1;
    if (opts.record_trace)
      sol.trace.push_back({it, alpha, ratio, merit, g.norm(), accept, pred,
                           actual, eta, !ok_h});

    if (accept) {
      sol.x += d;
      f = f_new;
      g = g_new;
      lin = problem.linearize(sol.x);
      mult = estimate_multipliers(lin, sol.x, lo, hi);
      if (ratio > 0.75) alpha = std::min(2.0 * alpha, opts.alpha_max);
    } else {
      alpha *= 0.25;
    }
  }
  if (it >= opts.max_iter) sol.status = NlpStatus::IterationLimit;

  sol.f = f;
  sol.g = g;
  sol.g_norm = g.norm();
  sol.kkt_residual = mult.kkt_residual;
  sol.multipliers = mult.lambda;
  sol.iterations = it;
  return sol;
}

}  // namespace dsopt::tra
