#include "qp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "errors.hpp"

namespace dsopt {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Largest step in [0, 1] keeping v + a*dv >= (1 - tau) * v.
double boundary_step(const Vec& v, const Vec& dv, double tau) {
  double a = 1.0;
  for (int i = 0; i < v.size(); ++i)
    if (dv[i] < 0) a = std::min(a, -tau * v[i] / dv[i]);
  return a;
}

}  // namespace

// Primal-dual interior point with an infeasible start. The box and the
// weighted trust ball are folded into one inequality list; every slack/dual
// pair is eliminated, so each Newton step solves one bordered system in
// (dx, dnu).
QpSolution solve_qp(const QpProblem& p, int max_iter, double tol) {
  const int n = static_cast<int>(p.c.size());
  const int m_g = static_cast<int>(p.g.rows());
  const int m_e = static_cast<int>(p.a_eq.rows());
  const bool has_ball = p.ball_radius > 0 && p.ball_w.size() == n &&
                        p.ball_w.cwiseAbs().maxCoeff() > 0;

  // Assemble the linear inequalities: general rows then finite box faces.
  // General rows are equilibrated to unit sup-norm; mixed row scales
  // (sensitivities here span many orders of magnitude) otherwise wreck the
  // Newton system's conditioning. Near-zero rows carry no direction at all:
  // they are vacuous unless their bound is clearly negative.
  std::vector<int> keep;
  std::vector<double> row_scale;
  for (int i = 0; i < m_g; ++i) {
    const double rn = p.g.row(i).cwiseAbs().maxCoeff();
    if (rn > 1e-12) {
      keep.push_back(i);
      row_scale.push_back(rn);
    } else if (p.h[i] < -1e-9) {
      return {};  // 0 x <= h < 0: no point exists
    }
  }
  std::vector<int> box_lo, box_hi;
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lo[j])) box_lo.push_back(j);
    if (std::isfinite(p.hi[j])) box_hi.push_back(j);
  }
  const int m_kept = static_cast<int>(keep.size());
  const int m_lin = m_kept + static_cast<int>(box_lo.size() + box_hi.size());
  Mat g(m_lin, n);
  Vec h(m_lin);
  g.setZero();
  for (int r = 0; r < m_kept; ++r) {
    g.row(r) = p.g.row(keep[r]) / row_scale[r];
    h[r] = p.h[keep[r]] / row_scale[r];
  }
  int r = m_kept;
  for (int j : box_hi) {
    g(r, j) = 1.0;
    h[r] = p.hi[j];
    ++r;
  }
  for (int j : box_lo) {
    g(r, j) = -1.0;
    h[r] = -p.lo[j];
    ++r;
  }

  // The ball is handled in radius-normalized form, ||(W/r) x||^2 <= 1, so
  // its slack and dual live at unit scale no matter how small the radius is.
  Vec lam;  // squared normalized ball weights
  if (has_ball) {
    lam = p.ball_w.cwiseProduct(p.ball_w) / (p.ball_radius * p.ball_radius);
  }
  const double r2 = 1.0;

  QpSolution sol;
  sol.x = Vec::Zero(n);

  // Pure equality-constrained problem: one KKT solve.
  if (m_lin == 0 && !has_ball) {
    Mat kkt = Mat::Zero(n + m_e, n + m_e);
    kkt.topLeftCorner(n, n) = p.q;
    if (m_e > 0) {
      kkt.topRightCorner(n, m_e) = p.a_eq.transpose();
      kkt.bottomLeftCorner(m_e, n) = p.a_eq;
    }
    Vec rhs(n + m_e);
    rhs.head(n) = -p.c;
    if (m_e > 0) rhs.tail(m_e) = p.b_eq;
    const Vec s = kkt.partialPivLu().solve(rhs);
    if (!s.allFinite()) return sol;
    sol.x = s.head(n);
    sol.ok = true;
    sol.objective = 0.5 * sol.x.dot(p.q * sol.x) + p.c.dot(sol.x);
    sol.z = Vec::Zero(m_g);
    if (m_e > 0) sol.nu = s.tail(m_e);
    return sol;
  }

  // Interior primal start: pull toward zero, strictly inside box and ball.
  Vec x = Vec::Zero(n);
  for (int j = 0; j < n; ++j) {
    double lo = std::isfinite(p.lo[j]) ? p.lo[j] : -1e30;
    double hi = std::isfinite(p.hi[j]) ? p.hi[j] : 1e30;
    const double pad = 0.01 * std::min(hi - lo, 1e30);
    x[j] = std::min(hi - pad, std::max(lo + pad, 0.0));
  }
  if (has_ball) {
    const double wn = std::sqrt(x.dot(lam.cwiseProduct(x)));
    if (wn > 0.9) x *= 0.9 / wn;
  }

  Vec s(m_lin + (has_ball ? 1 : 0));
  Vec z = Vec::Ones(s.size());
  for (int i = 0; i < m_lin; ++i)
    s[i] = std::max(1e-2, h[i] - g.row(i).dot(x));
  if (has_ball)
    s[m_lin] = std::max(1e-2 * r2, r2 - x.dot(lam.cwiseProduct(x)));
  Vec nu = Vec::Zero(m_e);

  const int m_all = static_cast<int>(s.size());
  const double tau = 0.995;
  // Tolerances are judged relative to the data scale the residuals carry.
  const double scale =
      1.0 + p.c.lpNorm<Eigen::Infinity>() +
      (m_lin > 0 ? h.lpNorm<Eigen::Infinity>() : 0.0);

  for (int it = 0; it < max_iter; ++it) {
    sol.iterations = it;
    const Vec ball_grad =
        has_ball ? Vec(2.0 * lam.cwiseProduct(x)) : Vec();

    // Residuals.
    Vec r_dual = p.q * x + p.c;
    if (m_lin > 0) r_dual += g.transpose() * z.head(m_lin);
    if (has_ball) r_dual += z[m_lin] * ball_grad;
    if (m_e > 0) r_dual += p.a_eq.transpose() * nu;
    Vec r_prim(m_all);
    if (m_lin > 0) r_prim.head(m_lin) = g * x + s.head(m_lin) - h;
    if (has_ball)
      r_prim[m_lin] = x.dot(lam.cwiseProduct(x)) + s[m_lin] - r2;
    Vec r_eq = m_e > 0 ? Vec(p.a_eq * x - p.b_eq) : Vec();

    const double mu = s.dot(z) / m_all;
    const double res =
        std::max({r_dual.lpNorm<Eigen::Infinity>(),
                  r_prim.lpNorm<Eigen::Infinity>(),
                  m_e > 0 ? r_eq.lpNorm<Eigen::Infinity>() : 0.0});
    sol.kkt_residual = std::max(res, mu);
    if (res < tol * scale && mu < tol * scale) {
      sol.ok = true;
      break;
    }

    // Condensed Newton matrix.
    Mat m = p.q;
    m.diagonal().array() += 1e-12;
    if (m_lin > 0) {
      const Vec zs = (z.head(m_lin).array() / s.head(m_lin).array()).matrix();
      m.noalias() += g.transpose() * zs.asDiagonal() * g;
    }
    if (has_ball) {
      m += 2.0 * z[m_lin] * Mat(lam.asDiagonal());
      m += (z[m_lin] / s[m_lin]) * (ball_grad * ball_grad.transpose());
    }

    Mat kkt = Mat::Zero(n + m_e, n + m_e);
    kkt.topLeftCorner(n, n) = m;
    if (m_e > 0) {
      kkt.topRightCorner(n, m_e) = p.a_eq.transpose();
      kkt.bottomLeftCorner(m_e, n) = p.a_eq;
    }
    Eigen::PartialPivLU<Mat> lu(kkt);

    auto solve_step = [&](double sigma_mu, Vec* dx, Vec* ds, Vec* dz,
                          Vec* dnu) {
      // Eliminated complementarity: z ds + s dz = sigma_mu - s z.
      Vec rhs_x = -r_dual;
      if (m_lin > 0) {
        Vec wv(m_lin);
        for (int i = 0; i < m_lin; ++i)
          wv[i] = (sigma_mu - s[i] * z[i] + z[i] * r_prim[i]) / s[i];
        rhs_x.noalias() -= g.transpose() * wv;
      }
      if (has_ball) {
        const double w = (sigma_mu - s[m_lin] * z[m_lin] +
                          z[m_lin] * r_prim[m_lin]) /
                         s[m_lin];
        rhs_x -= ball_grad * w;
      }
      Vec rhs(n + m_e);
      rhs.head(n) = rhs_x;
      if (m_e > 0) rhs.tail(m_e) = -r_eq;
      const Vec step = lu.solve(rhs);
      *dx = step.head(n);
      if (m_e > 0) *dnu = step.tail(m_e);
      ds->resize(m_all);
      dz->resize(m_all);
      for (int i = 0; i < m_lin; ++i) {
        (*ds)[i] = -g.row(i).dot(*dx) - r_prim[i];
        (*dz)[i] = (sigma_mu - s[i] * z[i] - z[i] * (*ds)[i]) / s[i];
      }
      if (has_ball) {
        (*ds)[m_lin] = -ball_grad.dot(*dx) - r_prim[m_lin];
        (*dz)[m_lin] =
            (sigma_mu - s[m_lin] * z[m_lin] - z[m_lin] * (*ds)[m_lin]) /
            s[m_lin];
      }
    };

    // Predictor for the centering weight.
    Vec dx_a, ds_a, dz_a, dnu_a;
    solve_step(0.0, &dx_a, &ds_a, &dz_a, &dnu_a);
    if (!dx_a.allFinite()) return sol;
    const double ap = boundary_step(s, ds_a, 1.0);
    const double ad = boundary_step(z, dz_a, 1.0);
    const double mu_aff =
        (s + ap * ds_a).dot(z + ad * dz_a) / m_all;
    double sigma = std::pow(mu_aff / mu, 3);
    sigma = std::min(0.99, std::max(1e-4, sigma));

    Vec dx, ds, dz, dnu;
    solve_step(sigma * mu, &dx, &ds, &dz, &dnu);
    if (!dx.allFinite()) return sol;

    const double a_p = boundary_step(s, ds, tau);
    const double a_d = boundary_step(z, dz, tau);
    x += a_p * dx;
    s += a_p * ds;
    z += a_d * dz;
    if (m_e > 0) nu += a_d * dnu;
  }

  if (!sol.ok) {
    // Accept a near-solution if the final residuals are small enough to be
    // usable by the caller; otherwise report failure. Primal feasibility is
    // part of the bar: with an infeasible start the iterate satisfies
    // g x <= h only in the limit, and a caller must never receive a point
    // that steps outside the feasible set.
    const double mu = s.dot(z) / m_all;
    Vec r_dual = p.q * x + p.c;
    if (m_lin > 0) r_dual += g.transpose() * z.head(m_lin);
    if (has_ball) r_dual += z[m_lin] * 2.0 * lam.cwiseProduct(x);
    if (m_e > 0) r_dual += p.a_eq.transpose() * nu;
    double r_prim = 0.0;
    if (m_lin > 0)
      r_prim = (g * x - h).cwiseMax(0.0).lpNorm<Eigen::Infinity>();
    if (has_ball)
      r_prim = std::max(r_prim, x.dot(lam.cwiseProduct(x)) - r2);
    if (m_e > 0)
      r_prim = std::max(r_prim, (p.a_eq * x - p.b_eq).lpNorm<Eigen::Infinity>());
    sol.kkt_residual =
        std::max({mu, r_dual.lpNorm<Eigen::Infinity>(), r_prim});
    sol.ok = sol.kkt_residual < 1e-5 * scale;
  }
  sol.x = x;
  sol.objective = 0.5 * x.dot(p.q * x) + p.c.dot(x);
  // Hand back duals against the caller's unscaled rows: the internal dual of
  // a row divided by the factor the row was scaled with.
  sol.z = Vec::Zero(m_g);
  for (int k = 0; k < m_kept; ++k) sol.z[keep[k]] = z[k] / row_scale[k];
  sol.nu = nu;
  return sol;
}

}  // namespace dsopt
