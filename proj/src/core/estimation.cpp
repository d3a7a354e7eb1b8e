#include "estimation.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace dsopt {
namespace {

// Minimum pairwise separation of the complex port currents; below this the
// three samples carry the same information and the solve is degenerate.
constexpr double kMinSpread = 1e-6;

Cx port_current(const PortSnapshot& s) { return std::polar(s.i_mag, s.phi); }

// Back-outs of the source phasor in each sample's voltage frame. At the
// solution all three share one magnitude: the source voltage.
std::array<Cx, 3> back_outs(const std::array<PortSnapshot, 3>& snaps, Cx z) {
  std::array<Cx, 3> w;
  for (int k = 0; k < 3; ++k)
    w[k] = snaps[k].v_mag + z * port_current(snaps[k]);
  return w;
}

}  // namespace

TheveninEstimate estimate_thevenin(const std::array<PortSnapshot, 3>& snaps) {
  std::array<Cx, 3> c;
  double scale = 0;
  for (int k = 0; k < 3; ++k) {
    if (snaps[k].v_mag <= 0)
      throw ConditioningError("port voltage sample must be positive");
    c[k] = port_current(snaps[k]);
    scale = std::max(scale, snaps[k].v_mag * snaps[k].v_mag);
  }
  const double spread =
      std::min({std::abs(c[0] - c[1]), std::abs(c[0] - c[2]),
                std::abs(c[1] - c[2])});
  if (spread < kMinSpread)
    throw ConditioningError(
        "port current samples are too similar to separate source and "
        "impedance");

  // Magnitude-match residual in the impedance alone; the source voltage and
  // the per-sample angles drop out of these two equations.
  const auto residual = [&](Cx z, double* f1, double* f2) {
    const auto w = back_outs(snaps, z);
    *f1 = std::norm(w[0]) - std::norm(w[1]);
    *f2 = std::norm(w[0]) - std::norm(w[2]);
  };

  // Coarse polar sweep picks the Newton basin.
  Cx z_best(0, 0);
  double best = 0;
  {
    double f1, f2;
    residual(z_best, &f1, &f2);
    best = std::hypot(f1, f2);
  }
  for (int im = 0; im < 40; ++im) {
    const double zm = 1e-4 * std::pow(1e4, im / 39.0);  // 1e-4 .. 1
    for (int ia = 0; ia <= 32; ++ia) {
      const double arg = -0.3 + (kPi / 2 + 0.6) * ia / 32.0;
      const Cx z = std::polar(zm, arg);
      double f1, f2;
      residual(z, &f1, &f2);
      const double r = std::hypot(f1, f2);
      if (r < best) {
        best = r;
        z_best = z;
      }
    }
  }

  // Damped Newton on the two magnitude matches, in Cartesian impedance.
  Cx z = z_best;
  const double tol = 1e-13 * std::max(1.0, scale);
  int iters = 0;
  double f1, f2;
  residual(z, &f1, &f2);
  double fn = std::hypot(f1, f2);
  for (; iters < 200 && fn > tol; ++iters) {
    const auto w = back_outs(snaps, z);
    // d|w_k|^2 / dz = 2 Re(conj(w_k) c_k) , -2 Im(conj(w_k) c_k)
    const auto d = [&](int k) { return std::conj(w[k]) * c[k]; };
    const double j11 = 2 * (d(0).real() - d(1).real());
    const double j12 = -2 * (d(0).imag() - d(1).imag());
    const double j21 = 2 * (d(0).real() - d(2).real());
    const double j22 = -2 * (d(0).imag() - d(2).imag());
    const double det = j11 * j22 - j12 * j21;
    if (std::abs(det) < 1e-300)
      throw ConditioningError("impedance solve is singular");
    const double dzr = -(j22 * f1 - j12 * f2) / det;
    const double dzi = -(-j21 * f1 + j11 * f2) / det;

    double damp = 1.0;
    bool moved = false;
    for (int h = 0; h < 40; ++h, damp *= 0.5) {
      const Cx zt = z + damp * Cx(dzr, dzi);
      double g1, g2;
      residual(zt, &g1, &g2);
      const double gn = std::hypot(g1, g2);
      if (gn < fn) {
        z = zt;
        f1 = g1;
        f2 = g2;
        fn = gn;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  if (fn > 1e3 * tol)
    throw ConditioningError("source estimate did not converge");

  const auto w = back_outs(snaps, z);
  TheveninEstimate est;
  est.v_th = std::abs(w[0]);
  est.z_mag = std::abs(z);
  est.z_arg = std::arg(z);
  est.residual = std::max(std::abs(std::abs(w[1]) - est.v_th),
                          std::abs(std::abs(w[2]) - est.v_th));
  est.iterations = iters;
  return est;
}

UpstreamUpdate update_upstream(
    const UpstreamThevenin& previous, const Vec& w_now, const Vec& w_scheduled,
    const ObjectiveModel& obj, const Vec& anchor_w,
    const std::function<PortSnapshot(const Vec&)>& measure, double eps_v,
    double eps_z) {
  UpstreamUpdate upd;
  upd.w_final = w_now;

  const PortSnapshot snap0 = measure(w_now);
  upd.v_th_quick =
      std::abs(Cx(snap0.v_mag, 0) + previous.z * port_current(snap0));

  // Rank the outstanding scheduled moves by how much the cost model says
  // they matter; probing with the two cheapest perturbs the port enough to
  // re-estimate while giving up the least optimality.
  struct Move {
    int idx;
    double impact;
  };
  std::vector<Move> moves;
  for (int i = 0; i < w_now.size(); ++i) {
    const double dw = w_scheduled[i] - w_now[i];
    if (std::abs(dw) < 1e-12) continue;
    const double base = w_now[i] - anchor_w[i];
    const double lin = obj.grad[i] * dw;
    const double quad = 0.5 * obj.hess(i, i) * dw * dw +
                        obj.hess(i, i) * base * dw;  // diagonal model
    moves.push_back({i, std::abs(lin + quad)});
  }
  std::sort(moves.begin(), moves.end(), [](const Move& a, const Move& b) {
    return a.impact != b.impact ? a.impact < b.impact : a.idx < b.idx;
  });

  if (moves.size() < 2) {
    // Not enough freedom to diversify the samples; hold the old impedance.
    upd.full_estimate = false;
    upd.estimate.v_th = upd.v_th_quick;
    upd.estimate.z_mag = std::abs(previous.z);
    upd.estimate.z_arg = std::arg(previous.z);
    upd.reschedule =
        std::abs(upd.v_th_quick - std::abs(previous.v_source)) >= eps_v;
    return upd;
  }

  std::array<PortSnapshot, 3> snaps{snap0, PortSnapshot{}, PortSnapshot{}};
  Vec w = w_now;
  for (int k = 0; k < 2; ++k) {
    const int i = moves[k].idx;
    w[i] = w_scheduled[i];
    snaps[k + 1] = measure(w);
    upd.moves_applied.push_back(i);
  }
  upd.w_final = w;

  upd.estimate = estimate_thevenin(snaps);
  upd.full_estimate = true;
  const double dv = std::abs(upd.estimate.v_th - std::abs(previous.v_source));
  const double dz = std::abs(upd.estimate.z() - previous.z);
  upd.reschedule = dv >= eps_v || dz >= eps_z;
  return upd;
}

LoadParamUpdate update_load_params(double v0, const LoadSnapshot& s1,
                                   const LoadSnapshot& s2, double p0_prev,
                                   double share_prev, double change_tol) {
  if (v0 <= 0) throw ValidationError("reference voltage must be positive");
  if (std::abs(s1.v_mag - s2.v_mag) < 0.002)
    throw ConditioningError(
        "load samples need at least 0.002 pu of voltage separation");

  // p = u + t (a - 1) with a = (v/v0)^2, u = p0, t = p0 * share.
  const double a1 = (s1.v_mag / v0) * (s1.v_mag / v0);
  const double a2 = (s2.v_mag / v0) * (s2.v_mag / v0);
  const double t = (s2.p - s1.p) / (a2 - a1);
  const double u = s1.p - t * (a1 - 1.0);

  LoadParamUpdate upd;
  upd.p0 = u;
  if (std::abs(u) < 1e-12) {
    upd.share = 0;
    upd.clipped = t != 0;
  } else {
    upd.share = t / u;
    if (upd.share < 0 || upd.share > 1) {
      upd.share = std::min(1.0, std::max(0.0, upd.share));
      upd.clipped = true;
    }
  }
  const double rel_p =
      std::abs(upd.p0 - p0_prev) / std::max(std::abs(p0_prev), 1e-9);
  upd.reschedule =
      rel_p > change_tol || std::abs(upd.share - share_prev) > change_tol;
  return upd;
}

}  // namespace dsopt
