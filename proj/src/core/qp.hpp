#pragma once
#include "phasor.hpp"

namespace dsopt {

// Convex quadratic program:
//   minimize 0.5 x'Qx + c'x
//   subject to  g x <= h,  a_eq x = b_eq,  lo <= x <= hi,
//               ||diag(ball_w) x||_2 <= ball_radius   (if ball_radius > 0)
// Infinite box entries are skipped. Q must be positive semidefinite.
struct QpProblem {
  Mat q;
  Vec c;
  Mat g;  // may have zero rows
  Vec h;
  Vec lo, hi;
  Vec ball_w;  // empty or per-variable weights; zero weight excludes a variable
  double ball_radius = 0;
  Mat a_eq;  // may have zero rows
  Vec b_eq;
};

struct QpSolution {
  bool ok = false;
  Vec x;
  double objective = 0;
  double kkt_residual = 0;
  int iterations = 0;
  Vec z;   // duals of the general rows, in the caller's order and scale
  Vec nu;  // duals of the equality rows
};

QpSolution solve_qp(const QpProblem& p, int max_iter = 100, double tol = 1e-9);

}  // namespace dsopt
