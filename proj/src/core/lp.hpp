#pragma once
#include <vector>

#include "phasor.hpp"

namespace dsopt {

// Linear program: minimize c.x subject to row relations and variable boxes.
// Infinite bounds are accepted and clipped to a large finite box internally,
// so callers should keep meaningful magnitudes well below 1e9.
struct LpProblem {
  enum class Rel { Le, Ge, Eq };
  Vec c;
  Mat a;  // one constraint per row
  Vec rhs;
  std::vector<Rel> rel;
  Vec lo, hi;
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

struct LpSolution {
  LpStatus status = LpStatus::IterationLimit;
  double objective = 0;
  Vec x;  // structural variables only; a vertex when status is Optimal
  int iterations = 0;
};

LpSolution solve_lp(const LpProblem& problem, int max_iter = 20000);

}  // namespace dsopt
