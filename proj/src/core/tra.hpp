#pragma once
#include <vector>

#include "phasor.hpp"

namespace dsopt::tra {

// Local expansion of the problem at a point: objective value/gradient/model
// Hessian and equality-form constraint values g(x) = 0 with Jacobian.
//
// num_slack > 0 declares pure slack structure: the trailing num_slack
// columns of jac form the identity over the rows (so num_slack must equal
// g.size()), and those variables carry zero gradient, Hessian, and trust
// weight. The solver then reduces both sub-problems to the leading block
// and recovers the slack components in closed form, which keeps the
// sub-problem size at the number of genuine decision variables.
struct Linearization {
  double f = 0;
  Vec grad;
  Mat hess;
  Vec g;
  Mat jac;
  int num_slack = 0;
};

// Equality-constrained box NLP solved by a composite-step trust region:
//   minimize f(x)  subject to  g(x) = 0,  lower <= x <= upper.
// Inequalities are expected to arrive pre-slacked as equalities.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual int num_vars() const = 0;
  virtual int num_constraints() const = 0;
  virtual Vec lower() const = 0;
  virtual Vec upper() const = 0;
  // Per-variable trust-region scaling; zero excludes a variable (slacks).
  virtual Vec trust_weights() const = 0;
  // May throw NumericError when the point cannot be evaluated; the step
  // that led there is then rejected.
  virtual void eval(const Vec& x, double* f, Vec* g) = 0;
  virtual Linearization linearize(const Vec& x) = 0;
};

struct Options {
  // Relative to the sup-norm of the objective gradient (floored at 1).
  double tol_stationarity = 1e-6;
  double tol_feasibility = 1e-8;
  double alpha0 = 0.1;
  double alpha_min = 1e-8;
  double alpha_max = 1.0;
  int max_iter = 100;
  double eta0 = 10.0;
  double xi = 0.8;  // share of the radius granted to the feasibility step
  bool record_trace = false;
};

enum class NlpStatus { Optimal, Infeasible, IterationLimit };

struct TraceRow {
  int iter = 0;
  double alpha = 0, ratio = 0, merit = 0, g_norm = 0;
  bool accepted = false;
  double pred = 0, actual = 0;  // model vs realized merit decrease
  double eta = 0;               // penalty weight the row was judged with
  bool fallback = false;        // optimality sub-problem failed, raw
                                // feasibility step was used instead
};

struct Solution {
  NlpStatus status = NlpStatus::IterationLimit;
  Vec x;
  double f = 0;
  Vec g;
  double g_norm = 0;
  double kkt_residual = 0;
  Vec multipliers;
  int iterations = 0;
  int evals = 0;
  std::vector<TraceRow> trace;
};

Solution solve_nlp(Problem& problem, const Vec& x0, const Options& opts = {});

}  // namespace dsopt::tra
