#pragma once

#include <vector>

#include "lp.hpp"
#include "perturbed.hpp"
#include "tra.hpp"

namespace dsopt {

// Indices of rows that could still bind somewhere in [w_lo, w_hi]. A row is
// dropped only when its anchor value plus the worst-case first-order change
// over the box plus the curvature margin stays strictly below the limit, so
// dropping never removes a binding constraint. Rows must be filled at the
// operating point belonging to anchor_w.
std::vector<int> filter_rows(const std::vector<ConstraintRow>& rows,
                             const Vec& anchor_w, const Vec& w_lo,
                             const Vec& w_hi);

// Largest value-minus-limit over the given rows (templates suffice; only
// kind, element, and limit are read). Negative means strictly feasible.
double max_row_violation(const Network& net, const ControlLayout& layout,
                         const std::vector<ConstraintRow>& rows,
                         const OperatingPoint& op);

struct NodeNlpResult {
  tra::NlpStatus status = tra::NlpStatus::Infeasible;
  Vec w;          // full control vector at the final point
  double cost = 0;
  OperatingPoint op;
  double kkt_residual = 0;
  double max_violation = 0;  // over this problem's rows, at the final point
  int iterations = 0;
  int evals = 0;
  std::vector<tra::TraceRow> trace;
};

// One hour sub-problem restricted to a control box. Decision variables are
// the movable controls plus one slack per operating row; controls whose box
// has collapsed to a point are substituted out so the trust region only
// spans what can actually move. eval() runs an exact power flow at the
// candidate controls, linearize() re-anchors the sensitivity model there.
class NodeNlp : public tra::Problem {
 public:
  NodeNlp(const Network& net, const LoadView& loads,
          const ControlLayout& layout, const CostParams& cost,
          std::vector<ConstraintRow> rows, Vec w_lo, Vec w_hi);

  int num_vars() const override;
  int num_constraints() const override;
  Vec lower() const override;
  Vec upper() const override;
  Vec trust_weights() const override;
  void eval(const Vec& x, double* f, Vec* g) override;
  tra::Linearization linearize(const Vec& x) override;

  // Runs the trust-region solve from w_start (clamped into the box). May
  // throw NumericError if the power flow cannot be evaluated at the start.
  NodeNlpResult solve(const Vec& w_start, const tra::Options& opts);

  int pf_solves() const { return pf_solves_; }
  const std::vector<ConstraintRow>& rows() const { return rows_; }
  int num_movable() const { return static_cast<int>(active_.size()); }

 private:
  Vec full_w(const Vec& x) const;
  const OperatingPoint& op_at(const Vec& w);

  const Network& net_;
  const LoadView& loads_;
  const ControlLayout& layout_;
  CostParams cost_;
  std::vector<ConstraintRow> rows_;
  Vec w_lo_, w_hi_;
  std::vector<int> active_;  // movable control indices into the full layout
  Vec w_fixed_;              // full-length template holding pinned values
  int pf_solves_ = 0;
  bool cache_valid_ = false;
  Vec cache_w_;
  OperatingPoint cache_op_;

  // Curvature estimate for the cost over the movable block. The analytic
  // model only carries first-order voltage response, so its second-order
  // term is unreliable (it can even come out concave); a damped BFGS built
  // from consecutive re-anchored gradients is kept positive definite and
  // converges to the true curvature along the visited path.
  Mat curv_;
  bool curv_scaled_ = false;
  bool have_prev_ = false;
  Vec prev_x_, prev_grad_;
};

// Linear relaxation of an hour sub-problem around a fixed anchor: minimize
// the first-order cost over control offsets dw subject to the first-order
// rows and the node's box. Solutions are simplex vertices, which is what the
// cut machinery wants to round.
struct GateLp {
  LpProblem lp;
  double obj_offset = 0;  // exact cost at dw = 0
  Vec anchor_w;
  int num_rows = 0;  // operating rows; any appended cuts come after these
};

GateLp build_gate_lp(const ObjectiveModel& obj,
                     const std::vector<ConstraintRow>& rows,
                     const Vec& anchor_w, const Vec& w_lo, const Vec& w_hi);

}  // namespace dsopt
