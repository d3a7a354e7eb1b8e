#pragma once

#include <string>
#include <vector>

#include "node_problem.hpp"

namespace dsopt {

struct MinlpOptions {
  // Linear expediting gate: screen each node with a relaxed first-order
  // program before paying for a trust-region solve. Off means every node
  // goes straight to the nonlinear sub-problem.
  bool use_gate = true;
  int workers = 1;  // >1 shares the queue across threads; 1 is deterministic
  int node_budget = 5000;
  double feas_tol = 1e-6;   // integrality and operating-limit tolerance
  double rel_gap = 1e-9;    // pruning margin relative to the incumbent
  int max_cuts_per_node = 8;
  bool record_nodes = false;
  tra::Options nlp;
  // Optional root box tighter than the layout bounds (e.g. frozen taps).
  // Empty means the full layout box.
  Vec root_lo, root_hi;
};

struct NodeRecord {
  int id = -1, parent = -1, depth = 0;
  double parent_bound = 0;
  double lp_bound = 0;   // NaN when the gate did not produce one
  double nlp_bound = 0;  // NaN when the nonlinear solve was skipped
  std::string action;    // pruned_bound | pruned_infeasible | branched |
                         // integer_feasible
  int branch_var = -1;
  double branch_value = 0;
  int nlp_iterations = 0;
  double incumbent_after = 0;  // +inf while none exists
};

struct MinlpResult {
  bool has_incumbent = false;
  Vec w;                 // best integer-feasible controls
  double objective = 0;  // exact power-flow cost of the incumbent
  OperatingPoint op;
  double lower_bound = 0;
  bool budget_exceeded = false;

  // Every opened node is closed exactly one way:
  // opened == pruned_bound + pruned_infeasible + branched + integer_feasible
  //           + abandoned.
  int nodes_opened = 0;
  int pruned_bound = 0;
  int pruned_infeasible = 0;
  int branched = 0;
  int integer_feasible = 0;
  int abandoned = 0;  // leaf whose sub-problem would not converge

  int tra_calls = 0;  // trust-region solves, incl. polish and rounding
  int lp_solves = 0;
  int pf_solves = 0;
  std::vector<NodeRecord> records;
};

// Globally minimizes the hour cost over the control box of the layout:
// integer slots range over their tap/step positions, continuous slots over
// their device limits. w_anchor supplies the operating point the first-order
// screening model is built around and the warm start for the root.
MinlpResult solve_minlp(const Network& net, const LoadView& loads,
                        const ControlLayout& layout, const CostParams& cost,
                        const Vec& w_anchor, const MinlpOptions& opts = {});

}  // namespace dsopt
