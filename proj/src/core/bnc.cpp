#include "bnc.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

namespace dsopt {
namespace {

constexpr double kIntTol = 1e-6;    // distance at which a value counts as integral
constexpr double kCutViol = 1e-7;   // keep a cut only if the vertex violates it
const double kInf = std::numeric_limits<double>::infinity();
const double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Cut {
  Vec a;  // coefficients over dw = w - anchor, nonzero on integer slots only
  double b = 0;
};

struct BcNode {
  int id = 0, parent = -1, depth = 0;
  Vec lo, hi;
  double bound = -kInf;  // best known lower bound for this sub-tree
  Vec seed;              // warm start controls
  std::vector<Cut> cuts;
};

struct NodeOrder {
  bool operator()(const BcNode& x, const BcNode& y) const {
    if (x.bound != y.bound) return x.bound < y.bound;
    return x.id < y.id;  // FIFO among equal bounds
  }
};

std::vector<ConstraintRow> subset(const std::vector<ConstraintRow>& rows,
                                  const std::vector<int>& keep) {
  std::vector<ConstraintRow> out;
  out.reserve(keep.size());
  for (int j : keep) out.push_back(rows[j]);
  return out;
}

struct Solver {
  Solver(const Network& n, const LoadView& l, const ControlLayout& lay,
         const CostParams& c, const MinlpOptions& o)
      : net(n), loads(l), layout(lay), cost(c), opts(o) {}

  const Network& net;
  const LoadView& loads;
  const ControlLayout& layout;
  CostParams cost;
  MinlpOptions opts;

  Vec anchor_w;
  Vec root_lo, root_hi;
  std::vector<ConstraintRow> templates;    // canonical rows, unfilled
  std::vector<ConstraintRow> anchor_rows;  // filled at the anchor point
  ObjectiveModel obj0;
  Vec col_norm;  // branching tie-break: anchor sensitivity column norms
  std::vector<bool> is_int;
  bool cuts_enabled = false;

  std::mutex mu;
  std::condition_variable cv;
  std::set<BcNode, NodeOrder> queue;
  int next_id = 0;
  int busy = 0;
  bool stop = false;

  double z_star = kInf;
  Vec w_star;
  OperatingPoint op_star;
  double abandoned_lb = kInf;  // inherited bound of any abandoned leaf
  std::set<std::vector<long long>> tried;  // integer assignments already polished

  MinlpResult out;

  double prune_level() const {  // callers hold mu
    return z_star - opts.rel_gap * std::max(1.0, std::abs(z_star));
  }
};

std::vector<long long> int_key(const Solver& s, const Vec& w) {
  std::vector<long long> key;
  for (int i = 0; i < s.layout.size(); ++i)
    if (s.is_int[i]) key.push_back(std::llround(w[i]));
  return key;
}

Vec box_halfwidths(const Vec& anchor, const Vec& lo, const Vec& hi) {
  Vec h(anchor.size());
  for (int i = 0; i < anchor.size(); ++i)
    h[i] = std::max(std::abs(lo[i] - anchor[i]), std::abs(hi[i] - anchor[i]));
  return h;
}

// Interval bound on the quadratic cost term over the box: the linear gate
// objective can undershoot the model by at most this much.
double objective_box_margin(const Mat& hess, const Vec& h) {
  double m = 0;
  for (int j = 0; j < hess.rows(); ++j)
    for (int k = 0; k < hess.cols(); ++k)
      m += std::abs(hess(j, k)) * h[j] * h[k];
  return 0.5 * m + 1e-12;
}

// Integer rounding cuts from one relaxed row a.dw <= b: shift the integer
// slots to nonnegative range, push the continuous slots into the right hand
// side at their worst box corner, scale, and round everything down. Valid
// for every point of the relaxed region whose integer slots are integral.
void cut_candidates(const Vec& a, double b, const Vec& dw_lo, const Vec& dw_hi,
                    const std::vector<bool>& is_int, const Vec& dw_star,
                    std::vector<std::pair<double, Cut>>* found) {
  const int n = static_cast<int>(a.size());
  double r0 = b;
  double maxabs = 0;
  for (int j = 0; j < n; ++j) {
    if (is_int[j]) {
      r0 -= a[j] * dw_lo[j];
      maxabs = std::max(maxabs, std::abs(a[j]));
    } else {
      r0 -= std::min(a[j] * dw_lo[j], a[j] * dw_hi[j]);
    }
  }
  if (maxabs < 1e-9 || !std::isfinite(r0)) return;

  for (int u = 1; u <= 4; ++u) {
    const double lam = u / maxabs;
    Cut cut;
    cut.a = Vec::Zero(n);
    double rhs = std::floor(lam * r0);
    bool nontrivial = false;
    for (int j = 0; j < n; ++j) {
      if (!is_int[j]) continue;
      const double f = std::floor(lam * a[j]);
      if (f != 0) nontrivial = true;
      cut.a[j] = f;
      rhs += f * dw_lo[j];
    }
    if (!nontrivial) continue;
    cut.b = rhs;
    const double viol = cut.a.dot(dw_star) - cut.b;
    if (viol > kCutViol * std::max(1.0, std::abs(cut.b)))
      found->emplace_back(viol, std::move(cut));
  }
}

bool same_cut(const Cut& x, const Cut& y) {
  return x.a.size() == y.a.size() && std::abs(x.b - y.b) < 1e-12 &&
         (x.a - y.a).lpNorm<Eigen::Infinity>() < 1e-12;
}

void add_cuts(Solver& s, BcNode* node, const GateLp& gate, const Vec& dw_star) {
  std::vector<std::pair<double, Cut>> found;
  const Vec dw_lo = node->lo - s.anchor_w;
  const Vec dw_hi = node->hi - s.anchor_w;
  for (int r = 0; r < gate.num_rows; ++r)
    cut_candidates(gate.lp.a.row(r), gate.lp.rhs[r], dw_lo, dw_hi, s.is_int,
                   dw_star, &found);
  std::sort(found.begin(), found.end(),
            [](const auto& x, const auto& y) { return x.first > y.first; });
  for (auto& [viol, cut] : found) {
    if (static_cast<int>(node->cuts.size()) >= s.opts.max_cuts_per_node) break;
    bool dup = false;
    for (const auto& old : node->cuts) dup = dup || same_cut(old, cut);
    if (!dup) node->cuts.push_back(std::move(cut));
  }
}

// Exact verification of a candidate: snap the integer slots, run the power
// flow, and accept only if every operating limit and box holds.
bool try_incumbent(Solver& s, const Vec& w_in) {
  Vec w = w_in;
  for (int i = 0; i < s.layout.size(); ++i)
    if (s.is_int[i]) w[i] = std::llround(w[i]);
  w = s.layout.clamp(w);

  OperatingPoint op;
  try {
    op = solve_power_flow(s.net, s.loads, s.layout, w);
  } catch (const NumericError&) {
    return false;
  }
  {
    std::lock_guard<std::mutex> lk(s.mu);
    ++s.out.pf_solves;
  }
  const double viol = max_row_violation(s.net, s.layout, s.templates, op);
  const FeasReport rep = check_feasibility(s.net, s.layout, op, s.opts.feas_tol);
  if (viol > s.opts.feas_tol || !rep.feasible) return false;

  const double cost = evaluate_cost(s.net, s.layout, op, s.cost);
  std::lock_guard<std::mutex> lk(s.mu);
  if (cost < s.z_star) {
    s.z_star = cost;
    s.w_star = w;
    s.op_star = op;
  }
  return true;
}

// Fix the integer slots at the rounded assignment and re-optimize the
// continuous slots over the full box. Ties round away from zero.
void polish_assignment(Solver& s, const Vec& w_from) {
  std::vector<long long> key = int_key(s, w_from);
  {
    std::lock_guard<std::mutex> lk(s.mu);
    if (!s.tried.insert(key).second) return;
  }
  Vec lo = s.root_lo, hi = s.root_hi;
  for (int i = 0, k = 0; i < s.layout.size(); ++i)
    if (s.is_int[i]) lo[i] = hi[i] = static_cast<double>(key[k++]);

  const std::vector<int> keep = filter_rows(s.anchor_rows, s.anchor_w, lo, hi);
  NodeNlp nlp(s.net, s.loads, s.layout, s.cost, subset(s.templates, keep), lo,
              hi);
  NodeNlpResult res;
  try {
    res = nlp.solve(w_from, s.opts.nlp);
  } catch (const NumericError&) {
    std::lock_guard<std::mutex> lk(s.mu);
    s.out.pf_solves += nlp.pf_solves();
    return;
  }
  {
    std::lock_guard<std::mutex> lk(s.mu);
    ++s.out.tra_calls;
    s.out.pf_solves += nlp.pf_solves();
  }
  if (res.status != tra::NlpStatus::Infeasible &&
      res.max_violation <= s.opts.feas_tol)
    try_incumbent(s, res.w);
}

void record_node(Solver& s, const BcNode& node, double parent_bound,
                 const std::string& action, double lp_bound, double nlp_bound,
                 int nlp_iters, int branch_var, double branch_value) {
  std::lock_guard<std::mutex> lk(s.mu);
  if (action == "pruned_bound")
    ++s.out.pruned_bound;
  else if (action == "pruned_infeasible")
    ++s.out.pruned_infeasible;
  else if (action == "branched")
    ++s.out.branched;
  else if (action == "abandoned")
    ++s.out.abandoned;
  else
    ++s.out.integer_feasible;
  if (!s.opts.record_nodes) return;
  NodeRecord rec;
  rec.id = node.id;
  rec.parent = node.parent;
  rec.depth = node.depth;
  rec.parent_bound = parent_bound;
  rec.lp_bound = lp_bound;
  rec.nlp_bound = nlp_bound;
  rec.action = action;
  rec.branch_var = branch_var;
  rec.branch_value = branch_value;
  rec.nlp_iterations = nlp_iters;
  rec.incumbent_after = s.z_star;
  s.out.records.push_back(std::move(rec));
}

void process_node(Solver& s, BcNode node) {
  const double parent_bound = node.bound;
  bool pruned_inherited;
  {
    std::lock_guard<std::mutex> lk(s.mu);
    pruned_inherited = node.bound >= s.prune_level();
  }
  if (pruned_inherited) {
    record_node(s, node, parent_bound, "pruned_bound", kNaN, kNaN, 0, -1, 0);
    return;
  }

  double lp_bound = kNaN;
  Vec lp_seed;
  bool have_lp_seed = false;
  std::vector<int> keep = filter_rows(s.anchor_rows, s.anchor_w, node.lo,
                                      node.hi);

  if (s.opts.use_gate) {
    std::vector<ConstraintRow> rows_f = subset(s.anchor_rows, keep);
    GateLp gate = build_gate_lp(s.obj0, rows_f, s.anchor_w, node.lo, node.hi);
    const Vec h = box_halfwidths(s.anchor_w, node.lo, node.hi);
    for (int j = 0; j < gate.num_rows; ++j)
      gate.lp.rhs[j] += rows_f[j].margin(h);  // relax: keep every reachable point

    const int m0 = gate.num_rows;
    const int nc = static_cast<int>(node.cuts.size());
    if (nc) {
      Mat a(m0 + nc, s.layout.size());
      Vec rhs(m0 + nc);
      a.topRows(m0) = gate.lp.a;
      rhs.head(m0) = gate.lp.rhs;
      for (int k = 0; k < nc; ++k) {
        a.row(m0 + k) = node.cuts[k].a.transpose();
        rhs[m0 + k] = node.cuts[k].b;
      }
      gate.lp.a = std::move(a);
      gate.lp.rhs = std::move(rhs);
      gate.lp.rel.assign(m0 + nc, LpProblem::Rel::Le);
    }

    LpSolution lp = solve_lp(gate.lp);
    {
      std::lock_guard<std::mutex> lk(s.mu);
      ++s.out.lp_solves;
    }
    if (lp.status == LpStatus::Infeasible) {
      record_node(s, node, parent_bound, "pruned_infeasible", kNaN, kNaN,
                  0, -1, 0);
      return;
    }
    if (lp.status == LpStatus::Optimal) {
      lp_bound = gate.obj_offset + lp.objective -
                 objective_box_margin(s.obj0.hess, h);
      node.bound = std::max(node.bound, lp_bound);
      bool prune;
      {
        std::lock_guard<std::mutex> lk(s.mu);
        prune = lp_bound >= s.prune_level();
      }
      if (prune) {
        record_node(s, node, parent_bound, "pruned_bound", lp_bound, kNaN, 0,
                    -1, 0);
        return;
      }
      lp_seed = s.anchor_w + lp.x;
      have_lp_seed = true;
      if (s.cuts_enabled) add_cuts(s, &node, gate, lp.x);
    }
  }

  // Nonlinear sub-problem over the node box, warm-started from the gate
  // vertex when one exists, else the inherited seed, else the anchor.
  NodeNlp nlp(s.net, s.loads, s.layout, s.cost, subset(s.templates, keep),
              node.lo, node.hi);
  std::vector<Vec> seeds;
  if (have_lp_seed) seeds.push_back(lp_seed);
  seeds.push_back(node.seed);
  seeds.push_back(s.layout.clamp(s.anchor_w));

  // Only a converged solve is worth stopping at. An Infeasible exit is a
  // restoration stall, not a certificate, and an iteration-capped run says
  // more about the seed than the box, so every remaining seed gets a try
  // and the best-ranked outcome wins.
  const auto rank = [](const NodeNlpResult& r) {
    switch (r.status) {
      case tra::NlpStatus::Optimal:
        return 2;
      case tra::NlpStatus::IterationLimit:
        return 1;
      default:
        return 0;
    }
  };
  NodeNlpResult res;
  bool solved = false;
  for (const Vec& seed : seeds) {
    NodeNlpResult cand;
    try {
      cand = nlp.solve(seed, s.opts.nlp);
    } catch (const NumericError&) {
      continue;
    }
    {
      std::lock_guard<std::mutex> lk(s.mu);
      ++s.out.tra_calls;
    }
    if (!solved || rank(cand) > rank(res)) res = cand;
    solved = true;
    if (res.status == tra::NlpStatus::Optimal) break;
  }
  {
    std::lock_guard<std::mutex> lk(s.mu);
    s.out.pf_solves += nlp.pf_solves();
  }
  if (!solved || res.status == tra::NlpStatus::Infeasible) {
    record_node(s, node, parent_bound, "pruned_infeasible", lp_bound, kNaN,
                solved ? res.iterations : 0, -1, 0);
    return;
  }

  // Dropped rows are re-audited at the solution; a violation there means the
  // interval certificate was too optimistic, so redo the node with all rows.
  if (res.status == tra::NlpStatus::Optimal &&
      keep.size() < s.templates.size()) {
    const double full_viol =
        max_row_violation(s.net, s.layout, s.templates, res.op);
    if (full_viol > s.opts.feas_tol) {
      NodeNlp full(s.net, s.loads, s.layout, s.cost, s.templates, node.lo,
                   node.hi);
      try {
        res = full.solve(res.w, s.opts.nlp);
        std::lock_guard<std::mutex> lk(s.mu);
        ++s.out.tra_calls;
        s.out.pf_solves += full.pf_solves();
      } catch (const NumericError&) {
        std::lock_guard<std::mutex> lk(s.mu);
        s.out.pf_solves += full.pf_solves();
        record_node(s, node, parent_bound, "pruned_infeasible", lp_bound, kNaN,
                    0, -1, 0);
        return;
      }
      if (res.status == tra::NlpStatus::Infeasible) {
        record_node(s, node, parent_bound, "pruned_infeasible", lp_bound, kNaN,
                    res.iterations, -1, 0);
        return;
      }
    }
  }

  double nlp_bound = kNaN;
  if (res.status == tra::NlpStatus::Optimal) {
    nlp_bound = res.cost;
    node.bound = std::max(node.bound, nlp_bound);
    bool prune;
    {
      std::lock_guard<std::mutex> lk(s.mu);
      prune = node.bound >= s.prune_level();
    }
    if (prune) {
      record_node(s, node, parent_bound, "pruned_bound", lp_bound, nlp_bound,
                  res.iterations, -1, 0);
      return;
    }
  }

  // Branch on the most fractional integer slot; a clean relaxation optimum
  // closes the node as integer feasible.
  int branch = -1;
  double best_score = kInf;
  for (int i = 0; i < s.layout.size(); ++i) {
    if (!s.is_int[i]) continue;
    const double v = res.w[i];
    const double dist = std::abs(v - std::llround(v));
    if (dist <= kIntTol) continue;
    const double frac = v - std::floor(v);
    const double score = std::abs(frac - 0.5);
    const bool better =
        score < best_score - 1e-12 ||
        (score < best_score + 1e-12 && branch >= 0 &&
         s.col_norm[i] > s.col_norm[branch] + 1e-12);
    if (branch < 0 || better) {
      branch = i;
      best_score = score;
    }
  }

  double split = branch >= 0 ? res.w[branch] : 0.0;
  if (branch < 0) {
    if (res.status == tra::NlpStatus::Optimal) {
      // The relaxation optimum is integral: it closes the whole box.
      {
        std::lock_guard<std::mutex> lk(s.mu);
        s.tried.insert(int_key(s, res.w));
      }
      try_incumbent(s, res.w);
      record_node(s, node, parent_bound, "integer_feasible", lp_bound,
                  nlp_bound, res.iterations, -1, 0);
      return;
    }
    // A non-converged iterate that happens to sit on the lattice proves
    // nothing about the box. Use it as an incumbent candidate, then split
    // the widest integer range so the children stay easier than the parent.
    try_incumbent(s, res.w);
    for (int i = 0; i < s.layout.size(); ++i) {
      if (!s.is_int[i] || node.lo[i] >= node.hi[i]) continue;
      if (branch < 0 ||
          node.hi[i] - node.lo[i] > node.hi[branch] - node.lo[branch])
        branch = i;
    }
    if (branch < 0) {
      // Fully pinned assignment that would not converge: nothing below this
      // node can be explored, so its inherited bound must cap the reported
      // optimality gap.
      {
        std::lock_guard<std::mutex> lk(s.mu);
        s.abandoned_lb = std::min(s.abandoned_lb, node.bound);
      }
      record_node(s, node, parent_bound, "abandoned", lp_bound, nlp_bound,
                  res.iterations, -1, 0);
      return;
    }
    split = res.w[branch] < node.hi[branch] ? res.w[branch] + 0.5
                                            : res.w[branch] - 0.5;
  }

  polish_assignment(s, res.w);  // rounding heuristic, once per assignment

  // Clamping the split into the open box guarantees both children lose at
  // least one lattice value, so no box can reappear below itself. A stalled
  // iterate sitting outside the node's range would otherwise regenerate the
  // parent verbatim.
  const double v = std::min(std::max(split, node.lo[branch] + 0.5),
                            node.hi[branch] - 0.5);
  BcNode down, up;
  down.lo = node.lo;
  down.hi = node.hi;
  down.hi[branch] = std::floor(v);
  up.lo = node.lo;
  up.hi = node.hi;
  up.lo[branch] = std::ceil(v);
  for (BcNode* child : {&down, &up}) {
    child->parent = node.id;
    child->depth = node.depth + 1;
    child->bound = node.bound;
    child->cuts = node.cuts;
    child->seed = res.w;
    for (int i = 0; i < s.layout.size(); ++i)
      child->seed[i] =
          std::min(std::max(child->seed[i], child->lo[i]), child->hi[i]);
  }
  {
    std::lock_guard<std::mutex> lk(s.mu);
    down.id = s.next_id++;
    up.id = s.next_id++;
    s.queue.insert(std::move(down));
    s.queue.insert(std::move(up));
  }
  s.cv.notify_all();
  record_node(s, node, parent_bound, "branched", lp_bound, nlp_bound,
              res.iterations, branch, v);
}

void worker_loop(Solver& s) {
  std::unique_lock<std::mutex> lk(s.mu);
  for (;;) {
    s.cv.wait(lk, [&] { return !s.queue.empty() || s.busy == 0 || s.stop; });
    if (s.stop) return;
    if (s.queue.empty()) {
      if (s.busy == 0) {
        s.cv.notify_all();
        return;
      }
      continue;
    }
    if (s.out.nodes_opened >= s.opts.node_budget) {
      s.out.budget_exceeded = true;
      s.stop = true;
      s.cv.notify_all();
      return;
    }
    BcNode node = *s.queue.begin();
    s.queue.erase(s.queue.begin());
    ++s.out.nodes_opened;
    ++s.busy;
    lk.unlock();
    process_node(s, node);
    lk.lock();
    --s.busy;
    s.cv.notify_all();
  }
}

}  // namespace

MinlpResult solve_minlp(const Network& net, const LoadView& loads,
                        const ControlLayout& layout, const CostParams& cost,
                        const Vec& w_anchor, const MinlpOptions& opts) {
  Solver s(net, loads, layout, cost, opts);
  s.root_lo = opts.root_lo.size() ? opts.root_lo : layout.lower();
  s.root_hi = opts.root_hi.size() ? opts.root_hi : layout.upper();
  s.anchor_w = layout.clamp(w_anchor);
  for (int i = 0; i < layout.size(); ++i)
    s.anchor_w[i] =
        std::min(std::max(s.anchor_w[i], s.root_lo[i]), s.root_hi[i]);
  s.is_int.resize(layout.size());
  for (int i = 0; i < layout.size(); ++i)
    s.is_int[i] = layout.entries[i].is_integer;

  OperatingPoint anchor_op = solve_power_flow(net, loads, layout, s.anchor_w);
  ++s.out.pf_solves;
  const PerturbedModel model0 =
      assemble_perturbed(net, loads, layout, anchor_op);
  s.templates = row_templates(net, layout);
  s.anchor_rows = s.templates;
  fill_row_linearization(net, layout, model0, &s.anchor_rows);
  s.obj0 = objective_model(net, layout, model0, cost);
  s.col_norm = Vec::Zero(layout.size());
  for (int i = 0; i < layout.size(); ++i)
    s.col_norm[i] = model0.sens.col(i).norm();

  s.cuts_enabled = true;
  for (int i = 0; i < layout.size(); ++i)
    if (s.is_int[i] &&
        std::abs(s.anchor_w[i] - std::llround(s.anchor_w[i])) > 1e-9)
      s.cuts_enabled = false;  // offsets stop being integral, stay safe

  // Rounding heuristic at the anchor gives the tree an incumbent to prune
  // against from the first node.
  polish_assignment(s, s.anchor_w);

  BcNode root;
  root.id = s.next_id++;
  root.lo = s.root_lo;
  root.hi = s.root_hi;
  root.seed = s.anchor_w;
  s.queue.insert(std::move(root));

  const int workers = std::max(1, opts.workers);
  if (workers == 1) {
    worker_loop(s);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&s] { worker_loop(s); });
    for (auto& t : pool) t.join();
  }

  MinlpResult out = std::move(s.out);
  out.has_incumbent = std::isfinite(s.z_star);
  if (out.has_incumbent) {
    out.w = s.w_star;
    out.objective = s.z_star;
    out.op = s.op_star;
  }
  if (s.queue.empty()) {
    out.lower_bound = out.has_incumbent ? s.z_star : kInf;
  } else {
    double lb = kInf;
    for (const auto& n : s.queue) lb = std::min(lb, n.bound);
    out.lower_bound = std::min(lb, s.z_star);
  }
  out.lower_bound = std::min(out.lower_bound, s.abandoned_lb);
  return out;
}

}  // namespace dsopt
