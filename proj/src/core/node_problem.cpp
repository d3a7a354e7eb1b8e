#include "node_problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsopt {
namespace {

constexpr double kPinned = 1e-12;  // box width below which a control is fixed

}  // namespace

std::vector<int> filter_rows(const std::vector<ConstraintRow>& rows,
                             const Vec& anchor_w, const Vec& w_lo,
                             const Vec& w_hi) {
  const int nw = static_cast<int>(anchor_w.size());
  Vec h(nw);
  for (int i = 0; i < nw; ++i)
    h[i] = std::max(std::abs(w_lo[i] - anchor_w[i]),
                    std::abs(w_hi[i] - anchor_w[i]));

  std::vector<int> keep;
  keep.reserve(rows.size());
  for (size_t j = 0; j < rows.size(); ++j) {
    const ConstraintRow& row = rows[j];
    double ub = row.anchor_value;
    for (int i = 0; i < nw; ++i)
      ub += std::max(row.grad[i] * (w_lo[i] - anchor_w[i]),
                     row.grad[i] * (w_hi[i] - anchor_w[i]));
    ub += row.margin(h);
    if (ub >= row.limit - 1e-9) keep.push_back(static_cast<int>(j));
  }
  return keep;
}

double max_row_violation(const Network& net, const ControlLayout& layout,
                         const std::vector<ConstraintRow>& rows,
                         const OperatingPoint& op) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& row : rows)
    worst = std::max(worst, row_value(net, layout, row, op) - row.limit);
  return worst;
}

NodeNlp::NodeNlp(const Network& net, const LoadView& loads,
                 const ControlLayout& layout, const CostParams& cost,
                 std::vector<ConstraintRow> rows, Vec w_lo, Vec w_hi)
    : net_(net),
      loads_(loads),
      layout_(layout),
      cost_(cost),
      rows_(std::move(rows)),
      w_lo_(std::move(w_lo)),
      w_hi_(std::move(w_hi)) {
  const int nw = layout_.size();
  w_fixed_ = w_lo_;
  for (int i = 0; i < nw; ++i)
    if (w_hi_[i] - w_lo_[i] > kPinned) active_.push_back(i);
  curv_ = Mat::Identity(static_cast<int>(active_.size()),
                        static_cast<int>(active_.size()));
}

int NodeNlp::num_vars() const {
  return static_cast<int>(active_.size() + rows_.size());
}

int NodeNlp::num_constraints() const { return static_cast<int>(rows_.size()); }

Vec NodeNlp::lower() const {
  Vec lo = Vec::Zero(num_vars());
  for (size_t k = 0; k < active_.size(); ++k) lo[k] = w_lo_[active_[k]];
  return lo;  // slacks start at their zero lower bound
}

Vec NodeNlp::upper() const {
  Vec hi = Vec::Constant(num_vars(), std::numeric_limits<double>::infinity());
  for (size_t k = 0; k < active_.size(); ++k) hi[k] = w_hi_[active_[k]];
  return hi;
}

Vec NodeNlp::trust_weights() const {
  // Box-relative scaling: a radius of 1 spans the whole node box in every
  // movable direction, so one radius unit means the same fraction of the
  // available range for a tap position as for a device set-point. Slacks
  // are excluded from the ball.
  Vec out = Vec::Zero(num_vars());
  for (size_t k = 0; k < active_.size(); ++k)
    out[k] = 1.0 / (w_hi_[active_[k]] - w_lo_[active_[k]]);
  return out;
}

Vec NodeNlp::full_w(const Vec& x) const {
  Vec w = w_fixed_;
  for (size_t k = 0; k < active_.size(); ++k) w[active_[k]] = x[k];
  return w;
}

const OperatingPoint& NodeNlp::op_at(const Vec& w) {
  if (cache_valid_ && cache_w_.size() == w.size() && cache_w_ == w)
    return cache_op_;
  cache_op_ = solve_power_flow(net_, loads_, layout_, w);
  cache_w_ = w;
  cache_valid_ = true;
  ++pf_solves_;
  return cache_op_;
}

void NodeNlp::eval(const Vec& x, double* f, Vec* g) {
  const int na = static_cast<int>(active_.size());
  const OperatingPoint& op = op_at(full_w(x));
  *f = evaluate_cost(net_, layout_, op, cost_);
  g->resize(rows_.size());
  for (size_t j = 0; j < rows_.size(); ++j)
    (*g)[j] = row_value(net_, layout_, rows_[j], op) + x[na + j] -
              rows_[j].limit;
}

tra::Linearization NodeNlp::linearize(const Vec& x) {
  const int na = static_cast<int>(active_.size());
  const int m = static_cast<int>(rows_.size());
  const int nv = num_vars();
  const OperatingPoint& op = op_at(full_w(x));

  const PerturbedModel model = assemble_perturbed(net_, loads_, layout_, op);
  fill_row_linearization(net_, layout_, model, &rows_);
  const ObjectiveModel obj = objective_model(net_, layout_, model, cost_);

  tra::Linearization lin;
  lin.f = obj.value;
  lin.grad = Vec::Zero(nv);
  for (int k = 0; k < na; ++k) lin.grad[k] = obj.grad[active_[k]];

  // Damped BFGS over the movable block, fed by the exact re-anchored
  // gradients. Shanno-scale once real curvature shows up; Powell damping
  // keeps the estimate positive definite when the raw pair would not.
  const Vec xh = x.head(na);
  const Vec gh = lin.grad.head(na);
  if (have_prev_) {
    const Vec s = xh - prev_x_;
    const Vec y = gh - prev_grad_;
    const double ss = s.squaredNorm();
    if (ss > 1e-24) {
      const double sy_raw = s.dot(y);
      if (!curv_scaled_ && sy_raw > 1e-16) {
        curv_ = (sy_raw / ss) * Mat::Identity(na, na);
        curv_scaled_ = true;
      }
      const Vec bs = curv_ * s;
      const double sbs = s.dot(bs);
      double sy = sy_raw;
      Vec yd = y;
      if (sy < 0.2 * sbs) {
        const double theta = 0.8 * sbs / (sbs - sy);
        yd = theta * y + (1.0 - theta) * bs;
        sy = s.dot(yd);
      }
      if (sy > 1e-14 && sbs > 1e-14)
        curv_ += (yd * yd.transpose()) / sy - (bs * bs.transpose()) / sbs;
    }
  }
  prev_x_ = xh;
  prev_grad_ = gh;
  have_prev_ = true;

  lin.hess = Mat::Zero(nv, nv);
  lin.hess.topLeftCorner(na, na) = curv_;
  lin.g.resize(m);
  lin.jac = Mat::Zero(m, nv);
  for (int j = 0; j < m; ++j) {
    lin.g[j] = rows_[j].anchor_value + x[na + j] - rows_[j].limit;
    for (int k = 0; k < na; ++k) lin.jac(j, k) = rows_[j].grad[active_[k]];
    lin.jac(j, na + j) = 1.0;
  }
  lin.num_slack = m;
  return lin;
}

NodeNlpResult NodeNlp::solve(const Vec& w_start, const tra::Options& opts) {
  const int na = static_cast<int>(active_.size());
  const int m = static_cast<int>(rows_.size());
  curv_ = Mat::Identity(na, na);
  curv_scaled_ = false;
  have_prev_ = false;
  Vec w = w_start;
  for (int i = 0; i < layout_.size(); ++i)
    w[i] = std::min(std::max(w[i], w_lo_[i]), w_hi_[i]);

  NodeNlpResult res;
  if (na == 0) {
    // Everything pinned: a single power flow settles the node.
    const OperatingPoint& op = op_at(w_fixed_);
    res.w = w_fixed_;
    res.op = op;
    res.cost = evaluate_cost(net_, layout_, op, cost_);
    res.max_violation = m ? max_row_violation(net_, layout_, rows_, op)
                          : -std::numeric_limits<double>::infinity();
    res.status = res.max_violation <= 10 * opts.tol_feasibility
                     ? tra::NlpStatus::Optimal
                     : tra::NlpStatus::Infeasible;
    res.evals = 1;
    return res;
  }

  const OperatingPoint& op0 = op_at(w);
  Vec x0(num_vars());
  for (int k = 0; k < na; ++k) x0[k] = w[active_[k]];
  for (int j = 0; j < m; ++j)
    x0[na + j] = std::max(
        0.0, rows_[j].limit - row_value(net_, layout_, rows_[j], op0));

  tra::Solution sol = tra::solve_nlp(*this, x0, opts);

  res.status = sol.status;
  res.w = full_w(sol.x);
  res.op = op_at(res.w);
  res.cost = evaluate_cost(net_, layout_, res.op, cost_);
  res.kkt_residual = sol.kkt_residual;
  res.max_violation = m ? max_row_violation(net_, layout_, rows_, res.op)
                        : -std::numeric_limits<double>::infinity();
  res.iterations = sol.iterations;
  res.evals = sol.evals;
  res.trace = std::move(sol.trace);
  return res;
}

GateLp build_gate_lp(const ObjectiveModel& obj,
                     const std::vector<ConstraintRow>& rows,
                     const Vec& anchor_w, const Vec& w_lo, const Vec& w_hi) {
  const int nw = static_cast<int>(anchor_w.size());
  const int m = static_cast<int>(rows.size());
  GateLp gate;
  gate.obj_offset = obj.value;
  gate.anchor_w = anchor_w;
  gate.num_rows = m;
  gate.lp.c = obj.grad;
  gate.lp.lo = w_lo - anchor_w;
  gate.lp.hi = w_hi - anchor_w;
  gate.lp.a = Mat::Zero(m, nw);
  gate.lp.rhs = Vec::Zero(m);
  gate.lp.rel.assign(m, LpProblem::Rel::Le);
  for (int j = 0; j < m; ++j) {
    gate.lp.a.row(j) = rows[j].grad.transpose();
    gate.lp.rhs[j] = rows[j].limit - rows[j].anchor_value;
  }
  return gate;
}

}  // namespace dsopt
