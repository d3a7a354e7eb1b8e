#pragma once
#include <string>
#include <vector>

#include "power_flow.hpp"

namespace dsopt {

// Second-order model of the power drawn at the transformer primary as a
// function of control deviations dw. hess is symmetric; eval uses the
// standard 1/2 convention.
struct QuadraticPowerModel {
  double value = 0;
  Vec grad;
  Mat hess;

  double eval(const Vec& dw) const {
    return value + grad.dot(dw) + 0.5 * dw.dot(hess * dw);
  }
};

// First-order response of the network state around a solved operating
// point, with voltage-controlled devices folded in by row substitution
// (their reactive output becomes a dependent quantity with its own
// sensitivity row).
struct PerturbedModel {
  OperatingPoint anchor;
  Mat sens;                    // 2N x n_w, stacked [x; y] voltage response
  std::vector<Vec> q_g_sens;   // per device; empty unless voltage-controlled
  QuadraticPowerModel p_up, q_up;
};

PerturbedModel assemble_perturbed(const Network& net, const LoadView& loads,
                                  const ControlLayout& layout,
                                  const OperatingPoint& anchor);

CVec predict_voltage(const PerturbedModel& model, const Vec& dw);

// One operating constraint written as c(w) <= limit together with its
// first-order expansion at the model anchor.
struct ConstraintRow {
  enum class Kind {
    VoltageUpper,   // |V_b|^2 <= v_max^2
    VoltageLower,   // -|V_b|^2 <= -v_min^2
    LineCurrent,    // |I_l|^2 <= i_max^2
    Capacity,       // P^2 + Q^2 <= s_max^2
    AngleUpper,     // Q - tan(a) P <= 0
    AngleLower,     // -Q - tan(a) P <= 0
    ReactiveFloor,  // -Q <= -q_min
  };
  Kind kind = Kind::VoltageUpper;
  int element = -1;  // bus / line / device index
  std::string name;

  Vec grad;               // d c / d w at the anchor
  double limit = 0;       // right-hand side
  double anchor_value = 0;  // c at the anchor

  // Vectors u_k with |c(w+dw) - c_anchor - grad.dw| bounded (up to a safety
  // factor) by sum_k (|u_k| . h)^2 over a box of half-widths h.
  std::vector<Vec> curvature;

  double slack() const { return limit - anchor_value; }
  double margin(const Vec& h) const;
};

// The canonical operating-constraint set for a network: every row's kind,
// element, name, and limit, with the anchor-dependent parts left empty.
std::vector<ConstraintRow> row_templates(const Network& net,
                                         const ControlLayout& layout);

// Fill grad / anchor_value / curvature of the given rows at the model's
// anchor. Works on any subset of the canonical set.
void fill_row_linearization(const Network& net, const ControlLayout& layout,
                            const PerturbedModel& model,
                            std::vector<ConstraintRow>* rows);

std::vector<ConstraintRow> linearize_rows(const Network& net,
                                          const ControlLayout& layout,
                                          const PerturbedModel& model);

// Exact constraint value at a solved operating point.
double row_value(const Network& net, const ControlLayout& layout,
                 const ConstraintRow& row, const OperatingPoint& op);

// Objective model at the anchor: exact value plus the gradient and Hessian
// induced by the upstream power response.
struct ObjectiveModel {
  double value = 0;
  Vec grad;
  Mat hess;
};

ObjectiveModel objective_model(const Network& net, const ControlLayout& layout,
                               const PerturbedModel& model,
                               const CostParams& cost);

}  // namespace dsopt
