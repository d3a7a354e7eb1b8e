#include "perturbed.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace dsopt {
namespace {

// Safety factor on the interval curvature certificates. The quadratic part
// of each row is known exactly through the sensitivity rows; the factor
// absorbs the higher-order voltage response that the certificate ignores.
constexpr double kCurvatureSafety = 4.0;
constexpr double kCurvatureFloor = 1e-12;

}  // namespace

double ConstraintRow::margin(const Vec& h) const {
  double m = 0;
  for (const auto& u : curvature) {
    const double s = u.cwiseAbs().dot(h);
    m += s * s;
  }
  return kCurvatureSafety * m + kCurvatureFloor;
}

PerturbedModel assemble_perturbed(const Network& net, const LoadView& loads,
                                  const ControlLayout& layout,
                                  const OperatingPoint& anchor) {
  const int n = static_cast<int>(net.buses.size());
  const int nw = layout.size();
  PerturbedModel model;
  model.anchor = anchor;
  model.q_g_sens.resize(net.devices.size());

  const Vec taps = layout.tap_values(anchor.w);
  const Mat y_stack = stack_real(bus_admittance(net, taps));
  const DeviceBlocks blk = stamp_device_blocks(
      net, loads, layout, anchor.w, anchor.v, anchor.q_g_vc, false);

  Mat m = y_stack - blk.a;
  Mat b = blk.b;

  // Voltage-controlled devices: swap their bus equations for an active-power
  // balance (reactive output drops out) and a voltage-magnitude row, keeping
  // the coefficient matrix square and nonsingular.
  struct VcRows {
    int dev, bus;
    Vec m_x, m_y, b_x, b_y;  // original rows, kept for the Q recovery
    Cx i_dev;
  };
  std::vector<VcRows> vc;
  for (size_t d = 0; d < net.devices.size(); ++d) {
    const auto& dev = net.devices[d];
    if (dev.mode != DeviceMode::VoltageControl) continue;
    const int bus = dev.bus;
    VcRows rows;
    rows.dev = static_cast<int>(d);
    rows.bus = bus;
    rows.m_x = m.row(bus);
    rows.m_y = m.row(n + bus);
    rows.b_x = b.row(bus);
    rows.b_y = b.row(n + bus);
    const double p = anchor.device_p(net, layout, rows.dev);
    const double q = anchor.device_q(net, layout, rows.dev);
    rows.i_dev = std::conj(Cx(p, q) / anchor.v[bus]);
    vc.push_back(rows);

    const Cx vh = anchor.v[bus];
    const double vm = std::abs(vh);

    Vec row1 = vh.real() * rows.m_x + vh.imag() * rows.m_y;
    row1[bus] += rows.i_dev.real();
    row1[n + bus] += rows.i_dev.imag();
    Vec rhs1 = vh.real() * rows.b_x + vh.imag() * rows.b_y;
    const int pp = layout.device_pos(rows.dev, ControlEntry::Kind::P);
    if (pp >= 0) rhs1[pp] += 1.0;
    m.row(bus) = row1.transpose();
    b.row(bus) = rhs1.transpose();

    // Magnitude row normalized by |V| so its scale matches the others and
    // the set-point enters as a plain unit column.
    Vec row2 = Vec::Zero(2 * n);
    row2[bus] = vh.real() / vm;
    row2[n + bus] = vh.imag() / vm;
    Vec rhs2 = Vec::Zero(nw);
    rhs2[layout.device_pos(rows.dev, ControlEntry::Kind::Vset)] = 1.0;
    m.row(n + bus) = row2.transpose();
    b.row(n + bus) = rhs2.transpose();
  }

  Eigen::PartialPivLU<Mat> lu(m);
  model.sens = lu.solve(b);
  if (!model.sens.allFinite())
    throw NumericError("perturbed network matrix is singular");

  // Reactive output of each voltage-controlled device, recovered from the
  // balance combination that the substitution dropped.
  for (const auto& rows : vc) {
    const Cx vh = anchor.v[rows.bus];
    const Vec di_x = (rows.m_x.transpose() * model.sens).transpose() - rows.b_x;
    const Vec di_y = (rows.m_y.transpose() * model.sens).transpose() - rows.b_y;
    Vec qrow = rows.i_dev.real() * Vec(model.sens.row(n + rows.bus)) -
               rows.i_dev.imag() * Vec(model.sens.row(rows.bus));
    qrow += vh.imag() * di_x - vh.real() * di_y;
    model.q_g_sens[rows.dev] = qrow;
  }

  // Upstream power response through the transformer bank, exact to second
  // order in dw (the voltage response enters linearly, the port power is a
  // product of two affine quantities).
  const int head = net.head();
  CVec sv(nw), si(nw);
  for (int j = 0; j < nw; ++j)
    sv[j] = Cx(model.sens(head, j), model.sens(n + head, j));

  const auto maps = upstream_injection_maps(net, taps);
  const Cx v_s = anchor.v[head];
  const Cx i_s = maps.c * v_s + maps.d * net.upstream.v_source;
  for (int j = 0; j < nw; ++j) si[j] = maps.c * sv[j];
  for (size_t t = 0; t < net.transformers.size(); ++t) {
    const int tp = layout.tap_pos(static_cast<int>(t));
    si[tp] += maps.dc_dtap[t] * v_s + maps.dd_dtap[t] * net.upstream.v_source;
  }

  const Transmission tm = transmission_matrix(net.transformers, taps, net.zp_law);
  CVec pv(nw), pi(nw);
  for (int j = 0; j < nw; ++j) {
    pv[j] = tm.t(0, 0) * sv[j] + tm.t(0, 1) * si[j];
    pi[j] = tm.t(1, 0) * sv[j] + tm.t(1, 1) * si[j];
  }
  for (size_t t = 0; t < net.transformers.size(); ++t) {
    const int tp = layout.tap_pos(static_cast<int>(t));
    pv[tp] += tm.dt_dtap[t](0, 0) * v_s + tm.dt_dtap[t](0, 1) * i_s;
    pi[tp] += tm.dt_dtap[t](1, 0) * v_s + tm.dt_dtap[t](1, 1) * i_s;
  }

  const Cx v_p = anchor.v_primary;
  const Cx i_p = anchor.i_primary;
  model.p_up.value = anchor.p_upstream;
  model.q_up.value = anchor.q_upstream;
  model.p_up.grad.resize(nw);
  model.q_up.grad.resize(nw);
  for (int j = 0; j < nw; ++j) {
    const Cx lin = v_p * std::conj(pi[j]) + std::conj(i_p) * pv[j];
    model.p_up.grad[j] = lin.real();
    model.q_up.grad[j] = lin.imag();
  }
  Mat mp(nw, nw), mq(nw, nw);
  for (int j = 0; j < nw; ++j)
    for (int k = 0; k < nw; ++k) {
      const Cx quad = pv[j] * std::conj(pi[k]);
      mp(j, k) = quad.real();
      mq(j, k) = quad.imag();
    }
  model.p_up.hess = mp + mp.transpose();
  model.q_up.hess = mq + mq.transpose();
  return model;
}

CVec predict_voltage(const PerturbedModel& model, const Vec& dw) {
  const int n = static_cast<int>(model.anchor.v.size());
  const Vec dv = model.sens * dw;
  CVec v(n);
  for (int i = 0; i < n; ++i)
    v[i] = model.anchor.v[i] + Cx(dv[i], dv[n + i]);
  return v;
}

std::vector<ConstraintRow> row_templates(const Network& net,
                                         const ControlLayout& layout) {
  const int n = static_cast<int>(net.buses.size());
  std::vector<ConstraintRow> rows;

  for (int bus = 0; bus < n; ++bus) {
    ConstraintRow up;
    up.kind = ConstraintRow::Kind::VoltageUpper;
    up.element = bus;
    up.name = "v_max@" + net.buses[bus].name;
    up.limit = net.v_max * net.v_max;
    rows.push_back(up);

    ConstraintRow lo = up;
    lo.kind = ConstraintRow::Kind::VoltageLower;
    lo.name = "v_min@" + net.buses[bus].name;
    lo.limit = -net.v_min * net.v_min;
    rows.push_back(lo);
  }

  for (size_t l = 0; l < net.lines.size(); ++l) {
    const auto& ln = net.lines[l];
    if (ln.i_max <= 0) continue;
    ConstraintRow row;
    row.kind = ConstraintRow::Kind::LineCurrent;
    row.element = static_cast<int>(l);
    row.name = "ampacity@" + net.buses[ln.from].name + "-" +
               net.buses[ln.to].name;
    row.limit = ln.i_max * ln.i_max;
    rows.push_back(row);
  }

  for (size_t d = 0; d < net.devices.size(); ++d) {
    const auto& dev = net.devices[d];
    const int di = static_cast<int>(d);
    const bool vc = dev.mode == DeviceMode::VoltageControl;

    // Power-mode devices with fixed active output have pure box limits,
    // captured in the layout bounds. Rows are needed when two quantities
    // couple (dispatchable P) or when Q is a dependent state (vc mode).
    if (!vc && dev.kind != DeviceKind::Der) continue;

    ConstraintRow cap;
    cap.kind = ConstraintRow::Kind::Capacity;
    cap.element = di;
    cap.name = "capacity@" + dev.id;
    cap.limit = dev.s_max * dev.s_max;
    rows.push_back(cap);

    if (dev.has_angle_limit()) {
      ConstraintRow au;
      au.kind = ConstraintRow::Kind::AngleUpper;
      au.element = di;
      au.name = "angle+@" + dev.id;
      au.limit = 0;
      rows.push_back(au);

      ConstraintRow al = au;
      al.kind = ConstraintRow::Kind::AngleLower;
      al.name = "angle-@" + dev.id;
      rows.push_back(al);
    }

    if (vc && dev.kind == DeviceKind::Wind) {
      ConstraintRow fl;
      fl.kind = ConstraintRow::Kind::ReactiveFloor;
      fl.element = di;
      fl.name = "q_floor@" + dev.id;
      fl.limit = -dev.q_min;
      rows.push_back(fl);
    }
  }
  (void)layout;
  return rows;
}

void fill_row_linearization(const Network& net, const ControlLayout& layout,
                            const PerturbedModel& model,
                            std::vector<ConstraintRow>* rows) {
  const int n = static_cast<int>(net.buses.size());
  const int nw = layout.size();
  const OperatingPoint& op = model.anchor;

  for (ConstraintRow& row : *rows) {
    switch (row.kind) {
      case ConstraintRow::Kind::VoltageUpper:
      case ConstraintRow::Kind::VoltageLower: {
        const int bus = row.element;
        const Cx vh = op.v[bus];
        const Vec sx = model.sens.row(bus);
        const Vec sy = model.sens.row(n + bus);
        const Vec a = 2.0 * (vh.real() * sx + vh.imag() * sy);
        const bool upper = row.kind == ConstraintRow::Kind::VoltageUpper;
        row.grad = upper ? a : Vec(-a);
        row.anchor_value = upper ? std::norm(vh) : -std::norm(vh);
        row.curvature = {sx, sy};
        break;
      }
      case ConstraintRow::Kind::LineCurrent: {
        const auto& ln = net.lines[row.element];
        const Cx y = 1.0 / ln.z();
        const Vec dx = model.sens.row(ln.from) - model.sens.row(ln.to);
        const Vec dy =
            model.sens.row(n + ln.from) - model.sens.row(n + ln.to);
        const Vec cix = y.real() * dx - y.imag() * dy;
        const Vec ciy = y.imag() * dx + y.real() * dy;
        const Cx ih = op.i_line[row.element];
        row.grad = 2.0 * (ih.real() * cix + ih.imag() * ciy);
        row.anchor_value = std::norm(ih);
        row.curvature = {cix, ciy};
        break;
      }
      case ConstraintRow::Kind::Capacity:
      case ConstraintRow::Kind::AngleUpper:
      case ConstraintRow::Kind::AngleLower:
      case ConstraintRow::Kind::ReactiveFloor: {
        const int di = row.element;
        const auto& dev = net.devices[di];
        const bool vc = dev.mode == DeviceMode::VoltageControl;
        const int pp = layout.device_pos(di, ControlEntry::Kind::P);
        const int qp = layout.device_pos(di, ControlEntry::Kind::Q);
        const double p = op.device_p(net, layout, di);
        const double q = op.device_q(net, layout, di);
        Vec p_row = Vec::Zero(nw);
        if (pp >= 0) p_row[pp] = 1.0;
        Vec q_row;
        if (vc)
          q_row = model.q_g_sens[di];
        else {
          q_row = Vec::Zero(nw);
          q_row[qp] = 1.0;
        }
        const double t = dev.has_angle_limit()
                             ? std::tan(dev.power_angle_deg * kPi / 180.0)
                             : 0.0;
        switch (row.kind) {
          case ConstraintRow::Kind::Capacity:
            row.grad = 2.0 * p * p_row + 2.0 * q * q_row;
            row.anchor_value = p * p + q * q;
            row.curvature = {p_row, q_row};
            break;
          case ConstraintRow::Kind::AngleUpper:
            row.grad = q_row - t * p_row;
            row.anchor_value = q - t * p;
            row.curvature.clear();
            if (vc) row.curvature = {q_row};
            break;
          case ConstraintRow::Kind::AngleLower:
            row.grad = -q_row - t * p_row;
            row.anchor_value = -q - t * p;
            row.curvature.clear();
            if (vc) row.curvature = {q_row};
            break;
          default:  // ReactiveFloor
            row.grad = -q_row;
            row.anchor_value = -q;
            row.curvature = {q_row};
            break;
        }
        break;
      }
    }
  }
}

std::vector<ConstraintRow> linearize_rows(const Network& net,
                                          const ControlLayout& layout,
                                          const PerturbedModel& model) {
  std::vector<ConstraintRow> rows = row_templates(net, layout);
  fill_row_linearization(net, layout, model, &rows);
  return rows;
}

double row_value(const Network& net, const ControlLayout& layout,
                 const ConstraintRow& row, const OperatingPoint& op) {
  switch (row.kind) {
    case ConstraintRow::Kind::VoltageUpper:
      return std::norm(op.v[row.element]);
    case ConstraintRow::Kind::VoltageLower:
      return -std::norm(op.v[row.element]);
    case ConstraintRow::Kind::LineCurrent:
      return std::norm(op.i_line[row.element]);
    case ConstraintRow::Kind::Capacity: {
      const double p = op.device_p(net, layout, row.element);
      const double q = op.device_q(net, layout, row.element);
      return p * p + q * q;
    }
    case ConstraintRow::Kind::AngleUpper: {
      const double t =
          std::tan(net.devices[row.element].power_angle_deg * kPi / 180.0);
      return op.device_q(net, layout, row.element) -
             t * op.device_p(net, layout, row.element);
    }
    case ConstraintRow::Kind::AngleLower: {
      const double t =
          std::tan(net.devices[row.element].power_angle_deg * kPi / 180.0);
      return -op.device_q(net, layout, row.element) -
             t * op.device_p(net, layout, row.element);
    }
    case ConstraintRow::Kind::ReactiveFloor:
      return -op.device_q(net, layout, row.element);
  }
  throw NumericError("unknown constraint kind");
}

ObjectiveModel objective_model(const Network& net, const ControlLayout& layout,
                               const PerturbedModel& model,
                               const CostParams& cost) {
  const double scale = net.s_base_mva * cost.tau_hours;
  ObjectiveModel obj;
  obj.value = evaluate_cost(net, layout, model.anchor, cost);
  obj.grad = scale * (cost.price_active * model.p_up.grad +
                      cost.price_reactive * model.q_up.grad);
  obj.hess = scale * (cost.price_active * model.p_up.hess +
                      cost.price_reactive * model.q_up.hess);
  for (size_t d = 0; d < net.devices.size(); ++d) {
    if (net.devices[d].price == 0) continue;
    const int pp =
        layout.device_pos(static_cast<int>(d), ControlEntry::Kind::P);
    if (pp >= 0) obj.grad[pp] += scale * net.devices[d].price;
    // Fixed-output devices price a constant into the value, not the model.
  }
  return obj;
}

}  // namespace dsopt
