#include "power_flow.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace dsopt {
namespace {

constexpr double kVoltageFloor = 1e-6;

Eigen::Matrix2d vm_inverse(Cx v) {
  const double n2 = std::norm(v);
  if (n2 < kVoltageFloor * kVoltageFloor)
    throw NumericError("voltage magnitude collapsed during a solve");
  Eigen::Matrix2d inv;
  inv << v.real() / n2, v.imag() / n2, v.imag() / n2, -v.real() / n2;
  return inv;
}

// Power-mode set-point of a device; vc devices report their anchor output.
void device_output(const Network& net, const ControlLayout& lay, const Vec& w,
                   const Vec& q_g_vc, int dev, double* p, double* q) {
  const auto& d = net.devices[dev];
  switch (d.kind) {
    case DeviceKind::Der:
      *p = w[lay.device_pos(dev, ControlEntry::Kind::P)];
      break;
    case DeviceKind::Svr:
      *p = 0;
      break;
    case DeviceKind::Pv:
    case DeviceKind::Wind:
      *p = d.p_available;
      break;
  }
  if (d.mode == DeviceMode::VoltageControl) {
    *q = q_g_vc[dev];
  } else {
    *q = w[lay.device_pos(dev, ControlEntry::Kind::Q)];
  }
}

}  // namespace

LoadView LoadView::from(const Network& net) {
  const int n = static_cast<int>(net.buses.size());
  LoadView lv;
  lv.p0.resize(n);
  lv.q0.resize(n);
  lv.v0.resize(n);
  for (int i = 0; i < n; ++i) {
    lv.p0[i] = net.buses[i].p_load;
    lv.q0[i] = net.buses[i].q_load;
    lv.v0[i] = net.buses[i].v0;
  }
  lv.zp_p = zp_share(net.zip_p);
  lv.zp_q = zp_share(net.zip_q);
  return lv;
}

double LoadView::active(int bus, double vmag) const {
  return zp_load_power(p0[bus], zp_p, vmag / v0[bus]);
}

double LoadView::reactive(int bus, double vmag) const {
  return zp_load_power(q0[bus], zp_q, vmag / v0[bus]);
}

ControlLayout ControlLayout::build(const Network& net) {
  ControlLayout lay;
  for (size_t t = 0; t < net.transformers.size(); ++t) {
    const auto& u = net.transformers[t];
    lay.entries.push_back({ControlEntry::Kind::Tap, static_cast<int>(t),
                           "tap." + u.id, double(u.tap_min), double(u.tap_max),
                           true, u.tap_step});
  }
  for (size_t c = 0; c < net.caps.size(); ++c) {
    const auto& cb = net.caps[c];
    lay.entries.push_back({ControlEntry::Kind::CbStep, static_cast<int>(c),
                           "st." + cb.id, double(cb.step_min),
                           double(cb.step_max), true, cb.y_step});
  }
  lay.n_integer = static_cast<int>(lay.entries.size());

  for (size_t d = 0; d < net.devices.size(); ++d) {
    const auto& dev = net.devices[d];
    const int di = static_cast<int>(d);
    const double s = dev.s_max;
    if (dev.mode == DeviceMode::VoltageControl) {
      if (dev.kind == DeviceKind::Der)
        lay.entries.push_back(
            {ControlEntry::Kind::P, di, "p_g." + dev.id, 0, s, false, 1.0});
      lay.entries.push_back({ControlEntry::Kind::Vset, di, "v_set." + dev.id,
                             net.v_min, net.v_max, false, 1.0});
      continue;
    }
    switch (dev.kind) {
      case DeviceKind::Der:
        lay.entries.push_back(
            {ControlEntry::Kind::P, di, "p_g." + dev.id, 0, s, false, 1.0});
        lay.entries.push_back(
            {ControlEntry::Kind::Q, di, "q_g." + dev.id, -s, s, false, 1.0});
        break;
      case DeviceKind::Svr:
        lay.entries.push_back(
            {ControlEntry::Kind::Q, di, "q_g." + dev.id, -s, s, false, 1.0});
        break;
      case DeviceKind::Pv: {
        double qc = std::sqrt(
            std::max(0.0, s * s - dev.p_available * dev.p_available));
        if (dev.has_angle_limit())
          qc = std::min(qc, std::tan(dev.power_angle_deg * kPi / 180.0) *
                                dev.p_available);
        lay.entries.push_back(
            {ControlEntry::Kind::Q, di, "q_g." + dev.id, -qc, qc, false, 1.0});
        break;
      }
      case DeviceKind::Wind: {
        const double qc = std::sqrt(
            std::max(0.0, s * s - dev.p_available * dev.p_available));
        lay.entries.push_back({ControlEntry::Kind::Q, di, "q_g." + dev.id,
                               std::max(dev.q_min, -qc), qc, false, 1.0});
        break;
      }
    }
  }
  return lay;
}

int ControlLayout::tap_pos(int unit) const {
  for (int i = 0; i < size(); ++i)
    if (entries[i].kind == ControlEntry::Kind::Tap && entries[i].element == unit)
      return i;
  return -1;
}

int ControlLayout::cb_pos(int cap) const {
  for (int i = 0; i < size(); ++i)
    if (entries[i].kind == ControlEntry::Kind::CbStep &&
        entries[i].element == cap)
      return i;
  return -1;
}

int ControlLayout::device_pos(int device, ControlEntry::Kind kind) const {
  for (int i = 0; i < size(); ++i)
    if (entries[i].kind == kind && entries[i].element == device) return i;
  return -1;
}

std::vector<int> ControlLayout::taps(const Vec& w) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (entries[i].kind == ControlEntry::Kind::Tap)
      out.push_back(static_cast<int>(std::llround(w[i])));
  return out;
}

std::vector<int> ControlLayout::cb_steps(const Vec& w) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (entries[i].kind == ControlEntry::Kind::CbStep)
      out.push_back(static_cast<int>(std::llround(w[i])));
  return out;
}

Vec ControlLayout::tap_values(const Vec& w) const {
  std::vector<double> vals;
  for (int i = 0; i < size(); ++i)
    if (entries[i].kind == ControlEntry::Kind::Tap) vals.push_back(w[i]);
  return Eigen::Map<const Vec>(vals.data(), vals.size());
}

Vec ControlLayout::lower() const {
  Vec v(size());
  for (int i = 0; i < size(); ++i) v[i] = entries[i].lo;
  return v;
}

Vec ControlLayout::upper() const {
  Vec v(size());
  for (int i = 0; i < size(); ++i) v[i] = entries[i].hi;
  return v;
}

Vec ControlLayout::trust_weights() const {
  Vec v(size());
  for (int i = 0; i < size(); ++i) v[i] = entries[i].trust_weight;
  return v;
}

Vec ControlLayout::clamp(const Vec& w) const {
  Vec out = w;
  for (int i = 0; i < size(); ++i) {
    out[i] = std::min(entries[i].hi, std::max(entries[i].lo, out[i]));
    if (entries[i].is_integer) out[i] = std::llround(out[i]);
  }
  return out;
}

void ControlLayout::check(const Vec& w, double tol,
                          bool require_integral) const {
  if (w.size() != size())
    throw ValidationError("control vector has wrong length");
  for (int i = 0; i < size(); ++i) {
    const auto& e = entries[i];
    if (require_integral && e.is_integer &&
        std::abs(w[i] - std::llround(w[i])) > tol)
      throw ValidationError(e.name + " must be an integer");
    if (w[i] < e.lo - tol || w[i] > e.hi + tol)
      throw ValidationError(e.name + " outside its range");
  }
}

CVec injected_currents(const Network& net, const LoadView& loads,
                       const ControlLayout& layout, const Vec& w,
                       const CVec& v, const Vec& q_g_vc) {
  const int n = static_cast<int>(net.buses.size());
  CVec inj = CVec::Zero(n);

  for (int b = 0; b < n; ++b) {
    if (loads.p0[b] == 0 && loads.q0[b] == 0) continue;
    const double vm = std::abs(v[b]);
    if (vm < kVoltageFloor)
      throw NumericError("voltage magnitude collapsed during a solve");
    const Cx s_d(loads.active(b, vm), loads.reactive(b, vm));
    inj[b] += -std::conj(s_d / v[b]);
  }

  for (size_t d = 0; d < net.devices.size(); ++d) {
    const int b = net.devices[d].bus;
    double p = 0, q = 0;
    device_output(net, layout, w, q_g_vc, static_cast<int>(d), &p, &q);
    if (std::abs(v[b]) < kVoltageFloor)
      throw NumericError("voltage magnitude collapsed during a solve");
    inj[b] += std::conj(Cx(p, q) / v[b]);
  }

  for (size_t c = 0; c < net.caps.size(); ++c) {
    const int b = net.caps[c].bus;
    const double st = w[layout.cb_pos(static_cast<int>(c))];
    inj[b] += cb_injection(st, net.caps[c].y_step, v[b]);
  }

  const auto maps = upstream_injection_maps(net, layout.tap_values(w));
  inj[net.head()] += maps.d * net.upstream.v_source;
  return inj;
}

DeviceBlocks stamp_device_blocks(const Network& net, const LoadView& loads,
                                 const ControlLayout& layout, const Vec& w,
                                 const CVec& v, const Vec& q_g_vc,
                                 bool include_vc_devices) {
  const int n = static_cast<int>(net.buses.size());
  DeviceBlocks blocks;
  blocks.a = Mat::Zero(2 * n, 2 * n);
  blocks.b = Mat::Zero(2 * n, layout.size());

  auto stamp_a = [&](int bus, const Eigen::Matrix2d& m) {
    blocks.a(bus, bus) += m(0, 0);
    blocks.a(bus, n + bus) += m(0, 1);
    blocks.a(n + bus, bus) += m(1, 0);
    blocks.a(n + bus, n + bus) += m(1, 1);
  };

  // Loads: demand tracks |V|, so the injected current varies with both the
  // phase and the magnitude of the bus voltage.
  for (int b = 0; b < n; ++b) {
    if (loads.p0[b] == 0 && loads.q0[b] == 0) continue;
    const double vm = std::abs(v[b]);
    const Cx s_d(loads.active(b, vm), loads.reactive(b, vm));
    const Cx i_inj = -std::conj(s_d / v[b]);
    const double v02 = loads.v0[b] * loads.v0[b];
    const double ap = 2.0 * loads.zp_p * loads.p0[b] / v02;
    const double aq = 2.0 * loads.zp_q * loads.q0[b] / v02;
    Eigen::Matrix2d rhs;
    rhs << ap * v[b].real() + i_inj.real(), ap * v[b].imag() + i_inj.imag(),
        aq * v[b].real() - i_inj.imag(), aq * v[b].imag() + i_inj.real();
    stamp_a(b, -vm_inverse(v[b]) * rhs);
  }

  // Constant-power sources.
  for (size_t d = 0; d < net.devices.size(); ++d) {
    const auto& dev = net.devices[d];
    if (!include_vc_devices && dev.mode == DeviceMode::VoltageControl) continue;
    const int b = dev.bus;
    double p = 0, q = 0;
    device_output(net, layout, w, q_g_vc, static_cast<int>(d), &p, &q);
    const Cx i_inj = std::conj(Cx(p, q) / v[b]);
    Eigen::Matrix2d im;
    im << i_inj.real(), i_inj.imag(), -i_inj.imag(), i_inj.real();
    const Eigen::Matrix2d vinv = vm_inverse(v[b]);
    stamp_a(b, -vinv * im);

    if (dev.mode == DeviceMode::PowerControl) {
      const int pp = layout.device_pos(static_cast<int>(d), ControlEntry::Kind::P);
      const int qp = layout.device_pos(static_cast<int>(d), ControlEntry::Kind::Q);
      if (pp >= 0) {
        blocks.b(b, pp) += vinv(0, 0);
        blocks.b(n + b, pp) += vinv(1, 0);
      }
      if (qp >= 0) {
        blocks.b(b, qp) += vinv(0, 1);
        blocks.b(n + b, qp) += vinv(1, 1);
      }
    }
  }

  // Capacitor banks: fixed susceptance per step.
  for (size_t c = 0; c < net.caps.size(); ++c) {
    const auto& cb = net.caps[c];
    const int sp0 = layout.cb_pos(static_cast<int>(c));
    const double bsh = w[sp0] * cb.y_step;
    Eigen::Matrix2d m;
    m << 0, bsh, -bsh, 0;
    stamp_a(cb.bus, m);
    const int sp = layout.cb_pos(static_cast<int>(c));
    blocks.b(cb.bus, sp) += cb.y_step * v[cb.bus].imag();
    blocks.b(n + cb.bus, sp) += -cb.y_step * v[cb.bus].real();
  }

  // Tap columns: the eliminated upstream branch injects at the head, and
  // both of its coefficients move with every unit's tap.
  const auto maps = upstream_injection_maps(net, layout.tap_values(w));
  const int head = net.head();
  for (size_t t = 0; t < net.transformers.size(); ++t) {
    const Cx di =
        maps.dc_dtap[t] * v[head] + maps.dd_dtap[t] * net.upstream.v_source;
    const int tp = layout.tap_pos(static_cast<int>(t));
    blocks.b(head, tp) += di.real();
    blocks.b(n + head, tp) += di.imag();
  }
  return blocks;
}

OperatingPoint solve_power_flow(const Network& net, const LoadView& loads,
                                const ControlLayout& layout, const Vec& w,
                                const PfOptions& opts) {
  layout.check(w);
  const int n = static_cast<int>(net.buses.size());

  std::vector<int> vc_devices;
  for (size_t d = 0; d < net.devices.size(); ++d)
    if (net.devices[d].mode == DeviceMode::VoltageControl)
      vc_devices.push_back(static_cast<int>(d));
  const int n_vc = static_cast<int>(vc_devices.size());

  const Mat m0 = stack_real(bus_admittance(net, layout.tap_values(w)));

  CVec v = CVec::Constant(n, Cx(1, 0));
  Vec q_vc_full = Vec::Zero(net.devices.size());

  auto compute_f = [&](const CVec& vv, const Vec& q_full) {
    Vec x(2 * n);
    for (int i = 0; i < n; ++i) {
      x[i] = vv[i].real();
      x[n + i] = vv[i].imag();
    }
    const CVec inj = injected_currents(net, loads, layout, w, vv, q_full);
    Vec f(2 * n + n_vc);
    Vec ix(2 * n);
    for (int i = 0; i < n; ++i) {
      ix[i] = inj[i].real();
      ix[n + i] = inj[i].imag();
    }
    f.head(2 * n) = m0 * x - ix;
    for (int k = 0; k < n_vc; ++k) {
      const int dev = vc_devices[k];
      const int b = net.devices[dev].bus;
      const double vset =
          w[layout.device_pos(dev, ControlEntry::Kind::Vset)];
      f[2 * n + k] = std::norm(vv[b]) - vset * vset;
    }
    return f;
  };

  Vec f = compute_f(v, q_vc_full);
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    if (f.lpNorm<Eigen::Infinity>() < opts.tol) break;

    const DeviceBlocks blk =
        stamp_device_blocks(net, loads, layout, w, v, q_vc_full);
    Mat jac = Mat::Zero(2 * n + n_vc, 2 * n + n_vc);
    jac.topLeftCorner(2 * n, 2 * n) = m0 - blk.a;
    for (int k = 0; k < n_vc; ++k) {
      const int dev = vc_devices[k];
      const int b = net.devices[dev].bus;
      const double n2 = std::norm(v[b]);
      // d(mismatch)/d(q_g): minus the reactive injection column.
      jac(b, 2 * n + k) = -v[b].imag() / n2;
      jac(n + b, 2 * n + k) = v[b].real() / n2;
      jac(2 * n + k, b) = 2.0 * v[b].real();
      jac(2 * n + k, n + b) = 2.0 * v[b].imag();
    }

    Eigen::PartialPivLU<Mat> lu(jac);
    const Vec step = lu.solve(-f);
    if (!step.allFinite())
      throw NumericError("power flow Jacobian is singular");

    double alpha = 1.0;
    const double f0 = f.norm();
    CVec v_best;
    Vec q_best, f_best;
    double best_norm = -1;
    for (int h = 0; h <= opts.max_damping; ++h) {
      CVec v_try = v;
      Vec q_try = q_vc_full;
      for (int i = 0; i < n; ++i)
        v_try[i] += alpha * Cx(step[i], step[n + i]);
      for (int k = 0; k < n_vc; ++k)
        q_try[vc_devices[k]] += alpha * step[2 * n + k];
      try {
        Vec f_try = compute_f(v_try, q_try);
        const double fn = f_try.norm();
        if (best_norm < 0 || fn < best_norm) {
          best_norm = fn;
          v_best = v_try;
          q_best = q_try;
          f_best = f_try;
        }
        if (fn < f0) break;
      } catch (const NumericError&) {
        // collapsed trial voltage: shorten the step
      }
      alpha *= 0.5;
    }
    if (best_norm < 0)
      throw NumericError("power flow diverged: no evaluable step");
    v = v_best;
    q_vc_full = q_best;
    f = f_best;
  }
  if (f.lpNorm<Eigen::Infinity>() >= opts.tol)
    throw NumericError("power flow did not converge in " +
                       std::to_string(opts.max_iter) + " iterations");

  // Assemble the solved operating point.
  OperatingPoint op;
  op.v = v;
  op.w = w;
  op.q_g_vc = q_vc_full;
  op.newton_iters = iter;

  const Vec taps = layout.tap_values(w);
  const auto maps = upstream_injection_maps(net, taps);
  op.i_injected = injected_currents(net, loads, layout, w, v, q_vc_full);
  op.i_injected[net.head()] += maps.c * v[net.head()];

  op.i_line.resize(net.lines.size());
  op.loss_line_copper = 0;
  for (size_t l = 0; l < net.lines.size(); ++l) {
    const auto& ln = net.lines[l];
    op.i_line[l] = (v[ln.from] - v[ln.to]) / ln.z();
    op.loss_line_copper += std::norm(op.i_line[l]) * ln.r;
  }

  const Cx v_s = v[net.head()];
  const Cx i_s = op.i_injected[net.head()];
  const Transmission tm = transmission_matrix(net.transformers, taps, net.zp_law);
  op.v_primary = tm.t(0, 0) * v_s + tm.t(0, 1) * i_s;
  op.i_primary = tm.t(1, 0) * v_s + tm.t(1, 1) * i_s;
  const Cx s_up = op.v_primary * std::conj(op.i_primary);
  op.p_upstream = s_up.real();
  op.q_upstream = s_up.imag();

  op.tr_copper.assign(net.transformers.size(), 0);
  op.tr_core.assign(net.transformers.size(), 0);
  for (size_t t = 0; t < net.transformers.size(); ++t) {
    const auto& u = net.transformers[t];
    const auto ports = transformer_chain(u, taps[t], net.zp_law);
    const Cx i_s_t = (op.v_primary - ports.t.a * v_s) / ports.t.b;
    const Cx i_p_t = ports.t.c * v_s + ports.t.d * i_s_t;
    const Cx v_mid = (op.v_primary - ports.z_primary * i_p_t) / ports.ratio;
    op.tr_copper[t] = std::norm(i_p_t) * ports.z_primary.real() +
                      std::norm(i_s_t) * ports.z_secondary.real();
    op.tr_core[t] = u.r_core > 0 ? std::norm(v_mid) / u.r_core : 0.0;
    op.loss_tr_copper += op.tr_copper[t];
    op.loss_tr_core += op.tr_core[t];
  }

  for (int b = 0; b < n; ++b) {
    const double vm = std::abs(v[b]);
    op.p_load_total += loads.active(b, vm);
    op.q_load_total += loads.reactive(b, vm);
  }
  for (size_t d = 0; d < net.devices.size(); ++d) {
    double p = 0, q = 0;
    device_output(net, layout, w, q_vc_full, static_cast<int>(d), &p, &q);
    op.p_gen_total += p;
    op.q_gen_total += q;
  }
  return op;
}

double OperatingPoint::device_p(const Network& net, const ControlLayout& lay,
                                int dev) const {
  double p = 0, q = 0;
  device_output(net, lay, w, q_g_vc, dev, &p, &q);
  return p;
}

double OperatingPoint::device_q(const Network& net, const ControlLayout& lay,
                                int dev) const {
  double p = 0, q = 0;
  device_output(net, lay, w, q_g_vc, dev, &p, &q);
  return q;
}

double evaluate_cost(const Network& net, const ControlLayout& layout,
                     const OperatingPoint& op, const CostParams& cost) {
  double f = cost.price_active * op.p_upstream +
             cost.price_reactive * op.q_upstream;
  for (size_t d = 0; d < net.devices.size(); ++d)
    if (net.devices[d].price != 0)
      f += net.devices[d].price *
           op.device_p(net, layout, static_cast<int>(d));
  return f * net.s_base_mva * cost.tau_hours;
}

FeasReport check_feasibility(const Network& net, const ControlLayout& layout,
                             const OperatingPoint& op, double tol) {
  FeasReport rep;
  auto add = [&](const std::string& what, double amount) {
    rep.worst = std::max(rep.worst, amount);
    if (amount > tol) {
      rep.feasible = false;
      rep.items.push_back({what, amount});
    }
  };

  for (size_t b = 0; b < net.buses.size(); ++b) {
    const double vm = std::abs(op.v[b]);
    add("undervoltage at " + net.buses[b].name, net.v_min - vm);
    add("overvoltage at " + net.buses[b].name, vm - net.v_max);
  }
  for (size_t l = 0; l < net.lines.size(); ++l) {
    if (net.lines[l].i_max <= 0) continue;
    add("ampacity on line " + net.buses[net.lines[l].from].name + "-" +
            net.buses[net.lines[l].to].name,
        std::abs(op.i_line[l]) - net.lines[l].i_max);
  }
  for (size_t d = 0; d < net.devices.size(); ++d) {
    const auto& dev = net.devices[d];
    const double p = op.device_p(net, layout, static_cast<int>(d));
    const double q = op.device_q(net, layout, static_cast<int>(d));
    add("capacity of " + dev.id, std::hypot(p, q) - dev.s_max);
    if (dev.has_angle_limit())
      add("power angle of " + dev.id,
          std::abs(q) - std::tan(dev.power_angle_deg * kPi / 180.0) * p);
    if (dev.kind == DeviceKind::Wind)
      add("reactive floor of " + dev.id, dev.q_min - q);
    if (dev.kind == DeviceKind::Der)
      add("active range of " + dev.id, -p);
  }
  for (int i = 0; i < layout.size(); ++i) {
    const auto& e = layout.entries[i];
    add(e.name + " below range", e.lo - op.w[i]);
    add(e.name + " above range", op.w[i] - e.hi);
    if (e.is_integer)
      add(e.name + " integrality",
          std::abs(op.w[i] - std::llround(op.w[i])));
  }
  return rep;
}

}  // namespace dsopt
