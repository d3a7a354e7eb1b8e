#include "network.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace dsopt {

double turn_ratio(const TransformerUnit& u, double tap) {
  if (tap < u.tap_min - 1e-9 || tap > u.tap_max + 1e-9) {
    std::ostringstream os;
    os << "transformer " << u.id << ": tap " << tap << " outside ["
       << u.tap_min << ", " << u.tap_max << "]";
    throw ValidationError(os.str());
  }
  return 1.0 + tap * u.tap_step;
}

TwoPortSens transformer_chain(const TransformerUnit& u, double tap, ZpLaw law) {
  const double r = turn_ratio(u, tap);
  const Cx zn_half = u.z_nameplate() * 0.5;
  const Cx ym = u.y_core();
  const Cx zs = zn_half;

  // Cascade: series z_p, ideal r:1, shunt y_m, series z_s.
  // z_p scales with the ratio so the referred impedance z_p/r stays put
  // (Linear) or scales linearly (Squared).
  TwoPortSens out;
  Cx zp_over_r, d_zp_over_r;  // z_p/r and its d/dr
  if (law == ZpLaw::Linear) {
    zp_over_r = zn_half;
    d_zp_over_r = 0;
  } else {
    zp_over_r = zn_half * r;
    d_zp_over_r = zn_half;
  }

  TwoPort t;
  t.a = r + zp_over_r * ym;
  t.b = t.a * zs + zp_over_r;
  t.c = ym / r;
  t.d = (ym * zs + 1.0) / r;

  TwoPort dt;  // d/dr
  dt.a = 1.0 + d_zp_over_r * ym;
  dt.b = dt.a * zs + d_zp_over_r;
  dt.c = -ym / (r * r);
  dt.d = -t.d / r;

  out.t = t;
  out.dt.a = dt.a * u.tap_step;
  out.dt.b = dt.b * u.tap_step;
  out.dt.c = dt.c * u.tap_step;
  out.dt.d = dt.d * u.tap_step;
  out.ratio = r;
  out.z_primary = zp_over_r * r;
  out.z_secondary = zs;
  return out;
}

PiModel two_port_pi(const TwoPort& t) {
  if (std::abs(t.b) == 0)
    throw NumericError("two-port has no series impedance, no pi equivalent");
  PiModel pi;
  pi.z_series = t.b;
  pi.y_shunt_secondary = (t.a - 1.0) / t.b;
  pi.y_shunt_primary = (t.d - 1.0) / t.b;
  return pi;
}

PiModel aggregate_parallel(const std::vector<PiModel>& branches) {
  if (branches.empty()) throw ValidationError("aggregate of zero branches");
  Cx y_sr = 0, y_pp = 0, y_ss = 0;
  for (const auto& b : branches) {
    y_sr += b.y_series();
    y_pp += b.y_shunt_primary;
    y_ss += b.y_shunt_secondary;
  }
  PiModel pi;
  pi.z_series = 1.0 / y_sr;
  pi.y_shunt_primary = y_pp;
  pi.y_shunt_secondary = y_ss;
  return pi;
}

BankAggregate aggregate_bank(const std::vector<TransformerUnit>& units,
                             const Vec& taps, ZpLaw law) {
  if (units.empty()) throw ValidationError("transformer bank is empty");
  if (static_cast<size_t>(taps.size()) != units.size())
    throw ValidationError("tap vector size does not match transformer count");

  BankAggregate agg;
  const size_t n = units.size();
  agg.dy_sr.assign(n, 0);
  agg.dy_pp.assign(n, 0);
  agg.dy_ss.assign(n, 0);

  for (size_t k = 0; k < n; ++k) {
    const auto s = transformer_chain(units[k], taps[k], law);
    const Cx b = s.t.b, db = s.dt.b;
    const Cx a = s.t.a, da = s.dt.a;
    const Cx d = s.t.d, dd = s.dt.d;
    agg.y_sr += 1.0 / b;
    agg.y_ss += (a - 1.0) / b;
    agg.y_pp += (d - 1.0) / b;
    agg.dy_sr[k] = -db / (b * b);
    agg.dy_ss[k] = (da * b - (a - 1.0) * db) / (b * b);
    agg.dy_pp[k] = (dd * b - (d - 1.0) * db) / (b * b);
  }
  return agg;
}

Transmission transmission_matrix(const std::vector<TransformerUnit>& units,
                                 const Vec& taps, ZpLaw law) {
  const BankAggregate agg = aggregate_bank(units, taps, law);
  const Cx z_sr = 1.0 / agg.y_sr;

  Transmission out;
  out.t << 1.0 + z_sr * agg.y_ss, z_sr,
      agg.y_pp + agg.y_ss + z_sr * agg.y_pp * agg.y_ss, 1.0 + z_sr * agg.y_pp;

  out.dt_dtap.resize(units.size());
  for (size_t k = 0; k < units.size(); ++k) {
    const Cx dz = -agg.dy_sr[k] / (agg.y_sr * agg.y_sr);
    const Cx dpp = agg.dy_pp[k], dss = agg.dy_ss[k];
    Eigen::Matrix2cd dt;
    dt(0, 0) = dz * agg.y_ss + z_sr * dss;
    dt(0, 1) = dz;
    dt(1, 0) = dpp + dss + dz * agg.y_pp * agg.y_ss +
               z_sr * (dpp * agg.y_ss + agg.y_pp * dss);
    dt(1, 1) = dz * agg.y_pp + z_sr * dpp;
    out.dt_dtap[k] = dt;
  }
  return out;
}

UpstreamMaps upstream_injection_maps(const Network& net, const Vec& taps) {
  const BankAggregate agg =
      aggregate_bank(net.transformers, taps, net.zp_law);
  const size_t n = net.transformers.size();
  UpstreamMaps m;
  m.dc_dtap.assign(n, 0);
  m.dd_dtap.assign(n, 0);

  const Cx z_th = net.upstream.z;
  if (std::abs(z_th) == 0) {
    // Stiff source: the primary terminal sits at the source voltage.
    m.c = -(agg.y_sr + agg.y_ss);
    m.d = agg.y_sr;
    for (size_t k = 0; k < n; ++k) {
      m.dc_dtap[k] = -(agg.dy_sr[k] + agg.dy_ss[k]);
      m.dd_dtap[k] = agg.dy_sr[k];
    }
    return m;
  }

  const Cx y_th = 1.0 / z_th;
  const Cx u = agg.y_sr;
  const Cx sigma = y_th + agg.y_pp + u;
  m.c = u * u / sigma - u - agg.y_ss;
  m.d = u * y_th / sigma;
  for (size_t k = 0; k < n; ++k) {
    const Cx du = agg.dy_sr[k];
    const Cx dsigma = agg.dy_pp[k] + du;
    m.dc_dtap[k] = (2.0 * u * du * sigma - u * u * dsigma) / (sigma * sigma) -
                   du - agg.dy_ss[k];
    m.dd_dtap[k] = y_th * (du * sigma - u * dsigma) / (sigma * sigma);
  }
  return m;
}

double zp_share(const ZipShares& s) {
  const double sum = s.z + s.i + s.p;
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("load mix shares must sum to 1");
  for (double v : {s.z, s.i, s.p})
    if (v < -1e-12 || v > 1.0 + 1e-12)
      throw ValidationError("load mix share outside [0, 1]");
  return s.z + 0.5 * s.i;
}

double zp_load_power(double p_nominal, double zp, double v_ratio) {
  return p_nominal * (zp * v_ratio * v_ratio + (1.0 - zp));
}

int Network::bus_index(const std::string& bus_name) const {
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].name == bus_name) return static_cast<int>(i);
  return -1;
}

void Network::validate() const {
  const int n = static_cast<int>(buses.size());
  if (n < 2) throw ValidationError("network needs at least two buses");
  if (transformers.empty())
    throw ValidationError("network needs at least one transformer unit");

  std::set<std::string> names;
  for (const auto& b : buses) {
    if (b.name.empty()) throw ValidationError("bus with empty name");
    if (!names.insert(b.name).second)
      throw ValidationError("duplicate bus name: " + b.name);
    if (b.v0 <= 0) throw ValidationError("bus " + b.name + ": v0 must be positive");
  }

  if (static_cast<int>(lines.size()) != n - 1)
    throw ValidationError("feeder must be radial: expected " +
                          std::to_string(n - 1) + " lines, got " +
                          std::to_string(lines.size()));

  // Connectivity via union-find; radial follows from edge count + connected.
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i) parent[i] = i;
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const auto& l : lines) {
    if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n || l.from == l.to)
      throw ValidationError("line endpoints out of range");
    if (l.r < 0 || (l.r == 0 && l.x == 0))
      throw ValidationError("line needs a nonzero impedance with r >= 0");
    const int a = find(l.from), b = find(l.to);
    if (a == b) throw ValidationError("feeder must be radial: loop detected");
    parent[a] = b;
  }
  for (int i = 1; i < n; ++i)
    if (find(i) != find(0)) throw ValidationError("feeder is not connected");

  for (const auto& u : transformers) {
    if (u.tap_min > u.tap_max)
      throw ValidationError("transformer " + u.id + ": tap_min > tap_max");
    if (u.tap_step <= 0)
      throw ValidationError("transformer " + u.id + ": tap_step must be positive");
    if (1.0 + u.tap_min * u.tap_step <= 0)
      throw ValidationError("transformer " + u.id + ": ratio can reach zero");
    if (u.r_series < 0 || u.x_series <= 0)
      throw ValidationError("transformer " + u.id + ": bad series impedance");
    if (u.r_core < 0 || u.x_mag < 0)
      throw ValidationError("transformer " + u.id + ": bad core branch");
  }

  for (const auto& cb : caps) {
    if (cb.bus < 0 || cb.bus >= n)
      throw ValidationError("capacitor " + cb.id + ": bus out of range");
    if (cb.y_step <= 0)
      throw ValidationError("capacitor " + cb.id + ": y_step must be positive");
    if (cb.step_min > cb.step_max || cb.step_min < 0)
      throw ValidationError("capacitor " + cb.id + ": bad step range");
  }

  std::set<std::string> dev_ids;
  std::set<int> vc_buses;
  for (const auto& d : devices) {
    if (d.mode == DeviceMode::VoltageControl &&
        !vc_buses.insert(d.bus).second)
      throw ValidationError(
          "two voltage-controlled devices share bus " + buses[d.bus].name);
  }
  for (const auto& d : devices) {
    if (d.bus < 0 || d.bus >= n)
      throw ValidationError("device " + d.id + ": bus out of range");
    if (!dev_ids.insert(d.id).second)
      throw ValidationError("duplicate device id: " + d.id);
    if (d.s_max <= 0)
      throw ValidationError("device " + d.id + ": rating must be positive");
    if (d.kind == DeviceKind::Wind && d.q_min > 0)
      throw ValidationError("device " + d.id + ": wind q floor must be <= 0");
    if ((d.kind == DeviceKind::Pv || d.kind == DeviceKind::Wind) &&
        d.p_available < 0)
      throw ValidationError("device " + d.id + ": available power negative");
    if (d.power_angle_deg < 0 || d.power_angle_deg >= 90)
      throw ValidationError("device " + d.id + ": power angle outside [0, 90)");
  }

  zp_share(zip_p);
  zp_share(zip_q);

  if (v_min <= 0 || v_min >= v_max)
    throw ValidationError("voltage limits must satisfy 0 < v_min < v_max");
  if (std::abs(upstream.v_source) == 0)
    throw ValidationError("upstream source voltage is zero");
}

CMat bus_admittance(const Network& net, const Vec& taps) {
  const int n = static_cast<int>(net.buses.size());
  CMat y = CMat::Zero(n, n);
  for (const auto& l : net.lines) {
    const Cx yl = 1.0 / l.z();
    y(l.from, l.from) += yl + Cx(0, 0.5 * l.b_shunt);
    y(l.to, l.to) += yl + Cx(0, 0.5 * l.b_shunt);
    y(l.from, l.to) -= yl;
    y(l.to, l.from) -= yl;
  }
  const UpstreamMaps m = upstream_injection_maps(net, taps);
  y(net.head(), net.head()) -= m.c;
  return y;
}

Mat stack_real(const CMat& y) {
  const Eigen::Index n = y.rows();
  Mat m(2 * n, 2 * y.cols());
  m.topLeftCorner(n, y.cols()) = y.real();
  m.topRightCorner(n, y.cols()) = -y.imag();
  m.bottomLeftCorner(n, y.cols()) = y.imag();
  m.bottomRightCorner(n, y.cols()) = y.real();
  return m;
}

}  // namespace dsopt
