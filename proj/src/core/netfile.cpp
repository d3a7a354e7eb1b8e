#include "netfile.hpp"

#include <cmath>

namespace dsopt {
namespace {

int require_bus(const Network& net, const std::string& name,
                const std::string& where) {
  const int idx = net.bus_index(name);
  if (idx < 0) throw ValidationError(where + ": unknown bus '" + name + "'");
  return idx;
}

DeviceKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "der") return DeviceKind::Der;
  if (s == "svr") return DeviceKind::Svr;
  if (s == "pv") return DeviceKind::Pv;
  if (s == "wind") return DeviceKind::Wind;
  throw ValidationError(where + ": unknown device kind '" + s + "'");
}

DeviceMode parse_mode(const std::string& s, const std::string& where) {
  if (s == "power") return DeviceMode::PowerControl;
  if (s == "voltage") return DeviceMode::VoltageControl;
  throw ValidationError(where + ": unknown device mode '" + s + "'");
}

}  // namespace

Network network_from_text(const TextFile& file) {
  Network net;

  const auto& hdr = file.require("network");
  net.name = hdr.get_string("name", "unnamed");
  net.s_base_mva = hdr.get_double("s_base_mva", 100.0);
  net.v_base_kv = hdr.get_double("v_base_kv", 0.0);
  net.v_min = hdr.get_double("v_min", 0.95);
  net.v_max = hdr.get_double("v_max", 1.05);
  const std::string law = hdr.get_string("ratio_impedance_law", "linear");
  if (law == "linear")
    net.zp_law = ZpLaw::Linear;
  else if (law == "squared")
    net.zp_law = ZpLaw::Squared;
  else
    throw ValidationError("[network] ratio_impedance_law must be linear or squared");

  const auto& up = file.require("upstream");
  const double vmag = up.get_double("v_source");
  const double vdeg = up.get_double("angle_deg", 0.0);
  net.upstream.v_source = std::polar(vmag, vdeg * kPi / 180.0);
  net.upstream.z = Cx(up.get_double("r", 0.0), up.get_double("x", 0.0));

  if (const auto* mix = file.find("load_mix")) {
    net.zip_p = {mix->get_double("p_z"), mix->get_double("p_i"),
                 mix->get_double("p_p")};
    net.zip_q = {mix->get_double("q_z"), mix->get_double("q_i"),
                 mix->get_double("q_p")};
  }

  const auto& buses = file.require("buses");
  for (const auto& r : buses.records) {
    Bus b;
    if (r.fields.empty())
      throw ValidationError("line " + std::to_string(r.line) + ": empty bus record");
    b.name = r.fields[0];
    b.p_load = parse_double_field(r, 1, "bus p_load");
    b.q_load = parse_double_field(r, 2, "bus q_load");
    if (r.fields.size() > 3) b.v0 = parse_double_field(r, 3, "bus v0");
    net.buses.push_back(std::move(b));
  }

  const auto& lines = file.require("lines");
  for (const auto& r : lines.records) {
    Line l;
    const std::string where = "line record at line " + std::to_string(r.line);
    if (r.fields.size() < 4)
      throw ValidationError(where + ": need from to r x");
    l.from = require_bus(net, r.fields[0], where);
    l.to = require_bus(net, r.fields[1], where);
    l.r = parse_double_field(r, 2, "line r");
    l.x = parse_double_field(r, 3, "line x");
    if (r.fields.size() > 4) l.i_max = parse_double_field(r, 4, "line i_max");
    if (r.fields.size() > 5) l.b_shunt = parse_double_field(r, 5, "line b_shunt");
    net.lines.push_back(l);
  }

  for (const auto* s : file.all("transformer")) {
    TransformerUnit u;
    u.id = s->get_string("id");
    u.r_series = s->get_double("r");
    u.x_series = s->get_double("x");
    u.r_core = s->get_double("r_core", 0.0);
    u.x_mag = s->get_double("x_mag", 0.0);
    u.tap_min = s->get_int("tap_min");
    u.tap_max = s->get_int("tap_max");
    u.tap_step = s->get_double("tap_step", 0.01);
    net.transformers.push_back(std::move(u));
  }

  for (const auto* s : file.all("capacitor")) {
    CapacitorBank cb;
    cb.id = s->get_string("id");
    cb.bus = require_bus(net, s->get_string("bus"), "[capacitor] " + cb.id);
    cb.y_step = s->get_double("y_step");
    cb.step_min = s->get_int("step_min", 0);
    cb.step_max = s->get_int("step_max");
    net.caps.push_back(std::move(cb));
  }

  for (const auto* s : file.all("device")) {
    ContinuousDevice d;
    d.id = s->get_string("id");
    const std::string where = "[device] " + d.id;
    d.bus = require_bus(net, s->get_string("bus"), where);
    d.kind = parse_kind(s->get_string("kind"), where);
    d.mode = parse_mode(s->get_string("mode", "power"), where);
    d.s_max = s->get_double("s_max");
    d.price = s->get_double("price", 0.0);
    d.power_angle_deg = s->get_double("power_angle_deg", 0.0);
    d.q_min = s->get_double("q_min", 0.0);
    d.p_available = s->get_double("p_available", 0.0);
    net.devices.push_back(std::move(d));
  }

  net.validate();
  return net;
}

Network load_network(const std::string& path) {
  return network_from_text(parse_text_file(path));
}

}  // namespace dsopt
