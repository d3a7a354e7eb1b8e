// Command-line front end. Talks to the engine exclusively through the C
// interface so it doubles as a smoke test of the shared library.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsopt/dsopt.h"

namespace {

int exit_code(dsopt_status st) {
  switch (st) {
    case DSOPT_OK:
      return 0;
    case DSOPT_INVALID_ARGUMENT:
    case DSOPT_PARSE_ERROR:
    case DSOPT_IO_ERROR:
    case DSOPT_CONDITIONING_ERROR:
      return 2;
    case DSOPT_INFEASIBLE:
    case DSOPT_NUMERIC_ERROR:
      return 3;
    case DSOPT_BUDGET_EXCEEDED:
      return 4;
  }
  return 2;
}

int fail(dsopt_status st) {
  std::fprintf(stderr, "error: %s\n", dsopt_last_error());
  return exit_code(st);
}

double stat(const dsopt_result* res, int hour, const char* key) {
  double v = 0;
  dsopt_result_stat(res, hour, key, &v);
  return v;
}

int run_solve(const std::string& net_path, double mult, double price_a,
              double price_r, bool gate, int workers, int budget) {
  dsopt_network* net = nullptr;
  dsopt_status st = dsopt_network_load(net_path.c_str(), &net);
  if (st != DSOPT_OK) return fail(st);

  dsopt_options opts;
  dsopt_options_init(&opts);
  opts.gate = gate ? 1 : 0;
  opts.workers = workers;
  opts.node_budget = budget;

  dsopt_result* res = nullptr;
  st = dsopt_solve_hour(net, mult, price_a, price_r, nullptr, &opts, &res);
  if (!res) {
    dsopt_network_free(net);
    return fail(st);
  }

  double cost = 0;
  dsopt_result_cost(res, 0, &cost);
  std::printf("status: %s\n", st == DSOPT_OK ? "optimal" : "budget");
  std::printf("cost: %.6f\n", cost);
  std::printf("lower_bound: %.6f\n", stat(res, 0, "lower_bound"));
  std::printf("nodes: %d  tra_calls: %d  lp_solves: %d\n",
              (int)stat(res, 0, "nodes"), (int)stat(res, 0, "tra_calls"),
              (int)stat(res, 0, "lp_solves"));
  std::printf("p_upstream: %.6f pu  q_upstream: %.6f pu  loss: %.6f pu\n",
              stat(res, 0, "p_upstream"), stat(res, 0, "q_upstream"),
              stat(res, 0, "loss"));
  std::printf("controls:\n");
  for (int i = 0; i < dsopt_network_control_count(net); ++i) {
    const char* name = nullptr;
    double value = 0;
    dsopt_control_name(net, i, &name);
    dsopt_result_control(res, 0, i, &value);
    std::printf("  %-24s %.6f\n", name, value);
  }

  dsopt_result_free(res);
  dsopt_network_free(net);
  return exit_code(st);
}

int run_scenario_cmd(const std::string& sched_path, const std::string& out_dir) {
  dsopt_result* res = nullptr;
  dsopt_status st =
      dsopt_run_scenario(sched_path.c_str(), out_dir.c_str(), &res);
  if (!res) return fail(st);

  const int hours = dsopt_result_hours(res);
  for (int h = 0; h < hours; ++h) {
    double cost = 0;
    dsopt_result_cost(res, h, &cost);
    const bool held = stat(res, h, "held") > 0.5;
    std::printf("hour %2d  cost %12.6f  nodes %4d  %s\n", h + 1, cost,
                (int)stat(res, h, "nodes"), held ? "held" : "ok");
  }
  std::printf("outputs written to %s\n", out_dir.c_str());
  dsopt_result_free(res);
  return exit_code(st);
}

int run_estimate(const std::string& samples_path) {
  std::ifstream in(samples_path);
  if (!in) {
    std::fprintf(stderr, "error: cannot open %s\n", samples_path.c_str());
    return 2;
  }
  std::vector<double> v, i, phi;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double a, b, c;
    if (ls >> a >> b >> c) {
      v.push_back(a);
      i.push_back(b);
      phi.push_back(c);
    }
  }
  if (v.size() != 3) {
    std::fprintf(stderr,
                 "error: need exactly 3 sample lines (v_mag i_mag phi), got "
                 "%zu\n",
                 v.size());
    return 2;
  }
  double v_th = 0, z_mag = 0, z_arg = 0;
  const dsopt_status st = dsopt_estimate_thevenin(v.data(), i.data(),
                                                  phi.data(), &v_th, &z_mag,
                                                  &z_arg);
  if (st != DSOPT_OK) return fail(st);
  std::printf("v_th: %.8f pu\n", v_th);
  std::printf("z_th: %.8f pu at %.6f rad  (r %.8f, x %.8f)\n", z_mag, z_arg,
              z_mag * std::cos(z_arg), z_mag * std::sin(z_arg));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("feeder schedule optimizer ") + dsopt_version()};
  app.require_subcommand(1);

  std::string net_path, sched_path, samples_path, out_dir = "out";
  double mult = 1.0, price_a = 50.0, price_r = 5.0;
  bool no_gate = false;
  int workers = 1, budget = 5000;

  auto* solve = app.add_subcommand("solve", "schedule a single hour");
  solve->add_option("network", net_path, "network file")->required();
  solve->add_option("--load-mult", mult, "demand multiplier");
  solve->add_option("--price-active", price_a, "active energy price");
  solve->add_option("--price-reactive", price_r, "reactive energy price");
  solve->add_flag("--no-gate", no_gate, "skip the linear screening step");
  solve->add_option("--workers", workers, "tree worker threads");
  solve->add_option("--node-budget", budget, "maximum tree nodes");

  auto* scen = app.add_subcommand("scenario", "run a multi-hour schedule file");
  scen->add_option("schedule", sched_path, "schedule file")->required();
  scen->add_option("--out", out_dir, "output directory");

  auto* est = app.add_subcommand("estimate",
                                 "recover the upstream source from samples");
  est->add_option("samples", samples_path,
                  "file with three 'v_mag i_mag phi' lines")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (solve->parsed())
    return run_solve(net_path, mult, price_a, price_r, !no_gate, workers,
                     budget);
  if (scen->parsed()) return run_scenario_cmd(sched_path, out_dir);
  return run_estimate(samples_path);
}
