#ifndef DSOPT_H
#define DSOPT_H

/*
 * C interface to the feeder scheduling engine. Handles are opaque; every
 * call that can fail returns a status code and leaves a human-readable
 * message in dsopt_last_error() (thread local). Unless noted, pointers must
 * outlive the call only.
 */

#if defined(_WIN32)
#define DSOPT_API __declspec(dllexport)
#elif defined(__GNUC__)
#define DSOPT_API __attribute__((visibility("default")))
#else
#define DSOPT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dsopt_status {
  DSOPT_OK = 0,
  DSOPT_INVALID_ARGUMENT = 1,
  DSOPT_PARSE_ERROR = 2,
  DSOPT_INFEASIBLE = 3,
  DSOPT_BUDGET_EXCEEDED = 4,
  DSOPT_NUMERIC_ERROR = 5,
  DSOPT_IO_ERROR = 6,
  DSOPT_CONDITIONING_ERROR = 7
} dsopt_status;

typedef struct dsopt_network dsopt_network;
typedef struct dsopt_result dsopt_result;

typedef struct dsopt_options {
  int gate;         /* nonzero: screen nodes with the linear relaxation */
  int workers;      /* 1 is deterministic */
  int node_budget;  /* tree nodes per hour */
  double feas_tol;
  int record_nodes; /* keep the per-node trace (scenario: nodes.jsonl) */
} dsopt_options;

DSOPT_API const char* dsopt_version(void);

/* Message for the most recent failing call on this thread. */
DSOPT_API const char* dsopt_last_error(void);

DSOPT_API dsopt_status dsopt_network_load(const char* path,
                                          dsopt_network** out);
DSOPT_API dsopt_status dsopt_network_parse(const char* text,
                                           dsopt_network** out);
DSOPT_API void dsopt_network_free(dsopt_network* net);
DSOPT_API int dsopt_network_bus_count(const dsopt_network* net);
DSOPT_API int dsopt_network_control_count(const dsopt_network* net);

/* Name of one control slot (tap, capacitor step, or device set-point).
 * The string lives as long as the network handle. */
DSOPT_API dsopt_status dsopt_control_name(const dsopt_network* net, int index,
                                          const char** name);

DSOPT_API void dsopt_options_init(dsopt_options* opts);

/*
 * Globally schedule one hour. load_mult scales the network file's demand;
 * prices are per MWh / Mvarh at the feeder head. w_start may be NULL for
 * neutral starting controls. On DSOPT_OK and DSOPT_BUDGET_EXCEEDED a result
 * handle is returned (the latter holds the best schedule found in budget);
 * on DSOPT_INFEASIBLE *out is NULL.
 */
DSOPT_API dsopt_status dsopt_solve_hour(const dsopt_network* net,
                                        double load_mult, double price_active,
                                        double price_reactive,
                                        const double* w_start,
                                        const dsopt_options* opts,
                                        dsopt_result** out);

/*
 * Run a schedule file (its [scenario] section names the network) and write
 * the csv/jsonl outputs into out_dir. Hours that fail stay on the previous
 * controls and are reported in the outputs, not as an error status.
 */
DSOPT_API dsopt_status dsopt_run_scenario(const char* scenario_path,
                                          const char* out_dir,
                                          dsopt_result** out);

DSOPT_API void dsopt_result_free(dsopt_result* res);
DSOPT_API int dsopt_result_hours(const dsopt_result* res);

/* Exact cost of the applied controls for one hour (0-based index). */
DSOPT_API dsopt_status dsopt_result_cost(const dsopt_result* res,
                                         int hour_index, double* cost);

/* Named solve statistics: "cost_believed", "lower_bound", "nodes",
 * "tra_calls", "lp_solves", "pf_solves", "p_upstream", "q_upstream",
 * "loss", "feas_true", "held" (1 when the hour kept its old controls). */
DSOPT_API dsopt_status dsopt_result_stat(const dsopt_result* res,
                                         int hour_index, const char* key,
                                         double* value);

/* Applied control values, indexed like dsopt_control_name. */
DSOPT_API dsopt_status dsopt_result_control(const dsopt_result* res,
                                            int hour_index, int control_index,
                                            double* value);

/*
 * Source recovery from three primary-port samples: voltage magnitude,
 * current magnitude, current angle relative to the voltage (radians).
 * Arrays hold three entries each.
 */
DSOPT_API dsopt_status dsopt_estimate_thevenin(const double* v_mag,
                                               const double* i_mag,
                                               const double* phi, double* v_th,
                                               double* z_mag, double* z_arg);

#ifdef __cplusplus
}
#endif

#endif /* DSOPT_H */
