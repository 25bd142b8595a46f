#ifndef MASKPOS_H
#define MASKPOS_H

/*
 * C interface to the maskpos library: analytic second-layer geometry of a
 * parameter-free causal Transformer, its Monte Carlo simulator, and the file
 * formats used by the command-line tool.
 *
 * Every call returns an mp_status. On failure a description is available from
 * mp_last_error() (thread-local, valid until the next failing call on the same
 * thread). Objects returned through out-pointers are owned by the caller and
 * released with the matching *_free function.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MASKPOS_BUILDING)
#    define MASKPOS_API __declspec(dllexport)
#  else
#    define MASKPOS_API __declspec(dllimport)
#  endif
#else
#  define MASKPOS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mp_status {
  MP_OK = 0,
  MP_ERR_DOMAIN = 1,     /* argument outside a formula's domain (e.g. alpha >= 1) */
  MP_ERR_DEGENERATE = 2, /* zero-norm / zero-variance input row */
  MP_ERR_CONFIG = 3,     /* invalid or inconsistent configuration, dimension mismatch */
  MP_ERR_IO = 4,         /* file system or parse failure */
  MP_ERR_ARGUMENT = 5,   /* null pointer or index out of range */
  MP_ERR_INTERNAL = 6
} mp_status;

typedef struct mp_matrix mp_matrix;
typedef struct mp_stats mp_stats;

MASKPOS_API const char* mp_version(void);
MASKPOS_API const char* mp_last_error(void);

/* ---- matrices ---------------------------------------------------------- */

MASKPOS_API mp_status mp_matrix_create(size_t rows, size_t cols, mp_matrix** out);
MASKPOS_API void mp_matrix_free(mp_matrix* m);
MASKPOS_API size_t mp_matrix_rows(const mp_matrix* m);
MASKPOS_API size_t mp_matrix_cols(const mp_matrix* m);
/* Row-major view of rows*cols doubles, valid while m lives. */
MASKPOS_API const double* mp_matrix_data(const mp_matrix* m);
/* Indices are 0-based. */
MASKPOS_API mp_status mp_matrix_get(const mp_matrix* m, size_t row, size_t col, double* value);
MASKPOS_API mp_status mp_matrix_set(mp_matrix* m, size_t row, size_t col, double value);

MASKPOS_API mp_status mp_matrix_read_csv(const char* path, mp_matrix** out);
MASKPOS_API mp_status mp_matrix_write_csv(const mp_matrix* m, const char* path);

/* ---- analytic ---------------------------------------------------------- */

typedef enum mp_analytic_fn {
  MP_FN_SOFTMAX_WEIGHT = 0,   /* (i, j) */
  MP_FN_CROSS_INNER = 1,      /* (i), i >= 2 */
  MP_FN_OUTPUT_NORM = 2,      /* (i) */
  MP_FN_LAYER2_INNER = 3,     /* (i, j) */
  MP_FN_CROSS_INNER_NORES = 4,
  MP_FN_OUTPUT_NORM_NORES = 5,
  MP_FN_LAYER2_INNER_NORES = 6
} mp_analytic_fn;

/* Positions are 1-based; j is ignored by single-index functions. */
MASKPOS_API mp_status mp_analytic_eval(mp_analytic_fn fn, long long i, long long j, double alpha, double* out);
MASKPOS_API mp_status mp_analytic_gram(size_t n, double alpha, int residual, mp_matrix** out);
MASKPOS_API mp_status mp_check_norm_monotone(double alpha, size_t n_max, int residual, int* monotone);

/* ---- experiments ------------------------------------------------------- */

typedef enum mp_mode { MP_MODE_NOPE = 0, MP_MODE_ROPE_DECODER = 1, MP_MODE_ROPE_ENCODER = 2 } mp_mode;
typedef enum mp_norm { MP_NORM_L2 = 0, MP_NORM_LAYERNORM = 1 } mp_norm;
typedef enum mp_scale { MP_SCALE_ONE = 0, MP_SCALE_SQRT_D = 1, MP_SCALE_D = 2 } mp_scale;

typedef struct mp_experiment_config {
  mp_mode mode;
  size_t n;
  size_t d;
  double alpha;
  size_t layers;
  size_t trials;
  uint64_t seed;
  mp_norm norm;
  mp_scale scale;
  int residual;     /* nonzero: residual connection on */
  double theta;     /* RoPE base; <= 0 means unset (rope modes then use 10000) */
  unsigned workers; /* 0: hardware concurrency; never affects results */
} mp_experiment_config;

/* Desk-scale defaults: nope, n=16, d=64, alpha=0, 4 layers, 20000 trials, seed 0, l2, scale one, residual on. */
MASKPOS_API void mp_experiment_config_default(mp_experiment_config* config);

typedef enum mp_quantity {
  MP_Q_ATTENTION = 0,
  MP_Q_SCORES = 1,
  MP_Q_GRAM = 2,
  MP_Q_ATTENTION_DN = 3,
  MP_Q_SCORES_DN = 4
} mp_quantity;

typedef enum mp_statistic { MP_STAT_MEAN = 0, MP_STAT_STDERR = 1 } mp_statistic;

MASKPOS_API mp_status mp_run_experiment(const mp_experiment_config* config, mp_stats** out);
MASKPOS_API void mp_stats_free(mp_stats* stats);
MASKPOS_API size_t mp_stats_layers(const mp_stats* stats);
MASKPOS_API size_t mp_stats_trials(const mp_stats* stats);
/* layer is 1-based. */
MASKPOS_API mp_status mp_stats_matrix(const mp_stats* stats, size_t layer, mp_quantity quantity,
                                      mp_statistic statistic, mp_matrix** out);

/* Runs the experiment and writes CSVs plus manifest.txt into out_dir. */
MASKPOS_API mp_status mp_simulate_to_dir(const mp_experiment_config* config, const char* out_dir, int force);

MASKPOS_API mp_status mp_diagonal_normalize(const mp_matrix* a, int masked, mp_matrix** out);
MASKPOS_API mp_status mp_quantile_clip(const mp_matrix* a, int masked, double q_low, double q_high,
                                       mp_matrix** out);

typedef struct mp_comparison {
  double max_abs_error;
  double mean_abs_error;
  size_t worst_row; /* 1-based */
  size_t worst_col; /* 1-based */
  size_t failed_cells;
  size_t total_cells;
  double abs_floor;
} mp_comparison;

/* Cell passes iff |mean - oracle| <= max(abs_floor, 3 * stderr). std_error may be NULL. */
MASKPOS_API mp_status mp_compare(const mp_matrix* mean, const mp_matrix* oracle, const mp_matrix* std_error,
                                 double abs_floor, mp_comparison* out);

/* ---- rendering --------------------------------------------------------- */

/* Binary PGM heatmap. causal: exclude and paint black the upper triangle. */
MASKPOS_API mp_status mp_render_pgm(const mp_matrix* m, double q_low, double q_high, int causal, const char* path);

/* ---- verification ------------------------------------------------------ */

typedef void (*mp_line_callback)(const char* line, void* user);

/* Runs the acceptance suite, calling `callback` with one line per criterion.
   trials = 0 selects the default budget (20000). *all_pass is set to 1 iff every criterion passed. */
MASKPOS_API mp_status mp_verify(size_t trials, unsigned workers, mp_line_callback callback, void* user,
                                int* all_pass);

#ifdef __cplusplus
}
#endif

#endif /* MASKPOS_H */
