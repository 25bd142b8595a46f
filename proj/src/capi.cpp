#include "maskpos/maskpos.h"

#include <exception>
#include <string>

#include "maskpos/acceptance.hpp"
#include "maskpos/analytic.hpp"
#include "maskpos/experiments.hpp"
#include "maskpos/io.hpp"

struct mp_matrix {
  maskpos::Matrix m;
};

struct mp_stats {
  maskpos::experiments::AttentionStats s;
};

namespace {

thread_local std::string g_last_error;

mp_status fail(mp_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

mp_status status_for(maskpos::ErrorKind kind) {
  switch (kind) {
    case maskpos::ErrorKind::domain: return MP_ERR_DOMAIN;
    case maskpos::ErrorKind::degenerate: return MP_ERR_DEGENERATE;
    case maskpos::ErrorKind::config: return MP_ERR_CONFIG;
    case maskpos::ErrorKind::io: return MP_ERR_IO;
  }
  return MP_ERR_INTERNAL;
}

// Runs `body`, translating exceptions into status codes.
template <class F>
mp_status guarded(F&& body) {
  try {
    body();
    return MP_OK;
  } catch (const maskpos::Error& e) {
    return fail(status_for(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(MP_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MP_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MP_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MP_ERR_INTERNAL, "unknown error");
  }
}

#define MP_REQUIRE(ptr)                                          \
  do {                                                           \
    if (!(ptr)) return fail(MP_ERR_ARGUMENT, #ptr " is null");  \
  } while (0)

maskpos::experiments::ExperimentSpec to_spec(const mp_experiment_config& c) {
  namespace ex = maskpos::experiments;
  namespace sim = maskpos::sim;
  ex::ExperimentSpec s;
  switch (c.mode) {
    case MP_MODE_NOPE: s.mode = ex::Mode::nope; break;
    case MP_MODE_ROPE_DECODER: s.mode = ex::Mode::rope_decoder; break;
    case MP_MODE_ROPE_ENCODER: s.mode = ex::Mode::rope_encoder; break;
    default: throw maskpos::Error(maskpos::ErrorKind::config, "unknown mode");
  }
  switch (c.norm) {
    case MP_NORM_L2: s.norm = sim::Norm::l2; break;
    case MP_NORM_LAYERNORM: s.norm = sim::Norm::layernorm; break;
    default: throw maskpos::Error(maskpos::ErrorKind::config, "unknown norm");
  }
  switch (c.scale) {
    case MP_SCALE_ONE: s.scale = sim::ScoreScale::one; break;
    case MP_SCALE_SQRT_D: s.scale = sim::ScoreScale::sqrt_d; break;
    case MP_SCALE_D: s.scale = sim::ScoreScale::d; break;
    default: throw maskpos::Error(maskpos::ErrorKind::config, "unknown scale");
  }
  s.n = c.n;
  s.d = c.d;
  s.alpha = c.alpha;
  s.layers = c.layers;
  s.trials = c.trials;
  s.master_seed = c.seed;
  s.residual = c.residual != 0;
  if (c.theta > 0.0) s.theta = c.theta;
  s.validate();
  return s;
}

mp_matrix* wrap(maskpos::Matrix m) { return new mp_matrix{std::move(m)}; }

}  // namespace

extern "C" {

const char* mp_version(void) { return "0.1.0"; }

const char* mp_last_error(void) { return g_last_error.c_str(); }

mp_status mp_matrix_create(size_t rows, size_t cols, mp_matrix** out) {
  MP_REQUIRE(out);
  return guarded([&] { *out = wrap(maskpos::Matrix(rows, cols)); });
}

void mp_matrix_free(mp_matrix* m) { delete m; }

size_t mp_matrix_rows(const mp_matrix* m) { return m ? m->m.rows() : 0; }
size_t mp_matrix_cols(const mp_matrix* m) { return m ? m->m.cols() : 0; }
const double* mp_matrix_data(const mp_matrix* m) { return m ? m->m.values().data() : nullptr; }

mp_status mp_matrix_get(const mp_matrix* m, size_t row, size_t col, double* value) {
  MP_REQUIRE(m);
  MP_REQUIRE(value);
  if (row >= m->m.rows() || col >= m->m.cols()) return fail(MP_ERR_ARGUMENT, "matrix index out of range");
  *value = m->m(row, col);
  return MP_OK;
}

mp_status mp_matrix_set(mp_matrix* m, size_t row, size_t col, double value) {
  MP_REQUIRE(m);
  if (row >= m->m.rows() || col >= m->m.cols()) return fail(MP_ERR_ARGUMENT, "matrix index out of range");
  m->m(row, col) = value;
  return MP_OK;
}

mp_status mp_matrix_read_csv(const char* path, mp_matrix** out) {
  MP_REQUIRE(path);
  MP_REQUIRE(out);
  return guarded([&] { *out = wrap(maskpos::io::read_csv(path)); });
}

mp_status mp_matrix_write_csv(const mp_matrix* m, const char* path) {
  MP_REQUIRE(m);
  MP_REQUIRE(path);
  return guarded([&] { maskpos::io::write_csv(m->m, path); });
}

mp_status mp_analytic_eval(mp_analytic_fn fn, long long i, long long j, double alpha, double* out) {
  MP_REQUIRE(out);
  namespace an = maskpos::analytic;
  return guarded([&] {
    const an::Alpha a{alpha};
    const an::PositionIndex pi{i};
    switch (fn) {
      case MP_FN_SOFTMAX_WEIGHT: *out = an::softmax_weight(pi, an::PositionIndex{j}, a); break;
      case MP_FN_CROSS_INNER: *out = an::cross_inner(pi, a); break;
      case MP_FN_OUTPUT_NORM: *out = an::output_norm(pi, a); break;
      case MP_FN_LAYER2_INNER: *out = an::layer2_inner(pi, an::PositionIndex{j}, a); break;
      case MP_FN_CROSS_INNER_NORES: *out = an::cross_inner_nores(pi, a); break;
      case MP_FN_OUTPUT_NORM_NORES: *out = an::output_norm_nores(pi, a); break;
      case MP_FN_LAYER2_INNER_NORES: *out = an::layer2_inner_nores(pi, an::PositionIndex{j}, a); break;
      default: throw maskpos::Error(maskpos::ErrorKind::config, "unknown analytic function");
    }
  });
}

mp_status mp_analytic_gram(size_t n, double alpha, int residual, mp_matrix** out) {
  MP_REQUIRE(out);
  return guarded([&] {
    *out = wrap(maskpos::analytic::analytic_gram(n, maskpos::analytic::Alpha{alpha}, residual != 0));
  });
}

mp_status mp_check_norm_monotone(double alpha, size_t n_max, int residual, int* monotone) {
  MP_REQUIRE(monotone);
  return guarded([&] {
    *monotone = maskpos::analytic::check_norm_monotone(maskpos::analytic::Alpha{alpha}, n_max, residual != 0);
  });
}

void mp_experiment_config_default(mp_experiment_config* c) {
  if (!c) return;
  const maskpos::experiments::ExperimentSpec s;
  c->mode = MP_MODE_NOPE;
  c->n = s.n;
  c->d = s.d;
  c->alpha = s.alpha;
  c->layers = s.layers;
  c->trials = s.trials;
  c->seed = s.master_seed;
  c->norm = MP_NORM_L2;
  c->scale = MP_SCALE_ONE;
  c->residual = 1;
  c->theta = 0.0;
  c->workers = 0;
}

mp_status mp_run_experiment(const mp_experiment_config* config, mp_stats** out) {
  MP_REQUIRE(config);
  MP_REQUIRE(out);
  return guarded([&] {
    maskpos::experiments::RunOptions opts;
    opts.workers = config->workers;
    *out = new mp_stats{maskpos::experiments::run_experiment(to_spec(*config), opts)};
  });
}

void mp_stats_free(mp_stats* stats) { delete stats; }

size_t mp_stats_layers(const mp_stats* stats) { return stats ? stats->s.layers.size() : 0; }
size_t mp_stats_trials(const mp_stats* stats) { return stats ? stats->s.trials : 0; }

mp_status mp_stats_matrix(const mp_stats* stats, size_t layer, mp_quantity quantity, mp_statistic statistic,
                          mp_matrix** out) {
  MP_REQUIRE(stats);
  MP_REQUIRE(out);
  if (layer < 1 || layer > stats->s.layers.size()) return fail(MP_ERR_ARGUMENT, "layer out of range");
  if (quantity < MP_Q_ATTENTION || quantity > MP_Q_SCORES_DN) return fail(MP_ERR_ARGUMENT, "unknown quantity");
  return guarded([&] {
    const auto& ms = stats->s.layers[layer - 1].get(static_cast<maskpos::experiments::Quantity>(quantity));
    *out = wrap(statistic == MP_STAT_STDERR ? ms.std_error : ms.mean);
  });
}

mp_status mp_simulate_to_dir(const mp_experiment_config* config, const char* out_dir, int force) {
  MP_REQUIRE(config);
  MP_REQUIRE(out_dir);
  return guarded([&] { maskpos::io::simulate_to_dir(to_spec(*config), out_dir, force != 0, config->workers); });
}

mp_status mp_diagonal_normalize(const mp_matrix* a, int masked, mp_matrix** out) {
  MP_REQUIRE(a);
  MP_REQUIRE(out);
  return guarded([&] { *out = wrap(maskpos::experiments::diagonal_normalize(a->m, masked != 0)); });
}

mp_status mp_quantile_clip(const mp_matrix* a, int masked, double q_low, double q_high, mp_matrix** out) {
  MP_REQUIRE(a);
  MP_REQUIRE(out);
  return guarded([&] { *out = wrap(maskpos::experiments::quantile_clip(a->m, masked != 0, q_low, q_high)); });
}

mp_status mp_compare(const mp_matrix* mean, const mp_matrix* oracle, const mp_matrix* std_error, double abs_floor,
                     mp_comparison* out) {
  MP_REQUIRE(mean);
  MP_REQUIRE(oracle);
  MP_REQUIRE(out);
  return guarded([&] {
    const maskpos::Matrix none;
    const auto rep = maskpos::experiments::compare_to_analytic(mean->m, std_error ? std_error->m : none, oracle->m,
                                                               abs_floor);
    out->max_abs_error = rep.max_abs_error;
    out->mean_abs_error = rep.mean_abs_error;
    out->worst_row = rep.worst_cell.first;
    out->worst_col = rep.worst_cell.second;
    out->failed_cells = rep.failed_cells;
    out->total_cells = mean->m.rows() * mean->m.cols();
    out->abs_floor = rep.abs_floor;
  });
}

mp_status mp_render_pgm(const mp_matrix* m, double q_low, double q_high, int causal, const char* path) {
  MP_REQUIRE(m);
  MP_REQUIRE(path);
  return guarded([&] { maskpos::io::write_pgm(m->m, path, q_low, q_high, causal != 0); });
}

mp_status mp_verify(size_t trials, unsigned workers, mp_line_callback callback, void* user, int* all_pass) {
  MP_REQUIRE(all_pass);
  return guarded([&] {
    maskpos::acceptance::Options opts;
    if (trials) opts.trials = trials;
    opts.workers = workers;
    const auto results = maskpos::acceptance::run_all(opts, [&](const maskpos::acceptance::CriterionResult& r) {
      if (callback) callback(maskpos::acceptance::format_line(r).c_str(), user);
    });
    bool ok = true;
    for (const auto& r : results) ok = ok && r.passed;
    *all_pass = ok ? 1 : 0;
  });
}

}  // extern "C"
