// maskpos command-line front end. Talks to the library only through its C API.

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "maskpos/maskpos.h"

namespace {

enum Exit : int { kOk = 0, kCompareFailed = 1, kUsage = 2, kIo = 3 };

int exit_for(mp_status status) {
  if (status == MP_OK) return kOk;
  std::cerr << "error: " << mp_last_error() << "\n";
  return status == MP_ERR_IO || status == MP_ERR_INTERNAL ? kIo : kUsage;
}

struct MatrixDeleter {
  void operator()(mp_matrix* m) const { mp_matrix_free(m); }
};
using MatrixPtr = std::unique_ptr<mp_matrix, MatrixDeleter>;

std::optional<MatrixPtr> load(const std::string& path, int& code) {
  mp_matrix* raw = nullptr;
  if (mp_status s = mp_matrix_read_csv(path.c_str(), &raw); s != MP_OK) {
    code = exit_for(s);
    return std::nullopt;
  }
  return MatrixPtr(raw);
}

struct SimulateArgs {
  std::string mode = "nope";
  std::size_t n = 16;
  std::size_t d = 64;
  double alpha = 0.0;
  std::size_t layers = 4;
  std::size_t trials = 20000;
  std::uint64_t seed = 0;
  std::string norm = "l2";
  std::string scale = "one";
  std::string residual = "on";
  std::optional<double> theta;
  std::string out;
  bool force = false;
  unsigned threads = 0;
};

int run_simulate(const SimulateArgs& a) {
  static const std::map<std::string, mp_mode> modes{
      {"nope", MP_MODE_NOPE}, {"rope-decoder", MP_MODE_ROPE_DECODER}, {"rope-encoder", MP_MODE_ROPE_ENCODER}};
  static const std::map<std::string, mp_norm> norms{{"l2", MP_NORM_L2}, {"layernorm", MP_NORM_LAYERNORM}};
  static const std::map<std::string, mp_scale> scales{
      {"one", MP_SCALE_ONE}, {"sqrt-d", MP_SCALE_SQRT_D}, {"d", MP_SCALE_D}};

  mp_experiment_config cfg;
  mp_experiment_config_default(&cfg);
  cfg.mode = modes.at(a.mode);
  cfg.n = a.n;
  cfg.d = a.d;
  cfg.alpha = a.alpha;
  cfg.layers = a.layers;
  cfg.trials = a.trials;
  cfg.seed = a.seed;
  cfg.norm = norms.at(a.norm);
  cfg.scale = scales.at(a.scale);
  cfg.residual = a.residual == "on";
  cfg.workers = a.threads;
  if (a.theta) {
    if (a.mode == "nope") {
      std::cerr << "error: --theta requires a rope mode\n";
      return kUsage;
    }
    if (!(*a.theta > 0.0)) {
      std::cerr << "error: --theta must be positive\n";
      return kUsage;
    }
    cfg.theta = *a.theta;
  }
  if (int code = exit_for(mp_simulate_to_dir(&cfg, a.out.c_str(), a.force)); code != kOk) return code;
  std::cout << "wrote results for " << a.layers << " layer(s), " << a.trials << " trial(s) to " << a.out << "\n";
  return kOk;
}

int run_analytic(std::size_t n, double alpha, const std::string& residual, const std::string& out) {
  mp_matrix* raw = nullptr;
  if (int code = exit_for(mp_analytic_gram(n, alpha, residual == "on", &raw)); code != kOk) return code;
  MatrixPtr gram(raw);
  return exit_for(mp_matrix_write_csv(gram.get(), out.c_str()));
}

int run_compare(const std::string& sim, const std::string& oracle, const std::string& stderr_path,
                double abs_floor) {
  int code = kOk;
  auto mean = load(sim, code);
  if (!mean) return code;
  auto ref = load(oracle, code);
  if (!ref) return code;
  std::optional<MatrixPtr> se;
  if (!stderr_path.empty()) {
    se = load(stderr_path, code);
    if (!se) return code;
  }
  mp_comparison rep{};
  if (int c = exit_for(mp_compare(mean->get(), ref->get(), se ? se->get() : nullptr, abs_floor, &rep)); c != kOk)
    return c;
  std::printf("cells: %zu\nfailed_cells: %zu\nmax_abs_error: %.17g\nmean_abs_error: %.17g\nworst_cell: %zu,%zu\n"
              "abs_floor: %g\nresult: %s\n",
              rep.total_cells, rep.failed_cells, rep.max_abs_error, rep.mean_abs_error, rep.worst_row,
              rep.worst_col, rep.abs_floor, rep.failed_cells == 0 ? "PASS" : "FAIL");
  return rep.failed_cells == 0 ? kOk : kCompareFailed;
}

int run_render(const std::string& in, const std::string& out, double q_low, double q_high, bool causal) {
  if (!(q_low >= 0.0 && q_low < q_high && q_high <= 1.0)) {
    std::cerr << "error: need 0 <= --q-low < --q-high <= 1\n";
    return kUsage;
  }
  int code = kOk;
  auto m = load(in, code);
  if (!m) return code;
  return exit_for(mp_render_pgm(m->get(), q_low, q_high, causal, out.c_str()));
}

void print_line(const char* line, void*) {
  std::cout << line << "\n";
  std::cout.flush();
}

int run_verify(std::size_t trials, unsigned threads) {
  int all_pass = 0;
  if (int code = exit_for(mp_verify(trials, threads, print_line, nullptr, &all_pass)); code != kOk) return code;
  std::cout << (all_pass ? "all criteria passed\n" : "some criteria FAILED\n");
  return all_pass ? kOk : kCompareFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskpos: positional structure induced by the causal attention mask"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mp_version()));

  const auto on_off = CLI::IsMember({"on", "off"});

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo run of the parameter-free layer stack");
  simulate->add_option("--mode", sim.mode, "nope | rope-decoder | rope-encoder")
      ->check(CLI::IsMember({"nope", "rope-decoder", "rope-encoder"}))
      ->capture_default_str();
  simulate->add_option("--n", sim.n, "sequence length")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--d", sim.d, "hidden size")->check(CLI::Range(2, 1 << 20))->capture_default_str();
  simulate->add_option("--alpha", sim.alpha, "expected inner product of distinct inputs, [0, 1)")
      ->capture_default_str();
  simulate->add_option("--layers", sim.layers, "number of layers")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--trials", sim.trials, "Monte Carlo trials")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--seed", sim.seed, "master seed")->capture_default_str();
  simulate->add_option("--norm", sim.norm, "l2 | layernorm")->check(CLI::IsMember({"l2", "layernorm"}))->capture_default_str();
  simulate->add_option("--scale", sim.scale, "score divisor: one | sqrt-d | d")
      ->check(CLI::IsMember({"one", "sqrt-d", "d"}))
      ->capture_default_str();
  simulate->add_option("--residual", sim.residual, "on | off")->check(on_off)->capture_default_str();
  simulate->add_option("--theta", sim.theta, "RoPE base (rope modes; default 10000)");
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_flag("--force", sim.force, "overwrite existing result files");
  simulate->add_option("--threads", sim.threads, "worker threads (0 = all cores); results do not depend on it");

  std::size_t an_n = 16;
  double an_alpha = 0.0;
  std::string an_residual = "on";
  std::string an_out;
  auto* analytic = app.add_subcommand("analytic", "write the closed-form layer-2 Gram as CSV");
  analytic->add_option("--n", an_n, "sequence length")->check(CLI::PositiveNumber)->capture_default_str();
  analytic->add_option("--alpha", an_alpha, "expected inner product, [0, 1)")->capture_default_str();
  analytic->add_option("--residual", an_residual, "on | off")->check(on_off)->capture_default_str();
  analytic->add_option("--out", an_out, "output CSV path")->required();

  std::string cmp_sim, cmp_oracle, cmp_stderr;
  double cmp_floor = 0.01;
  auto* compare = app.add_subcommand("compare", "compare a simulated mean CSV against an analytic CSV");
  compare->add_option("--sim", cmp_sim, "simulated mean CSV")->required();
  compare->add_option("--analytic", cmp_oracle, "analytic CSV")->required();
  compare->add_option("--stderr", cmp_stderr, "standard-error CSV (optional)");
  compare->add_option("--abs-floor", cmp_floor, "absolute tolerance floor")->capture_default_str();

  std::string rd_in, rd_out;
  double q_low = 0.0;
  double q_high = 1.0;
  bool causal = false;
  auto* render = app.add_subcommand("render", "render a matrix CSV as a binary PGM heatmap");
  render->add_option("--in", rd_in, "input CSV")->required();
  render->add_option("--out", rd_out, "output .pgm path")->required();
  render->add_option("--q-low", q_low, "lower clipping quantile")->capture_default_str();
  render->add_option("--q-high", q_high, "upper clipping quantile")->capture_default_str();
  render->add_flag("--causal", causal, "treat the upper triangle as masked");

  std::size_t vf_trials = 20000;
  unsigned vf_threads = 0;
  auto* verify = app.add_subcommand("verify", "run the acceptance suite");
  verify->add_option("--trials", vf_trials, "Monte Carlo budget per experiment")
      ->check(CLI::Range(std::size_t{2}, std::size_t{100000000}))
      ->capture_default_str();
  verify->add_option("--threads", vf_threads, "worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (*simulate) return run_simulate(sim);
  if (*analytic) return run_analytic(an_n, an_alpha, an_residual, an_out);
  if (*compare) return run_compare(cmp_sim, cmp_oracle, cmp_stderr, cmp_floor);
  if (*render) return run_render(rd_in, rd_out, q_low, q_high, causal);
  if (*verify) return run_verify(vf_trials, vf_threads);
  return kUsage;
}
