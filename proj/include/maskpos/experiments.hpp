#pragma once

// Monte Carlo harness over the parameter-free layer stack.
//
// Trials are split into fixed-size blocks. Each block accumulates streaming
// mean/M2 statistics in trial order; blocks are merged in block order. The
// partition does not depend on the worker count, so results are bit-identical
// for any number of threads.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "maskpos/analytic.hpp"
#include "maskpos/simulation.hpp"

namespace maskpos::experiments {

enum class Mode { nope, rope_decoder, rope_encoder };

inline constexpr double kDefaultTheta = 10000.0;

struct ExperimentSpec {
  std::size_t n = 16;
  std::size_t d = 64;
  double alpha = 0.0;
  std::size_t layers = 4;
  std::size_t trials = 20000;
  std::uint64_t master_seed = 0;
  Mode mode = Mode::nope;
  sim::Norm norm = sim::Norm::l2;
  sim::ScoreScale scale = sim::ScoreScale::one;
  bool residual = true;
  std::optional<double> theta;  // rope modes default to kDefaultTheta

  // Throws Error(config) on inconsistent settings (e.g. theta with mode nope).
  void validate() const;
  // Mask follows the mode (encoder -> none); RoPE only in rope modes.
  sim::LayerSpec layer_spec() const;
  bool masked() const noexcept { return mode != Mode::rope_encoder; }
};

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);
std::string to_string(sim::Norm norm);
sim::Norm parse_norm(const std::string& text);
std::string to_string(sim::ScoreScale scale);
sim::ScoreScale parse_scale(const std::string& text);

// Per-cell streaming mean and M2 (Welford), mergeable with Chan's pairwise update.
class RunningMatrix {
 public:
  RunningMatrix() = default;
  RunningMatrix(std::size_t rows, std::size_t cols) : mean_(rows, cols), m2_(rows, cols) {}

  void push(const Matrix& sample);
  void merge(const RunningMatrix& other);

  std::size_t count() const noexcept { return count_; }
  const Matrix& mean() const noexcept { return mean_; }
  // Standard error of the mean; all zero for a single sample.
  Matrix std_error() const;

 private:
  std::size_t count_ = 0;
  Matrix mean_;
  Matrix m2_;
};

struct MatrixStats {
  Matrix mean;
  Matrix std_error;
  std::size_t trials = 0;
};

enum class Quantity {
  attention,      // post-softmax weights
  scores,         // pre-softmax scores
  gram,           // cosine Gram of the normalized layer input
  attention_dn,   // attention, diagonal-normalized per trial
  scores_dn,      // scores, diagonal-normalized per trial
};
inline constexpr std::size_t kQuantityCount = 5;

struct LayerStats {
  MatrixStats attention;
  MatrixStats scores;
  MatrixStats gram;
  MatrixStats attention_dn;
  MatrixStats scores_dn;

  const MatrixStats& get(Quantity q) const;
};

// Per-trial average over a set of cells, tracked as a scalar so its standard
// error accounts for correlation between the cells.
struct RegionProbe {
  std::size_t layer = 1;  // 1-based
  Quantity quantity = Quantity::scores_dn;
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // 0-based (row, col)
};

struct ScalarStats {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;
};

struct AttentionStats {
  std::vector<LayerStats> layers;  // index 0 is layer 1
  std::vector<ScalarStats> probes;
  std::size_t trials = 0;
  bool masked = true;
};

struct RunOptions {
  unsigned workers = 0;  // 0 -> hardware concurrency
  std::vector<RegionProbe> probes;
};

// Deterministic per-trial seed from (master, trial).
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) noexcept;

// Input rows for one trial, at the scale the spec's normalization expects.
Matrix trial_inputs(const ExperimentSpec& spec, std::size_t trial);

AttentionStats run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

// Trial-averaged cosine Gram of the normalized second-layer inputs (mode nope only).
MatrixStats layer2_gram_stats(const ExperimentSpec& spec, unsigned workers = 0);

// Subtracts from each cell the mean of its query-key offset. Masked matrices
// only use offsets i - j >= 0; their upper triangle stays 0.
Matrix diagonal_normalize(const Matrix& a, bool masked);

// Nearest-rank quantiles over the valid cells; values outside [q_low, q_high]
// quantiles are clamped. Masked cells are left untouched.
Matrix quantile_clip(const Matrix& a, bool masked, double q_low, double q_high);
// Nearest-rank quantile of an unsorted sample: sorted[ceil(q N) - 1], q = 0 -> min.
double nearest_rank(std::vector<double> values, double q);

struct ComparisonReport {
  std::size_t layer = 0;
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;
  std::pair<std::size_t, std::size_t> worst_cell{0, 0};  // 1-based
  std::vector<std::vector<bool>> per_cell_pass;
  double abs_floor = 0.0;
  std::size_t failed_cells = 0;

  bool all_pass() const noexcept { return failed_cells == 0; }
};

// Cell passes iff |mean - oracle| <= max(abs_floor, 3 * stderr). An empty stderr means zeros.
ComparisonReport compare_to_analytic(const Matrix& mean, const Matrix& std_error,
                                     const Matrix& oracle, double abs_floor,
                                     std::size_t layer = 0);

}  // namespace maskpos::experiments
