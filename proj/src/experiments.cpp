#include "maskpos/experiments.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

namespace maskpos::experiments {

namespace {

constexpr std::size_t kBlockTrials = 128;

struct ScalarRunning {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const ScalarRunning& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(count);
    const double nb = static_cast<double>(o.count);
    const double total = na + nb;
    const double delta = o.mean - mean;
    mean += delta * nb / total;
    m2 += o.m2 + delta * delta * na * nb / total;
    count += o.count;
  }

  ScalarStats finish() const {
    ScalarStats s{mean, 0.0, count};
    if (count > 1) s.std_error = std::sqrt(m2 / static_cast<double>(count - 1) / static_cast<double>(count));
    return s;
  }
};

// Accumulated state of a contiguous range of trials.
struct BlockState {
  std::vector<std::array<RunningMatrix, kQuantityCount>> layers;
  std::vector<ScalarRunning> probes;

  BlockState(std::size_t layer_count, std::size_t n, std::size_t probe_count)
      : layers(layer_count), probes(probe_count) {
    for (auto& per_layer : layers)
      for (auto& acc : per_layer) acc = RunningMatrix(n, n);
  }

  void merge(const BlockState& o) {
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (std::size_t q = 0; q < kQuantityCount; ++q) layers[l][q].merge(o.layers[l][q]);
    for (std::size_t p = 0; p < probes.size(); ++p) probes[p].merge(o.probes[p]);
  }
};

std::array<Matrix, kQuantityCount> trial_quantities(const sim::LayerTrace& t) {
  const bool masked = t.scores.masked;
  std::array<Matrix, kQuantityCount> q;
  q[static_cast<std::size_t>(Quantity::attention)] = t.attention.values;
  q[static_cast<std::size_t>(Quantity::scores)] = t.scores.values;
  q[static_cast<std::size_t>(Quantity::gram)] = sim::cosine_gram(t.normalized);
  q[static_cast<std::size_t>(Quantity::attention_dn)] = diagonal_normalize(t.attention.values, masked);
  q[static_cast<std::size_t>(Quantity::scores_dn)] = diagonal_normalize(t.scores.values, masked);
  return q;
}

void run_block(const ExperimentSpec& spec, const sim::LayerSpec& layer_spec,
               const std::vector<RegionProbe>& probes, std::size_t first, std::size_t last,
               BlockState& state) {
  for (std::size_t t = first; t < last; ++t) {
    const auto traces = sim::forward_trace(trial_inputs(spec, t), layer_spec, spec.layers);
    std::vector<std::array<Matrix, kQuantityCount>> per_layer;
    per_layer.reserve(traces.size());
    for (const auto& tr : traces) per_layer.push_back(trial_quantities(tr));

    for (std::size_t l = 0; l < per_layer.size(); ++l)
      for (std::size_t q = 0; q < kQuantityCount; ++q) state.layers[l][q].push(per_layer[l][q]);

    for (std::size_t p = 0; p < probes.size(); ++p) {
      const auto& probe = probes[p];
      const Matrix& m = per_layer[probe.layer - 1][static_cast<std::size_t>(probe.quantity)];
      double acc = 0.0;
      for (auto [r, c] : probe.cells) acc += m(r, c);
      state.probes[p].push(acc / static_cast<double>(probe.cells.size()));
    }
  }
}

MatrixStats finish(const RunningMatrix& acc) { return {acc.mean(), acc.std_error(), acc.count()}; }

}  // namespace

void ExperimentSpec::validate() const {
  if (n < 1) throw Error(ErrorKind::config, "n must be >= 1");
  if (d < 2) throw Error(ErrorKind::config, "d must be >= 2");
  if (layers < 1) throw Error(ErrorKind::config, "layers must be >= 1");
  if (trials < 1) throw Error(ErrorKind::config, "trials must be >= 1");
  analytic::Alpha{alpha};
  if (mode == Mode::nope && theta)
    throw Error(ErrorKind::config, "theta is only meaningful with a rope mode");
  if (mode != Mode::nope) {
    if (d % 2 != 0) throw Error(ErrorKind::config, "rope modes require an even d");
    if (theta && !(*theta > 0.0)) throw Error(ErrorKind::config, "theta must be > 0");
  }
}

sim::LayerSpec ExperimentSpec::layer_spec() const {
  sim::LayerSpec s;
  s.norm = norm;
  s.scale = scale;
  s.residual = residual;
  s.mask = masked() ? sim::MaskKind::causal : sim::MaskKind::none;
  if (mode != Mode::nope) s.rope_theta = theta.value_or(kDefaultTheta);
  return s;
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::nope: return "nope";
    case Mode::rope_decoder: return "rope-decoder";
    case Mode::rope_encoder: return "rope-encoder";
  }
  return "?";
}

Mode parse_mode(const std::string& text) {
  if (text == "nope") return Mode::nope;
  if (text == "rope-decoder") return Mode::rope_decoder;
  if (text == "rope-encoder") return Mode::rope_encoder;
  throw Error(ErrorKind::config, "unknown mode '" + text + "'");
}

std::string to_string(sim::Norm norm) { return norm == sim::Norm::l2 ? "l2" : "layernorm"; }

sim::Norm parse_norm(const std::string& text) {
  if (text == "l2") return sim::Norm::l2;
  if (text == "layernorm") return sim::Norm::layernorm;
  throw Error(ErrorKind::config, "unknown norm '" + text + "'");
}

std::string to_string(sim::ScoreScale scale) {
  switch (scale) {
    case sim::ScoreScale::one: return "one";
    case sim::ScoreScale::sqrt_d: return "sqrt-d";
    case sim::ScoreScale::d: return "d";
  }
  return "?";
}

sim::ScoreScale parse_scale(const std::string& text) {
  if (text == "one") return sim::ScoreScale::one;
  if (text == "sqrt-d") return sim::ScoreScale::sqrt_d;
  if (text == "d") return sim::ScoreScale::d;
  throw Error(ErrorKind::config, "unknown scale '" + text + "'");
}

void RunningMatrix::push(const Matrix& sample) {
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  auto mean = mean_.values();
  auto m2 = m2_.values();
  auto x = sample.values();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double delta = x[k] - mean[k];
    mean[k] += delta * inv;
    m2[k] += delta * (x[k] - mean[k]);
  }
}

void RunningMatrix::merge(const RunningMatrix& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double total = na + nb;
  auto mean = mean_.values();
  auto m2 = m2_.values();
  auto omean = other.mean_.values();
  auto om2 = other.m2_.values();
  for (std::size_t k = 0; k < mean.size(); ++k) {
    const double delta = omean[k] - mean[k];
    mean[k] += delta * nb / total;
    m2[k] += om2[k] + delta * delta * na * nb / total;
  }
  count_ += other.count_;
}

Matrix RunningMatrix::std_error() const {
  Matrix out(mean_.rows(), mean_.cols());
  if (count_ < 2) return out;
  const double nn = static_cast<double>(count_);
  auto dst = out.values();
  auto m2 = m2_.values();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = std::sqrt(std::max(m2[k], 0.0) / (nn - 1.0) / nn);
  return out;
}

const MatrixStats& LayerStats::get(Quantity q) const {
  switch (q) {
    case Quantity::attention: return attention;
    case Quantity::scores: return scores;
    case Quantity::gram: return gram;
    case Quantity::attention_dn: return attention_dn;
    case Quantity::scores_dn: return scores_dn;
  }
  return attention;
}

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) noexcept {
  // SplitMix64 output for stream position trial + 1.
  std::uint64_t z = master + (trial + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix trial_inputs(const ExperimentSpec& spec, std::size_t trial) {
  Matrix x = sim::sample_inputs(spec.n, spec.d, analytic::Alpha{spec.alpha},
                                trial_seed(spec.master_seed, trial));
  if (spec.norm == sim::Norm::layernorm) {
    const double s = std::sqrt(static_cast<double>(spec.d));
    for (auto& v : x.values()) v *= s;
  }
  return x;
}

AttentionStats run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  spec.validate();
  for (const auto& p : options.probes) {
    if (p.layer < 1 || p.layer > spec.layers) throw Error(ErrorKind::config, "probe layer out of range");
    if (p.cells.empty()) throw Error(ErrorKind::config, "probe has no cells");
    for (auto [r, c] : p.cells)
      if (r >= spec.n || c >= spec.n) throw Error(ErrorKind::config, "probe cell out of range");
  }

  const sim::LayerSpec layer_spec = spec.layer_spec();
  const std::size_t block_count = (spec.trials + kBlockTrials - 1) / kBlockTrials;
  std::vector<BlockState> blocks(block_count, BlockState(spec.layers, spec.n, options.probes.size()));

  unsigned workers = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, block_count));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= block_count || failed.load()) return;
      try {
        const std::size_t first = b * kBlockTrials;
        const std::size_t last = std::min(spec.trials, first + kBlockTrials);
        run_block(spec, layer_spec, options.probes, first, last, blocks[b]);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
        return;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  BlockState total = std::move(blocks.front());
  for (std::size_t b = 1; b < block_count; ++b) total.merge(blocks[b]);

  AttentionStats out;
  out.trials = spec.trials;
  out.masked = spec.masked();
  for (const auto& acc : total.layers) {
    LayerStats ls;
    ls.attention = finish(acc[static_cast<std::size_t>(Quantity::attention)]);
    ls.scores = finish(acc[static_cast<std::size_t>(Quantity::scores)]);
    ls.gram = finish(acc[static_cast<std::size_t>(Quantity::gram)]);
    ls.attention_dn = finish(acc[static_cast<std::size_t>(Quantity::attention_dn)]);
    ls.scores_dn = finish(acc[static_cast<std::size_t>(Quantity::scores_dn)]);
    out.layers.push_back(std::move(ls));
  }
  for (const auto& p : total.probes) out.probes.push_back(p.finish());
  return out;
}

MatrixStats layer2_gram_stats(const ExperimentSpec& spec, unsigned workers) {
  if (spec.mode != Mode::nope) throw Error(ErrorKind::config, "layer2_gram_stats requires mode nope");
  if (spec.layers < 2) throw Error(ErrorKind::config, "layer2_gram_stats requires at least 2 layers");
  RunOptions opts;
  opts.workers = workers;
  auto stats = run_experiment(spec, opts);
  return stats.layers[1].gram;
}

Matrix diagonal_normalize(const Matrix& a, bool masked) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::config, "diagonal_normalize requires a square matrix");
  const std::size_t n = a.rows();
  Matrix out = a;
  if (n == 0) return out;
  const long long span = static_cast<long long>(n) - 1;
  for (long long offset = masked ? 0 : -span; offset <= span; ++offset) {
    // Cells (i, i - offset).
    const std::size_t first = offset >= 0 ? static_cast<std::size_t>(offset) : 0;
    const std::size_t last = offset >= 0 ? n : n - static_cast<std::size_t>(-offset);
    double acc = 0.0;
    for (std::size_t i = first; i < last; ++i) acc += a(i, static_cast<std::size_t>(static_cast<long long>(i) - offset));
    const double mean = acc / static_cast<double>(last - first);
    for (std::size_t i = first; i < last; ++i)
      out(i, static_cast<std::size_t>(static_cast<long long>(i) - offset)) -= mean;
  }
  return out;
}

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::config, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double count = static_cast<double>(values.size());
  // Guard q * N against representation error (0.99 * 100 must give rank 99).
  const double rank = std::ceil(q * count - 1e-9);
  const std::size_t idx = rank <= 1.0 ? 0 : std::min(values.size() - 1, static_cast<std::size_t>(rank) - 1);
  return values[idx];
}

Matrix quantile_clip(const Matrix& a, bool masked, double q_low, double q_high) {
  if (!(q_low >= 0.0 && q_low < q_high && q_high <= 1.0))
    throw Error(ErrorKind::config, "quantile_clip requires 0 <= q_low < q_high <= 1");
  auto valid = [&](std::size_t i, std::size_t j) { return !masked || j <= i; };
  std::vector<double> cells;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (valid(i, j)) cells.push_back(a(i, j));
  if (cells.empty()) return a;
  const double lo = nearest_rank(cells, q_low);
  const double hi = nearest_rank(cells, q_high);
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (valid(i, j)) out(i, j) = std::clamp(a(i, j), lo, hi);
  return out;
}

ComparisonReport compare_to_analytic(const Matrix& mean, const Matrix& std_error, const Matrix& oracle,
                                     double abs_floor, std::size_t layer) {
  if (mean.rows() != oracle.rows() || mean.cols() != oracle.cols())
    throw Error(ErrorKind::config, "compare: dimension mismatch between simulation and oracle");
  const bool have_se = !std_error.empty();
  if (have_se && (std_error.rows() != mean.rows() || std_error.cols() != mean.cols()))
    throw Error(ErrorKind::config, "compare: dimension mismatch between simulation and stderr");

  ComparisonReport rep;
  rep.layer = layer;
  rep.abs_floor = abs_floor;
  rep.per_cell_pass.assign(mean.rows(), std::vector<bool>(mean.cols(), true));
  double total = 0.0;
  for (std::size_t i = 0; i < mean.rows(); ++i) {
    for (std::size_t j = 0; j < mean.cols(); ++j) {
      const double err = std::abs(mean(i, j) - oracle(i, j));
      const double tol = std::max(abs_floor, have_se ? 3.0 * std_error(i, j) : 0.0);
      total += err;
      if (err > rep.max_abs_error || (i == 0 && j == 0)) {
        rep.max_abs_error = err;
        rep.worst_cell = {i + 1, j + 1};
      }
      if (!(err <= tol)) {
        rep.per_cell_pass[i][j] = false;
        ++rep.failed_cells;
      }
    }
  }
  const std::size_t cells = mean.rows() * mean.cols();
  rep.mean_abs_error = cells ? total / static_cast<double>(cells) : 0.0;
  return rep;
}

}  // namespace maskpos::experiments
