#include "maskpos/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace maskpos::sim {

Matrix sample_inputs(std::size_t n, std::size_t d, analytic::Alpha alpha, std::uint64_t seed) {
  if (n < 1 || d < 2) throw Error(ErrorKind::config, "sample_inputs requires n >= 1 and d >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d)));

  std::vector<double> shared(d);
  for (auto& v : shared) v = gauss(rng);

  const double ws = std::sqrt(alpha.value());
  const double wn = std::sqrt(1.0 - alpha.value());
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.row(i);
    for (std::size_t k = 0; k < d; ++k) r[k] = ws * shared[k] + wn * gauss(rng);
  }
  return l2_normalize(x);
}

Matrix l2_normalize(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double len = norm(r);
    if (!(len > 0.0) || !std::isfinite(len))
      throw Error(ErrorKind::degenerate, "l2_normalize: row " + std::to_string(i + 1) + " has zero norm");
    for (auto& v : r) v /= len;
  }
  return out;
}

Matrix layer_norm(const Matrix& x) {
  Matrix out = x;
  const double target = std::sqrt(static_cast<double>(x.cols()));
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    for (auto& v : r) v -= mean;
    const double len = norm(r);
    if (!(len > 0.0) || !std::isfinite(len))
      throw Error(ErrorKind::degenerate, "layer_norm: row " + std::to_string(i + 1) + " has zero variance");
    for (auto& v : r) v *= target / len;
  }
  return out;
}

Matrix apply_rope(const Matrix& y, double theta) {
  const std::size_t d = y.cols();
  if (d % 2 != 0) throw Error(ErrorKind::config, "apply_rope requires an even hidden size");
  if (!(theta > 0.0)) throw Error(ErrorKind::config, "apply_rope requires theta > 0");

  std::vector<double> freq(d / 2);
  for (std::size_t k = 0; k < d / 2; ++k)
    freq[k] = std::pow(theta, -2.0 * static_cast<double>(k) / static_cast<double>(d));

  Matrix out = y;
  for (std::size_t m = 1; m < y.rows(); ++m) {
    auto r = out.row(m);
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double angle = static_cast<double>(m) * freq[k];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double a = r[2 * k];
      const double b = r[2 * k + 1];
      r[2 * k] = a * c - b * s;
      r[2 * k + 1] = a * s + b * c;
    }
  }
  return out;
}

double scale_divisor(ScoreScale scale, std::size_t d) {
  switch (scale) {
    case ScoreScale::one: return 1.0;
    case ScoreScale::sqrt_d: return std::sqrt(static_cast<double>(d));
    case ScoreScale::d: return static_cast<double>(d);
  }
  return 1.0;
}

ScoreMatrix raw_scores(const Matrix& queries, const Matrix& keys, const LayerSpec& spec) {
  ScoreMatrix out{gram(queries, keys), spec.mask == MaskKind::causal};
  const double div = scale_divisor(spec.scale, queries.cols());
  const std::size_t n = out.values.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.values(i, j) = (out.masked && j > i) ? 0.0 : out.values(i, j) / div;
  return out;
}

ScoreMatrix softmax_rows(const ScoreMatrix& scores) {
  ScoreMatrix out = scores;
  const std::size_t n = out.values.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t valid = out.masked ? i + 1 : out.values.cols();
    auto r = out.values.row(i);
    const double peak = *std::max_element(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(valid));
    double total = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
      r[j] = std::exp(r[j] - peak);
      total += r[j];
    }
    for (std::size_t j = 0; j < valid; ++j) r[j] /= total;
    for (std::size_t j = valid; j < r.size(); ++j) r[j] = 0.0;
  }
  return out;
}

namespace {

ScoreMatrix layer_scores(const Matrix& y, const LayerSpec& spec) {
  if (spec.rope_theta) {
    const Matrix rotated = apply_rope(y, *spec.rope_theta);
    return raw_scores(rotated, rotated, spec);
  }
  return raw_scores(y, y, spec);
}

}  // namespace

ScoreMatrix attention_scores(const Matrix& y, const LayerSpec& spec) {
  return softmax_rows(layer_scores(y, spec));
}

Matrix normalize(const Matrix& x, Norm kind) {
  return kind == Norm::l2 ? l2_normalize(x) : layer_norm(x);
}

LayerTrace decoder_layer(const Matrix& x, const LayerSpec& spec) {
  LayerTrace t;
  t.normalized = normalize(x, spec.norm);
  t.scores = layer_scores(t.normalized, spec);
  t.attention = softmax_rows(t.scores);
  t.hidden = matmul(t.attention.values, t.normalized);
  if (spec.residual) {
    auto h = t.hidden.values();
    auto in = x.values();
    for (std::size_t k = 0; k < h.size(); ++k) h[k] += in[k];
  }
  return t;
}

std::vector<LayerTrace> forward_trace(const Matrix& x0, const LayerSpec& spec, std::size_t layers) {
  if (layers < 1) throw Error(ErrorKind::config, "forward requires at least one layer");
  std::vector<LayerTrace> traces;
  traces.reserve(layers);
  const Matrix* x = &x0;
  for (std::size_t l = 0; l < layers; ++l) {
    traces.push_back(decoder_layer(*x, spec));
    x = &traces.back().hidden;
  }
  return traces;
}

std::vector<ScoreMatrix> forward(const Matrix& x0, const LayerSpec& spec, std::size_t layers) {
  std::vector<ScoreMatrix> out;
  for (auto& t : forward_trace(x0, spec, layers)) out.push_back(std::move(t.attention));
  return out;
}

Matrix cosine_gram(const Matrix& y) {
  const Matrix unit = l2_normalize(y);
  return gram(unit, unit);
}

}  // namespace maskpos::sim
