#pragma once

// Parameter-free Transformer decoder layer: normalize, self-attend with Q = K = V = Y,
// optional causal mask, optional residual, optional RoPE on the query/key role.

#include <cstdint>
#include <optional>
#include <vector>

#include "maskpos/analytic.hpp"
#include "maskpos/matrix.hpp"

namespace maskpos::sim {

enum class Norm { l2, layernorm };
enum class ScoreScale { one, sqrt_d, d };
enum class MaskKind { causal, none };

struct LayerSpec {
  Norm norm = Norm::l2;
  ScoreScale scale = ScoreScale::one;
  bool residual = true;
  MaskKind mask = MaskKind::causal;
  std::optional<double> rope_theta;  // rotation base; unset disables RoPE
};

// n x n scores. When `masked`, entries above the diagonal are invalid and stored as 0.
struct ScoreMatrix {
  Matrix values;
  bool masked = false;
};

// Rows x_i = normalize(sqrt(alpha) u + sqrt(1 - alpha) z_i), u and z_i i.i.d. N(0, 1/d).
Matrix sample_inputs(std::size_t n, std::size_t d, analytic::Alpha alpha, std::uint64_t seed);

Matrix l2_normalize(const Matrix& x);
// Centers each row and rescales it to norm sqrt(d). No affine parameters.
Matrix layer_norm(const Matrix& x);
// Rotates pairs (2k, 2k+1) of row m (0-based) by m * theta^(-2k/d).
Matrix apply_rope(const Matrix& y, double theta);

double scale_divisor(ScoreScale scale, std::size_t d);

// Y_q Y_k^T / scale with masked cells zeroed when the spec is causal.
ScoreMatrix raw_scores(const Matrix& queries, const Matrix& keys, const LayerSpec& spec);
// Row softmax of raw scores; masked cells are exactly 0.
ScoreMatrix softmax_rows(const ScoreMatrix& scores);
// Normalized Y in, attention probabilities out. Applies RoPE itself when the spec sets it.
ScoreMatrix attention_scores(const Matrix& y, const LayerSpec& spec);

Matrix normalize(const Matrix& x, Norm norm);

struct LayerTrace {
  Matrix hidden;         // layer output X^(l)
  Matrix normalized;     // Y^(l), the normalized layer input
  ScoreMatrix scores;    // pre-softmax (post-RoPE, post-scale)
  ScoreMatrix attention; // post-softmax
};

LayerTrace decoder_layer(const Matrix& x, const LayerSpec& spec);

// Per-layer traces of a `layers`-deep stack; the hidden state threads through.
std::vector<LayerTrace> forward_trace(const Matrix& x0, const LayerSpec& spec, std::size_t layers);
// Attention matrices A^(1)..A^(layers).
std::vector<ScoreMatrix> forward(const Matrix& x0, const LayerSpec& spec, std::size_t layers);

// Cosine Gram of rows (Y Y^T with rows rescaled to unit norm).
Matrix cosine_gram(const Matrix& y);

}  // namespace maskpos::sim
