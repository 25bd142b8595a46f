#pragma once

// Closed-form second-layer geometry of a parameter-free causal Transformer.
//
// Inputs are unit vectors whose pairwise inner products all equal alpha.
// One layer of f(X) = Softmax(Causal(Y Y^T)) Y + X with Y = L2Norm(X) yields
// first-layer outputs whose cross inner product depends only on the later
// position (cross_inner) and whose norm is output_norm. The normalized
// second-layer Gram is their ratio. The *_nores variants drop the residual.
//
// All positions are 1-based.

#include <cstddef>

#include "maskpos/matrix.hpp"

namespace maskpos::analytic {

// Expected pairwise inner product of distinct inputs, 0 <= alpha < 1.
class Alpha {
 public:
  explicit Alpha(double value);
  double value() const noexcept { return value_; }

 private:
  double value_;
};

// 1-based token position.
class PositionIndex {
 public:
  explicit PositionIndex(long long value);
  std::size_t value() const noexcept { return value_; }

 private:
  std::size_t value_;
};

// First-layer causal softmax weight of key j for query i. Masked keys (j > i) give 0.
double softmax_weight(PositionIndex i, PositionIndex j, Alpha alpha);

// <x_i, x_j> after one residual layer, for any j < i. Requires i >= 2.
double cross_inner(PositionIndex i, Alpha alpha);

// ||x_i|| after one residual layer. Strictly positive.
double output_norm(PositionIndex i, Alpha alpha);

// Normalized second-layer inner product <y_i, y_j>; 1 on the diagonal.
double layer2_inner(PositionIndex i, PositionIndex j, Alpha alpha);

double cross_inner_nores(PositionIndex i, Alpha alpha);
double output_norm_nores(PositionIndex i, Alpha alpha);
double layer2_inner_nores(PositionIndex i, PositionIndex j, Alpha alpha);

// n x n matrix of layer2_inner (or its no-residual analogue). Row/column k holds position k+1.
Matrix analytic_gram(std::size_t n, Alpha alpha, bool residual);

// True iff the output norm is strictly decreasing on positions 1..n_max.
bool check_norm_monotone(Alpha alpha, std::size_t n_max, bool residual);

}  // namespace maskpos::analytic
