#include "maskpos/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace maskpos::analytic {

namespace {

constexpr double kE = std::numbers::e;

// Softmax denominator of query row i: e + (i-1) e^alpha.
double row_partition(double i, double ea) { return kE + (i - 1.0) * ea; }

}  // namespace

Alpha::Alpha(double value) : value_(value) {
  if (!(value >= 0.0 && value < 1.0))
    throw Error(ErrorKind::domain, "alpha must satisfy 0 <= alpha < 1, got " + std::to_string(value));
}

PositionIndex::PositionIndex(long long value) : value_(0) {
  if (value < 1) throw Error(ErrorKind::domain, "position index is 1-based, got " + std::to_string(value));
  value_ = static_cast<std::size_t>(value);
}

double softmax_weight(PositionIndex i, PositionIndex j, Alpha alpha) {
  if (j.value() > i.value()) return 0.0;
  const double ea = std::exp(alpha.value());
  const double numer = (i.value() == j.value()) ? kE : ea;
  return numer / row_partition(static_cast<double>(i.value()), ea);
}

double cross_inner(PositionIndex i, Alpha alpha) {
  if (i.value() < 2) throw Error(ErrorKind::domain, "cross_inner requires i >= 2");
  const double a = alpha.value();
  const double ea = std::exp(a);
  const double fi = static_cast<double>(i.value());
  return 2.0 * (2.0 * a * kE + ea * (1.0 + a * (2.0 * fi - 3.0))) / row_partition(fi, ea);
}

double output_norm(PositionIndex i, Alpha alpha) {
  const double a = alpha.value();
  const double ea = std::exp(a);
  const double m = static_cast<double>(i.value()) - 1.0;  // number of earlier positions
  const double self = 2.0 * kE + m * ea;
  const double numer = self * self + 2.0 * self * ea * a * m + ea * ea * m * (1.0 + (m - 1.0) * a);
  const double denom = row_partition(m + 1.0, ea);
  return std::sqrt(numer) / denom;
}

double layer2_inner(PositionIndex i, PositionIndex j, Alpha alpha) {
  if (i.value() == j.value()) return 1.0;
  const PositionIndex later{static_cast<long long>(std::max(i.value(), j.value()))};
  return cross_inner(later, alpha) / (output_norm(i, alpha) * output_norm(j, alpha));
}

double cross_inner_nores(PositionIndex i, Alpha alpha) {
  if (i.value() < 2) throw Error(ErrorKind::domain, "cross_inner_nores requires i >= 2");
  const double a = alpha.value();
  const double ea = std::exp(a);
  const double fi = static_cast<double>(i.value());
  return (kE * a + ea * (1.0 + a * (fi - 2.0))) / row_partition(fi, ea);
}

double output_norm_nores(PositionIndex i, Alpha alpha) {
  const double a = alpha.value();
  const double ea = std::exp(a);
  const double m = static_cast<double>(i.value()) - 1.0;
  const double numer = kE * kE + 2.0 * kE * ea * a * m + ea * ea * m * (1.0 + a * (m - 1.0));
  return std::sqrt(numer) / row_partition(m + 1.0, ea);
}

double layer2_inner_nores(PositionIndex i, PositionIndex j, Alpha alpha) {
  if (i.value() == j.value()) return 1.0;
  const PositionIndex later{static_cast<long long>(std::max(i.value(), j.value()))};
  return cross_inner_nores(later, alpha) / (output_norm_nores(i, alpha) * output_norm_nores(j, alpha));
}

Matrix analytic_gram(std::size_t n, Alpha alpha, bool residual) {
  if (n < 1) throw Error(ErrorKind::domain, "analytic_gram requires n >= 1");
  std::vector<double> norms(n);
  std::vector<double> cross(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) {
    const PositionIndex p{static_cast<long long>(k)};
    norms[k - 1] = residual ? output_norm(p, alpha) : output_norm_nores(p, alpha);
    if (k >= 2) cross[k] = residual ? cross_inner(p, alpha) : cross_inner_nores(p, alpha);
  }
  Matrix out(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    out(r, r) = 1.0;
    for (std::size_t c = 0; c < r; ++c) {
      const double v = cross[r + 1] / (norms[r] * norms[c]);
      out(r, c) = v;
      out(c, r) = v;
    }
  }
  return out;
}

bool check_norm_monotone(Alpha alpha, std::size_t n_max, bool residual) {
  if (n_max < 2) throw Error(ErrorKind::domain, "check_norm_monotone requires n_max >= 2");
  auto h = [&](std::size_t k) {
    const PositionIndex p{static_cast<long long>(k)};
    return residual ? output_norm(p, alpha) : output_norm_nores(p, alpha);
  };
  double prev = h(1);
  for (std::size_t k = 2; k <= n_max; ++k) {
    const double cur = h(k);
    if (!(cur < prev)) return false;
    prev = cur;
  }
  return true;
}

}  // namespace maskpos::analytic
