#pragma once

#include <cmath>

#include "f3va/errors.hpp"
#include "f3va/linalg.hpp"

namespace f3va::nn {

/// Sinusoidal embedding: interleaved (sin(t*w_k), cos(t*w_k)) with w_k
/// log-spaced from 1 to 1e4 over dim/2 frequencies.
template <typename Scalar = double>
Vector<Scalar> time_embed(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw RejectedInput("time_embed: dim must be even and >= 2");
  const int n = dim / 2;
  Vector<Scalar> e(dim);
  for (int k = 0; k < n; ++k) {
    const double w = n == 1 ? 1.0 : std::pow(10.0, 4.0 * k / (n - 1));
    e(2 * k) = static_cast<Scalar>(std::sin(t * w));
    e(2 * k + 1) = static_cast<Scalar>(std::cos(t * w));
  }
  return e;
}

template <typename Scalar>
Matrix<Scalar> time_embed_batch(const Vector<Scalar>& t, int dim) {
  Matrix<Scalar> out(dim, t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j) out.col(j) = time_embed<Scalar>(static_cast<double>(t(j)), dim);
  return out;
}

}  // namespace f3va::nn
