#pragma once

// Flow-matching primitives: straight interpolation paths between a noise
// endpoint x0 and a data endpoint x1, the conditional flow-matching loss, and
// fixed-step explicit Euler integration in either time direction.
//
// Batches are stored column-wise: a d x B matrix holds B samples of dimension d.

#include <cmath>
#include <concepts>
#include <cstddef>

#include "f3va/errors.hpp"
#include "f3va/linalg.hpp"
#include "f3va/rng.hpp"

namespace f3va::flow {

template <typename Scalar>
struct FlowSample {
  Vector<Scalar> x0;
  Vector<Scalar> x1;
  Scalar t{};
  Vector<Scalar> xt;
  Vector<Scalar> u_target;
};

template <typename Scalar>
FlowSample<Scalar> interpolate(const Vector<Scalar>& x0, const Vector<Scalar>& x1, Scalar t) {
  if (x0.size() != x1.size()) throw RejectedInput("interpolate: dimension mismatch");
  if (!(t >= Scalar(0) && t <= Scalar(1))) throw RejectedInput("interpolate: t outside [0,1]");
  FlowSample<Scalar> s{x0, x1, t, {}, {}};
  s.xt = (Scalar(1) - t) * x0 + t * x1;
  s.u_target = x1 - x0;
  return s;
}

struct IntegrationSpec {
  int steps = 16;
  double t_start = 0.0;
  double t_end = 1.0;

  static IntegrationSpec forward(int steps = 16) { return {steps, 0.0, 1.0}; }
  static IntegrationSpec backward(int steps = 16) { return {steps, 1.0, 0.0}; }

  void validate() const {
    if (steps < 1) throw RejectedInput("integration spec: steps must be >= 1");
    if (!(t_start >= 0.0 && t_start <= 1.0 && t_end >= 0.0 && t_end <= 1.0))
      throw RejectedInput("integration spec: times must lie in [0,1]");
    if (t_start == t_end) throw RejectedInput("integration spec: t_start == t_end");
  }
  double step_size() const { return (t_end - t_start) / steps; }
};

/// x <- x + h * field(x, t) for `spec.steps` uniform steps. A negative step
/// size (t_end < t_start) integrates backward in time.
template <typename Scalar, typename Field>
  requires std::invocable<Field&, const Matrix<Scalar>&, Scalar>
Matrix<Scalar> integrate(Field&& field, Matrix<Scalar> x, const IntegrationSpec& spec) {
  spec.validate();
  const double h = spec.step_size();
  for (int k = 0; k < spec.steps; ++k) {
    const auto t = static_cast<Scalar>(spec.t_start + k * h);
    Matrix<Scalar> v = field(static_cast<const Matrix<Scalar>&>(x), t);
    if (v.rows() != x.rows() || v.cols() != x.cols())
      throw RejectedInput("integrate: field output shape differs from state");
    if (!v.allFinite()) throw NumericalDivergence("integrate: non-finite field output", static_cast<std::size_t>(k));
    x.noalias() += static_cast<Scalar>(h) * v;
  }
  return x;
}

template <typename Scalar>
struct FlowBatch {
  Matrix<Scalar> x0;
  Matrix<Scalar> x1;
  Vector<Scalar> t;
  Matrix<Scalar> xt;
  Matrix<Scalar> u_target;

  Eigen::Index size() const { return x1.cols(); }
};

/// Draws x0 ~ N(0, I) and t ~ U[0, 1] per column of `x1`.
template <typename Scalar>
FlowBatch<Scalar> draw_flow_batch(const Matrix<Scalar>& x1, Rng& rng) {
  if (x1.cols() == 0) throw RejectedInput("cfm: empty batch");
  FlowBatch<Scalar> b;
  b.x1 = x1;
  b.x0.resize(x1.rows(), x1.cols());
  b.t.resize(x1.cols());
  for (Eigen::Index j = 0; j < x1.cols(); ++j) {
    b.t(j) = static_cast<Scalar>(rng.uniform());
    for (Eigen::Index i = 0; i < x1.rows(); ++i) b.x0(i, j) = static_cast<Scalar>(rng.normal());
  }
  b.xt = b.x0 * Eigen::DiagonalMatrix<Scalar, Eigen::Dynamic>((Vector<Scalar>::Ones(b.t.size()) - b.t)) +
         x1 * Eigen::DiagonalMatrix<Scalar, Eigen::Dynamic>(b.t);
  b.u_target = x1 - b.x0;
  return b;
}

/// A field that can be trained by regression: forward() records what
/// backward() needs; backward() accumulates parameter gradients.
template <typename F, typename Scalar>
concept TrainableField = requires(F f, const Matrix<Scalar>& x, const Vector<Scalar>& t) {
  { f.forward(x, t) } -> std::convertible_to<Matrix<Scalar>>;
  f.backward(x);
};

struct CfmResult {
  double loss = 0.0;
};

/// Mean over the batch of the per-dimension squared error between the field's
/// prediction at (xt, t) and the target flow x1 - x0. Gradients are pushed into
/// the field when `accumulate_gradients` is set.
template <typename Scalar, TrainableField<Scalar> Field>
CfmResult cfm_loss(Field& field, const FlowBatch<Scalar>& batch, bool accumulate_gradients = true) {
  if (batch.size() == 0) throw RejectedInput("cfm: empty batch");
  Matrix<Scalar> pred = field.forward(batch.xt, batch.t);
  if (pred.rows() != batch.u_target.rows() || pred.cols() != batch.u_target.cols())
    throw RejectedInput("cfm: field output dimension does not match data dimension");
  const Matrix<Scalar> diff = pred - batch.u_target;
  const double denom = static_cast<double>(diff.rows()) * static_cast<double>(diff.cols());
  CfmResult r;
  r.loss = diff.template cast<double>().squaredNorm() / denom;
  if (accumulate_gradients) field.backward(Matrix<Scalar>((Scalar(2) / static_cast<Scalar>(denom)) * diff));
  return r;
}

template <typename Scalar, TrainableField<Scalar> Field>
CfmResult cfm_loss(Field& field, const Matrix<Scalar>& x1, Rng& rng, bool accumulate_gradients = true) {
  return cfm_loss<Scalar>(field, draw_flow_batch<Scalar>(x1, rng), accumulate_gradients);
}

}  // namespace f3va::flow
