#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "f3va/linalg.hpp"
#include "f3va/rng.hpp"

namespace f3va::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
using ParameterRefs = std::vector<Parameter<Scalar>*>;

template <typename Scalar>
void zero_grad(const ParameterRefs<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

enum class Activation { Tanh, Identity };

template <typename Scalar>
Matrix<Scalar> activate(const Matrix<Scalar>& z, Activation a) {
  return a == Activation::Tanh ? Matrix<Scalar>(z.array().tanh()) : z;
}

/// d act / dz expressed through the activation output g.
template <typename Scalar>
Matrix<Scalar> activation_slope(const Matrix<Scalar>& g, Activation a) {
  if (a == Activation::Identity) return Matrix<Scalar>::Ones(g.rows(), g.cols());
  return (Scalar(1) - g.array().square()).matrix();
}

/// y = W x + b, batched over columns.
template <typename Scalar>
struct Linear {
  Parameter<Scalar> weight;
  Parameter<Scalar> bias;  // empty (0 x 0) when the layer has no bias
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, bool with_bias = true) : has_bias(with_bias) {
    // U(-1/sqrt(in), 1/sqrt(in)), the usual default for dense layers.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix<Scalar> w(out, in);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
    weight = Parameter<Scalar>(name + ".weight", std::move(w));
    if (has_bias) {
      Matrix<Scalar> b(out, 1);
      for (Eigen::Index i = 0; i < out; ++i) b(i, 0) = static_cast<Scalar>(rng.uniform(-bound, bound));
      bias = Parameter<Scalar>(name + ".bias", std::move(b));
    }
  }

  static Linear zeros(const std::string& name, int in, int out) {
    Linear l;
    l.weight = Parameter<Scalar>(name + ".weight", Matrix<Scalar>::Zero(out, in));
    l.bias = Parameter<Scalar>(name + ".bias", Matrix<Scalar>::Zero(out, 1));
    return l;
  }

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) const {
    Matrix<Scalar> y = weight.value * x;
    if (has_bias) y.colwise() += bias.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients for input `x`; returns dL/dx.
  Matrix<Scalar> backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
    weight.grad.noalias() += dy * x.transpose();
    if (has_bias) bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }

  void collect(ParameterRefs<Scalar>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }
};

}  // namespace f3va::nn
