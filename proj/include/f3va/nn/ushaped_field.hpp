#pragma once

#include <optional>
#include <string>
#include <vector>

#include "f3va/errors.hpp"
#include "f3va/nn/parameter.hpp"
#include "f3va/nn/time_embed.hpp"

namespace f3va::nn {

struct UShapedConfig {
  /// Palindromic level widths; the first entry is the field's input/output dim.
  std::vector<int> level_dims{16, 8, 4, 2, 4, 8, 16};
  int hidden = 64;     ///< width inside each level's MLP block
  int time_dim = 16;   ///< sinusoidal embedding size before projection
  Activation activation = Activation::Tanh;

  void validate() const {
    const auto n = level_dims.size();
    if (n == 0 || n % 2 == 0) throw ConfigError("u-shaped field: level count must be odd");
    for (std::size_t i = 0; i < n; ++i) {
      if (level_dims[i] < 1) throw ConfigError("u-shaped field: level dims must be positive");
      if (level_dims[i] != level_dims[n - 1 - i]) throw ConfigError("u-shaped field: level dims must be palindromic");
    }
    for (std::size_t i = 0; i + 1 <= n / 2; ++i)
      if (level_dims[i + 1] >= level_dims[i])
        throw ConfigError("u-shaped field: widths must shrink strictly towards a single central minimum");
    if (hidden < 1) throw ConfigError("u-shaped field: hidden width must be positive");
    if (time_dim < 2 || time_dim % 2) throw ConfigError("u-shaped field: time_dim must be even");
  }
};

/// Residual MLP block with a time input: y = R x + W2 act(W1 x + T e + b1) + b2.
template <typename Scalar>
struct LevelBlock {
  Linear<Scalar> residual;  // no bias
  Linear<Scalar> fc1;
  Linear<Scalar> time;      // no bias
  Linear<Scalar> fc2;

  LevelBlock() = default;
  LevelBlock(const std::string& name, int in, int out, int hidden, int time_dim, Rng& rng)
      : residual(name + ".residual", in, out, rng, false),
        fc1(name + ".fc1", in, hidden, rng),
        time(name + ".time", time_dim, hidden, rng, false),
        fc2(name + ".fc2", hidden, out, rng) {}

  void collect(ParameterRefs<Scalar>& out) {
    residual.collect(out);
    fc1.collect(out);
    time.collect(out);
    fc2.collect(out);
  }
};

/// Time-conditioned vector field over fixed-length vectors with a symmetric
/// encoder/decoder topology and additive skips between mirrored levels.
///
/// h0 = x + P e + p with e = time_embed(t); out_i = block_i(out_{i-1}, e)
/// (+ out_{L-1-i} past the centre); the field value is out_{L-1}.
template <typename Scalar>
class UShapedField {
 public:
  UShapedField() = default;
  UShapedField(UShapedConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const auto& dims = config_.level_dims;
    time_proj_ = Linear<Scalar>("time_proj", config_.time_dim, dims[0], rng);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const int in = i == 0 ? dims[0] : dims[i - 1];
      blocks_.emplace_back("blocks." + std::to_string(i), in, dims[i], config_.hidden, config_.time_dim, rng);
    }
  }

  const UShapedConfig& config() const { return config_; }
  int dim() const { return config_.level_dims.front(); }
  std::vector<LevelBlock<Scalar>>& blocks() { return blocks_; }
  Linear<Scalar>& time_proj() { return time_proj_; }

  /// Inference evaluation; does not touch the backward cache.
  Matrix<Scalar> evaluate(const Matrix<Scalar>& x, const Vector<Scalar>& t) const { return run(x, t, nullptr); }
  Matrix<Scalar> evaluate(const Matrix<Scalar>& x, Scalar t) const {
    return run(x, Vector<Scalar>::Constant(x.cols(), t), nullptr);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, const Vector<Scalar>& t) {
    cache_.emplace();
    return run(x, t, &*cache_);
  }

  /// Accumulates parameter gradients for the most recent forward(); returns dL/dx.
  Matrix<Scalar> backward(const Matrix<Scalar>& dout) {
    if (!cache_) throw StateError("u-shaped field: backward() without a recorded forward()");
    const Cache& c = *cache_;
    const int L = static_cast<int>(blocks_.size());
    const int centre = L / 2;
    std::vector<Matrix<Scalar>> g_out(L);
    g_out[L - 1] = dout;
    Matrix<Scalar> d_h0;
    for (int i = L - 1; i >= 0; --i) {
      Matrix<Scalar> g = g_out[i];
      if (i > centre) accumulate(g_out[L - 1 - i], g);
      auto& b = blocks_[i];
      const Matrix<Scalar>& in = c.inputs[i];
      Matrix<Scalar> d_in = b.residual.backward(in, g);
      Matrix<Scalar> d_act = b.fc2.backward(c.activations[i], g);
      Matrix<Scalar> d_pre = d_act.cwiseProduct(activation_slope(c.activations[i], config_.activation));
      d_in += b.fc1.backward(in, d_pre);
      b.time.backward(c.time_features, d_pre);
      if (i > 0)
        accumulate(g_out[i - 1], d_in);
      else
        d_h0 = std::move(d_in);
    }
    time_proj_.backward(c.time_features, d_h0);
    return d_h0;
  }

  ParameterRefs<Scalar> parameters() {
    ParameterRefs<Scalar> out;
    time_proj_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    return out;
  }
  void zero_grad() { nn::zero_grad(parameters()); }

 private:
  struct Cache {
    Matrix<Scalar> time_features;
    std::vector<Matrix<Scalar>> inputs;
    std::vector<Matrix<Scalar>> activations;
  };

  static void accumulate(Matrix<Scalar>& dst, const Matrix<Scalar>& g) {
    if (dst.size() == 0)
      dst = g;
    else
      dst += g;
  }

  Matrix<Scalar> run(const Matrix<Scalar>& x, const Vector<Scalar>& t, Cache* cache) const {
    if (x.rows() != dim()) throw RejectedInput("u-shaped field: input dimension mismatch");
    if (t.size() != x.cols()) throw RejectedInput("u-shaped field: one time value per column required");
    Matrix<Scalar> te = time_embed_batch<Scalar>(t, config_.time_dim);
    Matrix<Scalar> h = x + time_proj_.forward(te);
    const int L = static_cast<int>(blocks_.size());
    const int centre = L / 2;
    std::vector<Matrix<Scalar>> outs(L);
    if (cache) {
      cache->time_features = te;
      cache->inputs.resize(L);
      cache->activations.resize(L);
    }
    for (int i = 0; i < L; ++i) {
      const auto& b = blocks_[i];
      const Matrix<Scalar>& in = i == 0 ? h : outs[i - 1];
      Matrix<Scalar> act = activate<Scalar>(Matrix<Scalar>(b.fc1.forward(in) + b.time.forward(te)), config_.activation);
      Matrix<Scalar> y = b.residual.forward(in) + b.fc2.forward(act);
      if (i > centre) y += outs[L - 1 - i];
      if (cache) {
        cache->inputs[i] = in;
        cache->activations[i] = std::move(act);
      }
      outs[i] = std::move(y);
    }
    return outs[L - 1];
  }

  UShapedConfig config_;
  Linear<Scalar> time_proj_;
  std::vector<LevelBlock<Scalar>> blocks_;
  std::optional<Cache> cache_;
};

}  // namespace f3va::nn
