#pragma once

#include <optional>
#include <string>
#include <vector>

#include "f3va/errors.hpp"
#include "f3va/nn/parameter.hpp"
#include "f3va/nn/time_embed.hpp"

namespace f3va::nn {

struct ConditionedConfig {
  int state_dim = 24;   ///< noisy frame dimension (also the output dimension)
  int local_dim = 17;   ///< per-sample side inputs concatenated with the state
  int global_dim = 16;  ///< conditioning vector (speaker embedding)
  int hidden = 128;
  int cond_hidden = 64;
  int blocks = 3;
  int time_dim = 16;

  void validate() const {
    if (state_dim < 1 || local_dim < 0 || global_dim < 1 || hidden < 1 || cond_hidden < 1 || blocks < 1)
      throw ConfigError("conditioned field: dimensions must be positive");
    if (time_dim < 2 || time_dim % 2) throw ConfigError("conditioned field: time_dim must be even");
  }
};

/// Modulated residual block. The modulation head starts at zero so that the
/// block ignores the conditioning until training moves it.
template <typename Scalar>
struct ModulatedBlock {
  Linear<Scalar> fc1;
  Linear<Scalar> fc2;
  Linear<Scalar> modulation;  // cond_hidden -> 2*hidden, rows [scale; shift]

  ModulatedBlock() = default;
  ModulatedBlock(const std::string& name, int hidden, int cond_hidden, Rng& rng)
      : fc1(name + ".fc1", hidden, hidden, rng),
        fc2(name + ".fc2", hidden, hidden, rng),
        modulation(Linear<Scalar>::zeros(name + ".modulation", cond_hidden, 2 * hidden)) {}

  void collect(ParameterRefs<Scalar>& out) {
    fc1.collect(out);
    fc2.collect(out);
    modulation.collect(out);
  }
};

/// Frame-level vector field: an MLP trunk over [state; local] whose blocks are
/// scale/shift modulated by an embedding of [global; time_embed(t)].
///
///   h  = W_in [x; local] + b
///   c  = tanh(W_c [global; te] + b_c)
///   h += W2 (tanh(W1 h + b1) * (1 + scale(c)) + shift(c)) + b2   per block
///   y  = W_out h + b_out
template <typename Scalar>
class ConditionedField {
 public:
  ConditionedField() = default;
  ConditionedField(ConditionedConfig config, Rng& rng) : config_(config) {
    config_.validate();
    input_ = Linear<Scalar>("input", config_.state_dim + config_.local_dim, config_.hidden, rng);
    cond_ = Linear<Scalar>("cond", config_.global_dim + config_.time_dim, config_.cond_hidden, rng);
    for (int j = 0; j < config_.blocks; ++j)
      blocks_.emplace_back("blocks." + std::to_string(j), config_.hidden, config_.cond_hidden, rng);
    output_ = Linear<Scalar>("output", config_.hidden, config_.state_dim, rng);
  }

  const ConditionedConfig& config() const { return config_; }
  std::vector<ModulatedBlock<Scalar>>& blocks() { return blocks_; }
  Linear<Scalar>& input_layer() { return input_; }
  Linear<Scalar>& cond_layer() { return cond_; }
  Linear<Scalar>& output_layer() { return output_; }

  Matrix<Scalar> evaluate(const Matrix<Scalar>& x, const Matrix<Scalar>& local, const Matrix<Scalar>& global,
                          const Vector<Scalar>& t) const {
    return run(x, local, global, t, nullptr);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, const Matrix<Scalar>& local, const Matrix<Scalar>& global,
                         const Vector<Scalar>& t) {
    cache_.emplace();
    return run(x, local, global, t, &*cache_);
  }

  struct InputGradients {
    Matrix<Scalar> state;
    Matrix<Scalar> local;
    Matrix<Scalar> global;
  };

  /// Accumulates parameter gradients for the most recent forward().
  InputGradients backward(const Matrix<Scalar>& dout) {
    if (!cache_) throw StateError("conditioned field: backward() without a recorded forward()");
    const Cache& c = *cache_;
    const int H = config_.hidden;
    Matrix<Scalar> dh = output_.backward(c.trunk.back(), dout);
    Matrix<Scalar> dc = Matrix<Scalar>::Zero(config_.cond_hidden, dout.cols());
    for (int j = config_.blocks - 1; j >= 0; --j) {
      auto& b = blocks_[j];
      const Matrix<Scalar>& a = c.activations[j];
      const Matrix<Scalar>& mod = c.modulations[j];
      Matrix<Scalar> dg = b.fc2.backward(c.gated[j], dh);
      Matrix<Scalar> dmod(2 * H, dout.cols());
      dmod.topRows(H) = dg.cwiseProduct(a);
      dmod.bottomRows(H) = dg;
      dc += b.modulation.backward(c.cond, dmod);
      Matrix<Scalar> dz =
          (dg.array() * (Scalar(1) + mod.topRows(H).array()) * (Scalar(1) - a.array().square())).matrix();
      dh += b.fc1.backward(c.trunk[j], dz);
    }
    Matrix<Scalar> dcond_pre = (dc.array() * (Scalar(1) - c.cond.array().square())).matrix();
    Matrix<Scalar> dcond_in = cond_.backward(c.cond_input, dcond_pre);
    Matrix<Scalar> din = input_.backward(c.input, dh);
    InputGradients g;
    g.state = din.topRows(config_.state_dim);
    g.local = din.bottomRows(config_.local_dim);
    g.global = dcond_in.topRows(config_.global_dim);
    return g;
  }

  ParameterRefs<Scalar> parameters() {
    ParameterRefs<Scalar> out;
    input_.collect(out);
    cond_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    output_.collect(out);
    return out;
  }
  void zero_grad() { nn::zero_grad(parameters()); }

 private:
  struct Cache {
    Matrix<Scalar> input;
    Matrix<Scalar> cond_input;
    Matrix<Scalar> cond;
    std::vector<Matrix<Scalar>> trunk;  // block inputs, plus the final hidden state
    std::vector<Matrix<Scalar>> activations;
    std::vector<Matrix<Scalar>> modulations;
    std::vector<Matrix<Scalar>> gated;
  };

  Matrix<Scalar> run(const Matrix<Scalar>& x, const Matrix<Scalar>& local, const Matrix<Scalar>& global,
                     const Vector<Scalar>& t, Cache* cache) const {
    const auto B = x.cols();
    if (x.rows() != config_.state_dim || local.rows() != config_.local_dim || global.rows() != config_.global_dim)
      throw RejectedInput("conditioned field: input dimension mismatch");
    if (local.cols() != B || global.cols() != B || t.size() != B)
      throw RejectedInput("conditioned field: batch size mismatch");
    const int H = config_.hidden;
    Matrix<Scalar> in(config_.state_dim + config_.local_dim, B);
    in.topRows(config_.state_dim) = x;
    in.bottomRows(config_.local_dim) = local;
    Matrix<Scalar> cin(config_.global_dim + config_.time_dim, B);
    cin.topRows(config_.global_dim) = global;
    cin.bottomRows(config_.time_dim) = time_embed_batch<Scalar>(t, config_.time_dim);
    Matrix<Scalar> cond = cond_.forward(cin).array().tanh().matrix();
    Matrix<Scalar> h = input_.forward(in);
    if (cache) {
      cache->input = in;
      cache->cond_input = cin;
      cache->cond = cond;
    }
    for (const auto& b : blocks_) {
      Matrix<Scalar> a = b.fc1.forward(h).array().tanh().matrix();
      Matrix<Scalar> mod = b.modulation.forward(cond);
      Matrix<Scalar> g = (a.array() * (Scalar(1) + mod.topRows(H).array()) + mod.bottomRows(H).array()).matrix();
      Matrix<Scalar> next = h + b.fc2.forward(g);
      if (cache) {
        cache->trunk.push_back(std::move(h));
        cache->activations.push_back(std::move(a));
        cache->modulations.push_back(std::move(mod));
        cache->gated.push_back(std::move(g));
      }
      h = std::move(next);
    }
    Matrix<Scalar> y = output_.forward(h);
    if (cache) cache->trunk.push_back(std::move(h));
    return y;
  }

  ConditionedConfig config_;
  Linear<Scalar> input_;
  Linear<Scalar> cond_;
  std::vector<ModulatedBlock<Scalar>> blocks_;
  Linear<Scalar> output_;
  std::optional<Cache> cache_;
};

}  // namespace f3va::nn
