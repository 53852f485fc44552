#pragma once

// Central finite-difference checks for every differentiable block, in double.
// Numeric derivatives use the five-point stencil, accurate to O(h^4).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "f3va/backbone/vq.hpp"
#include "f3va/flowmath.hpp"
#include "f3va/nn/conditioned_field.hpp"
#include "f3va/nn/ushaped_field.hpp"
#include "f3va/rng.hpp"

namespace f3va::testing {

inline constexpr double kFdStep = 1e-3;
inline constexpr double kRelFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

/// Max relative error between `analytic` and central differences of `loss`
/// over every entry of `value`.
inline double check_entries(MatrixXd& value, const MatrixXd& analytic, const std::function<double()>& loss) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < value.cols(); ++j)
    for (Eigen::Index i = 0; i < value.rows(); ++i) {
      const double keep = value(i, j);
      const auto at = [&](double offset) {
        value(i, j) = keep + offset;
        return loss();
      };
      const double numeric =
          (8.0 * (at(kFdStep) - at(-kFdStep)) - (at(2.0 * kFdStep) - at(-2.0 * kFdStep))) / (12.0 * kFdStep);
      value(i, j) = keep;
      worst = std::max(worst, relative_error(analytic(i, j), numeric));
    }
  return worst;
}

/// Gradients of a loss with respect to parameters (accumulated into .grad by
/// `backward_pass`) against finite differences of `loss`.
inline double check_parameters(const nn::ParameterRefs<double>& params, const std::function<void()>& backward_pass,
                               const std::function<double()>& loss) {
  nn::zero_grad(params);
  backward_pass();
  double worst = 0.0;
  for (auto* p : params) {
    const MatrixXd analytic = p->grad;
    worst = std::max(worst, check_entries(p->value, analytic, loss));
  }
  return worst;
}

inline void randomize(const nn::ParameterRefs<double>& params, Rng& rng, double scale) {
  for (auto* p : params) p->value = scale * rng.normal_matrix(p->value.rows(), p->value.cols());
}

struct BlockResult {
  std::string block;
  int instances = 0;
  double max_rel_error = 0.0;
};

inline BlockResult check_linear(int instances, Rng& rng) {
  BlockResult r{"linear", instances, 0.0};
  for (int k = 0; k < instances; ++k) {
    const int in = static_cast<int>(rng.integer(1, 6)), out = static_cast<int>(rng.integer(1, 6));
    const int B = static_cast<int>(rng.integer(1, 4));
    nn::Linear<double> lin("lin", in, out, rng, rng.bernoulli(0.5));
    MatrixXd x = rng.normal_matrix(in, B);
    const MatrixXd R = rng.normal_matrix(out, B);
    const auto loss = [&] { return lin.forward(x).cwiseProduct(R).sum(); };
    nn::ParameterRefs<double> ps;
    lin.collect(ps);
    MatrixXd dx;
    r.max_rel_error = std::max(r.max_rel_error, check_parameters(ps, [&] { dx = lin.backward(x, R); }, loss));
    r.max_rel_error = std::max(r.max_rel_error, check_entries(x, dx, loss));
  }
  return r;
}

inline nn::UShapedConfig random_ushaped_config(Rng& rng) {
  nn::UShapedConfig c;
  const int top = static_cast<int>(rng.integer(4, 7));
  const int mid = static_cast<int>(rng.integer(2, top - 1));
  c.level_dims = rng.bernoulli(0.5) ? std::vector<int>{top, mid, top} : std::vector<int>{top, mid, 1, mid, top};
  c.hidden = static_cast<int>(rng.integer(3, 8));
  c.time_dim = 2 * static_cast<int>(rng.integer(1, 4));
  c.activation = rng.bernoulli(0.8) ? nn::Activation::Tanh : nn::Activation::Identity;
  return c;
}

inline BlockResult check_ushaped(int instances, Rng& rng) {
  BlockResult r{"u_shaped_field", instances, 0.0};
  for (int k = 0; k < instances; ++k) {
    nn::UShapedField<double> field(random_ushaped_config(rng), rng);
    randomize(field.parameters(), rng, 0.5);
    const int d = field.config().level_dims.front(), B = static_cast<int>(rng.integer(1, 4));
    MatrixXd x = rng.normal_matrix(d, B);
    VectorXd t(B);
    for (int j = 0; j < B; ++j) t(j) = rng.uniform();
    const MatrixXd R = rng.normal_matrix(d, B);
    const auto loss = [&] { return field.evaluate(x, t).cwiseProduct(R).sum(); };
    MatrixXd dx;
    r.max_rel_error = std::max(r.max_rel_error, check_parameters(field.parameters(), [&] {
      field.forward(x, t);
      dx = field.backward(R);
    }, loss));
    r.max_rel_error = std::max(r.max_rel_error, check_entries(x, dx, loss));
  }
  return r;
}

inline BlockResult check_conditioned(int instances, Rng& rng) {
  BlockResult r{"conditioned_field", instances, 0.0};
  for (int k = 0; k < instances; ++k) {
    nn::ConditionedConfig c;
    c.state_dim = static_cast<int>(rng.integer(1, 5));
    c.local_dim = static_cast<int>(rng.integer(0, 4));
    c.global_dim = static_cast<int>(rng.integer(1, 4));
    c.hidden = static_cast<int>(rng.integer(2, 6));
    c.cond_hidden = static_cast<int>(rng.integer(2, 5));
    c.blocks = static_cast<int>(rng.integer(1, 3));
    c.time_dim = 2 * static_cast<int>(rng.integer(1, 3));
    nn::ConditionedField<double> field(c, rng);
    // Non-zero modulation heads so every path carries gradient.
    randomize(field.parameters(), rng, 0.5);
    const int B = static_cast<int>(rng.integer(1, 4));
    MatrixXd x = rng.normal_matrix(c.state_dim, B), local = rng.normal_matrix(c.local_dim, B),
             global = rng.normal_matrix(c.global_dim, B);
    VectorXd t(B);
    for (int j = 0; j < B; ++j) t(j) = rng.uniform();
    const MatrixXd R = rng.normal_matrix(c.state_dim, B);
    const auto loss = [&] { return field.evaluate(x, local, global, t).cwiseProduct(R).sum(); };
    nn::ConditionedField<double>::InputGradients g;
    r.max_rel_error = std::max(r.max_rel_error, check_parameters(field.parameters(), [&] {
      field.forward(x, local, global, t);
      g = field.backward(R);
    }, loss));
    r.max_rel_error = std::max(r.max_rel_error, check_entries(x, g.state, loss));
    if (c.local_dim > 0) r.max_rel_error = std::max(r.max_rel_error, check_entries(local, g.local, loss));
    r.max_rel_error = std::max(r.max_rel_error, check_entries(global, g.global, loss));
  }
  return r;
}

inline BlockResult check_cfm_loss(int instances, Rng& rng) {
  BlockResult r{"cfm_loss", instances, 0.0};
  for (int k = 0; k < instances; ++k) {
    nn::UShapedField<double> field(random_ushaped_config(rng), rng);
    randomize(field.parameters(), rng, 0.5);
    const int d = field.config().level_dims.front(), B = static_cast<int>(rng.integer(1, 5));
    const auto batch = flow::draw_flow_batch<double>(rng.normal_matrix(d, B), rng);
    const auto loss = [&] { return flow::cfm_loss<double>(field, batch, false).loss; };
    r.max_rel_error = std::max(r.max_rel_error,
                               check_parameters(field.parameters(), [&] { flow::cfm_loss<double>(field, batch); }, loss));
  }
  return r;
}

/// The commit term: w * mean (f - sg(c))^2 differentiated in f, and
/// w * beta * mean (sg(f) - c)^2 differentiated in the codebook.
inline BlockResult check_vq_commit(int instances, Rng& rng) {
  BlockResult r{"vq_commit", instances, 0.0};
  for (int k = 0; k < instances; ++k) {
    const int E = static_cast<int>(rng.integer(1, 5)), K = static_cast<int>(rng.integer(2, 6));
    const int N = static_cast<int>(rng.integer(1, 6));
    backbone::Codebook<double> cb(rng.normal_matrix(E, K), rng.uniform(0.1, 1.0));
    MatrixXd f = rng.normal_matrix(E, N);
    const double w = rng.uniform(0.5, 2.0);
    const auto q = backbone::quantize<double>(f, cb);
    const auto sq = [&](const MatrixXd& feat, const MatrixXd& words) {
      double s = 0.0;
      for (Eigen::Index n = 0; n < feat.cols(); ++n)
        s += (feat.col(n) - words.col(q.indices[static_cast<std::size_t>(n)])).squaredNorm();
      return s / static_cast<double>(feat.size());
    };
    cb.codewords.zero_grad();
    const MatrixXd df = backbone::quantize_backward<double>(f, q, MatrixXd::Zero(E, N), w, cb);
    const MatrixXd dc = cb.codewords.grad;
    const MatrixXd words = cb.codewords.value;
    r.max_rel_error = std::max(r.max_rel_error, check_entries(f, df, [&] { return w * sq(f, words); }));
    r.max_rel_error = std::max(r.max_rel_error, check_entries(cb.codewords.value, dc, [&] {
      return w * cb.beta * sq(f, cb.codewords.value);
    }));
  }
  return r;
}

inline std::vector<BlockResult> gradient_suite(int instances, std::uint64_t seed) {
  Rng rng(seed);
  Rng a = rng.fork("linear"), b = rng.fork("ushaped"), c = rng.fork("conditioned"), d = rng.fork("cfm"),
      e = rng.fork("vq");
  return {check_linear(instances, a), check_ushaped(instances, b), check_conditioned(instances, c),
          check_cfm_loss(instances, d), check_vq_commit(instances, e)};
}

}  // namespace f3va::testing
