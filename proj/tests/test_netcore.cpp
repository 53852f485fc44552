#include <doctest.h>

#include <cmath>
#include <limits>

#include "f3va/nn/checkpoint.hpp"
#include "f3va/nn/optim.hpp"
#include "f3va/nn/time_embed.hpp"
#include "f3va/nn/ushaped_field.hpp"
#include "support/gradcheck.hpp"

using namespace f3va;

TEST_CASE("finite-difference gradients of every block") {
  for (const auto& r : testing::gradient_suite(20, 11)) {
    INFO(r.block);
    CHECK(r.instances >= 20);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("time embedding") {
  const auto e0 = nn::time_embed<double>(0.0, 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(e0(2 * k) == 0.0);
    CHECK(e0(2 * k + 1) == 1.0);
  }
  const auto e = nn::time_embed<double>(0.3, 4);
  CHECK(e(0) == doctest::Approx(std::sin(0.3)));
  CHECK(e(3) == doctest::Approx(std::cos(0.3 * 1e4)));
  CHECK_THROWS_AS(nn::time_embed<double>(0.1, 3), RejectedInput);
  CHECK_THROWS_AS(nn::time_embed<double>(0.1, 0), RejectedInput);
}

TEST_CASE("one-cycle schedule endpoints and shape") {
  const std::size_t total = 1000;
  const double peak = 2e-3;
  CHECK(nn::one_cycle_lr(0, total, peak, 0.1) == doctest::Approx(peak / 25.0));
  CHECK(nn::one_cycle_lr(100, total, peak, 0.1) == doctest::Approx(peak));
  CHECK(nn::one_cycle_lr(total, total, peak, 0.1) == doctest::Approx(peak / 1e4));
  // Half-way through warm-up the cosine ramp sits at the mean of its ends.
  CHECK(nn::one_cycle_lr(50, total, peak, 0.1) == doctest::Approx((peak + peak / 25.0) / 2.0));
  for (std::size_t k = 1; k <= 100; ++k) CHECK(nn::one_cycle_lr(k, total, peak, 0.1) >= nn::one_cycle_lr(k - 1, total, peak, 0.1));
  for (std::size_t k = 101; k <= total; ++k)
    CHECK(nn::one_cycle_lr(k, total, peak, 0.1) <= nn::one_cycle_lr(k - 1, total, peak, 0.1));
  CHECK_THROWS_AS(nn::one_cycle_lr(1, 0, peak, 0.1), RejectedInput);
  CHECK_THROWS_AS(nn::one_cycle_lr(5, 4, peak, 0.1), RejectedInput);
  CHECK_THROWS_AS(nn::one_cycle_lr(1, 4, peak, 0.0), RejectedInput);
}

TEST_CASE("adamw steps match the closed form") {
  nn::Parameter<double> p("p", MatrixXd::Constant(1, 2, 1.0));
  nn::AdamWConfig c;
  c.use_one_cycle = false;
  c.constant_lr = 0.1;
  c.weight_decay = 0.5;
  nn::AdamW<double> opt(c);
  const double g1 = 0.2, g2 = -0.4;
  p.grad << g1, g1;
  opt.step({&p});
  // First step: bias-corrected m = g, v = g^2, so the update is lr * g / (|g| + eps).
  const double after1 = 1.0 * (1.0 - 0.1 * 0.5) - 0.1 * g1 / (std::abs(g1) + 1e-8);
  CHECK(p.value(0, 0) == doctest::Approx(after1).epsilon(1e-12));
  p.grad << g2, g2;
  opt.step({&p});
  const double m = 0.9 * 0.1 * g1 + 0.1 * g2;
  const double v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  const double after2 = after1 * (1.0 - 0.05) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p.value(0, 1) == doctest::Approx(after2).epsilon(1e-10));
  CHECK(opt.step_count() == 2);
}

TEST_CASE("adamw rejects non-finite gradients and changed parameter lists") {
  nn::Parameter<double> p("p", MatrixXd::Zero(1, 1)), q("q", MatrixXd::Zero(1, 1));
  nn::AdamW<double> opt(nn::AdamWConfig{});
  p.grad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(opt.step({&p}), NumericalDivergence);
  p.grad(0, 0) = 1.0;
  opt.step({&p});
  CHECK_THROWS_AS(opt.step({&p, &q}), RejectedInput);
}

TEST_CASE("adamw follows the one-cycle schedule") {
  nn::Parameter<double> p("p", MatrixXd::Zero(1, 1));
  nn::AdamWConfig c;
  c.schedule = nn::OneCycle{1e-2, 0.25};
  c.total_steps = 8;
  nn::AdamW<double> opt(c);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(opt.current_lr() == doctest::Approx(nn::one_cycle_lr(k, 8, 1e-2, 0.25)));
    p.grad(0, 0) = 1.0;
    opt.step({&p});
  }
}

TEST_CASE("u-shaped configuration validation") {
  nn::UShapedConfig c;
  c.level_dims = {16, 8, 16, 8};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.level_dims = {16, 8, 12};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.level_dims = {8, 16, 8};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.level_dims = {16, 8, 4, 2, 4, 8, 16};
  c.time_dim = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.time_dim = 16;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("u-shaped field backward without forward is a state error") {
  Rng rng(1);
  nn::UShapedField<double> f(nn::UShapedConfig{}, rng);
  CHECK_THROWS_AS(f.backward(MatrixXd::Zero(16, 1)), StateError);
}

TEST_CASE("checkpoint round trip and corruption") {
  Rng rng(4);
  nn::UShapedField<float> field(nn::UShapedConfig{}, rng);
  std::vector<nn::Tensor> tensors;
  nn::append_parameters(tensors, "anonymizer/", field.parameters());
  tensors.push_back(nn::int_tensor("meta/ints", {3, -1, 65535}));
  const std::string bytes = nn::encode_checkpoint(tensors);
  const auto back = nn::decode_checkpoint(bytes);
  CHECK(back == tensors);
  CHECK(nn::tensor_ints(nn::find_tensor(back, "meta/ints")) == std::vector<int>{3, -1, 65535});

  Rng other(9);
  nn::UShapedField<float> copy(nn::UShapedConfig{}, other);
  nn::load_parameters(back, "anonymizer/", copy.parameters());
  const MatrixXf x = rng.normal_matrix<float>(16, 3);
  CHECK(copy.evaluate(x, 0.4f) == field.evaluate(x, 0.4f));
  CHECK(nn::encode_checkpoint(back) == bytes);

  CHECK_THROWS_AS(nn::decode_checkpoint("NOTACKPT" + bytes.substr(8)), DataError);
  CHECK_THROWS_AS(nn::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(nn::decode_checkpoint(bytes + "x"), DataError);
  std::string wrong_version = bytes;
  wrong_version[8] = 7;
  CHECK_THROWS_AS(nn::decode_checkpoint(wrong_version), DataError);
  CHECK_THROWS_AS(nn::find_tensor(back, "missing"), DataError);

  auto bad_shape = back;
  bad_shape[0].dims = {1, static_cast<std::uint32_t>(bad_shape[0].data.size())};
  CHECK_THROWS_AS(nn::load_parameters(bad_shape, "anonymizer/", copy.parameters()), DataError);
}
