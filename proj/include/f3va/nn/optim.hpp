#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "f3va/errors.hpp"
#include "f3va/nn/parameter.hpp"

namespace f3va::nn {

struct OneCycle {
  double peak_lr = 1e-3;
  double pct_start = 0.1;
  double div_factor = 25.0;         ///< initial lr = peak / div_factor
  double final_div_factor = 1e4;    ///< final lr = peak / final_div_factor
};

/// Cosine warm-up from peak/div_factor to peak over the first pct_start*total
/// steps, then cosine annealing to peak/final_div_factor at step == total.
inline double one_cycle_lr(std::size_t step, std::size_t total, const OneCycle& s) {
  if (total == 0) throw RejectedInput("one_cycle_lr: total must be positive");
  if (step > total) throw RejectedInput("one_cycle_lr: step exceeds total");
  if (!(s.pct_start > 0.0 && s.pct_start < 1.0)) throw RejectedInput("one_cycle_lr: pct_start must lie in (0,1)");
  const double initial = s.peak_lr / s.div_factor;
  const double final_lr = s.peak_lr / s.final_div_factor;
  const double warm = s.pct_start * static_cast<double>(total);
  const double k = static_cast<double>(step);
  if (k <= warm) {
    const double frac = k / warm;
    return s.peak_lr - (s.peak_lr - initial) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
  }
  const double frac = (k - warm) / (static_cast<double>(total) - warm);
  return final_lr + (s.peak_lr - final_lr) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

inline double one_cycle_lr(std::size_t step, std::size_t total, double peak_lr, double pct_start) {
  return one_cycle_lr(step, total, OneCycle{peak_lr, pct_start});
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// One-cycle schedule when set; otherwise a constant rate of `constant_lr`.
  bool use_one_cycle = true;
  OneCycle schedule{};
  std::size_t total_steps = 1;
  double constant_lr = 1e-3;
};

/// Adam with decoupled weight decay. Moment buffers are bound to parameter
/// order on the first step.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  std::size_t step_count() const { return step_; }
  double current_lr() const {
    return config_.use_one_cycle ? one_cycle_lr(step_, config_.total_steps, config_.schedule) : config_.constant_lr;
  }

  void step(const ParameterRefs<Scalar>& params) {
    if (first_.empty()) {
      for (auto* p : params) {
        first_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (first_.size() != params.size()) throw RejectedInput("adamw: parameter list changed between steps");
    for (auto* p : params)
      if (!p->grad.allFinite()) throw NumericalDivergence("adamw: non-finite gradient in " + p->name, step_);

    const double lr = current_lr();
    const double k = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(config_.beta1, k);
    const double bc2 = 1.0 - std::pow(config_.beta2, k);
    const auto b1 = static_cast<Scalar>(config_.beta1);
    const auto b2 = static_cast<Scalar>(config_.beta2);
    const auto decay = static_cast<Scalar>(1.0 - lr * config_.weight_decay);
    const auto step_size = static_cast<Scalar>(lr / bc1);
    const auto inv_bc2_sqrt = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<Scalar>(config_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (p->value.rows() != first_[i].rows() || p->value.cols() != first_[i].cols())
        throw RejectedInput("adamw: parameter shape changed");
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * p->grad;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * p->grad.cwiseAbs2();
      p->value *= decay;
      p->value.array() -=
          step_size * first_[i].array() / (second_[i].array().sqrt() * inv_bc2_sqrt + eps);
    }
    ++step_;
  }

  const std::vector<Matrix<Scalar>>& first_moments() const { return first_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return second_; }

 private:
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::vector<Matrix<Scalar>> first_;
  std::vector<Matrix<Scalar>> second_;
};

}  // namespace f3va::nn
