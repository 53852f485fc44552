#pragma once

// Vector-quantization bottleneck. Features are batched as columns (E x N).

#include <cmath>
#include <limits>
#include <vector>

#include "f3va/errors.hpp"
#include "f3va/nn/parameter.hpp"
#include "f3va/rng.hpp"

namespace f3va::backbone {

template <typename Scalar>
struct Codebook {
  nn::Parameter<Scalar> codewords;  ///< E x K
  double beta = 0.25;

  Codebook() = default;
  Codebook(Matrix<Scalar> words, double commit_beta) : codewords("codebook", std::move(words)), beta(commit_beta) {
    if (codewords.value.cols() < 2) throw ConfigError("codebook: K must be at least 2");
  }

  int size() const { return static_cast<int>(codewords.value.cols()); }
  int dim() const { return static_cast<int>(codewords.value.rows()); }
};

template <typename Scalar>
struct Quantized {
  Matrix<Scalar> c_vq;       ///< E x N, the selected codewords
  std::vector<int> indices;  ///< one per column
  double commit_loss = 0.0;
};

/// Index of the nearest codeword by Euclidean distance, ties to the lowest index.
template <typename Scalar, typename Derived>
int nearest_codeword(const Eigen::MatrixBase<Derived>& f, const Matrix<Scalar>& words) {
  int best = 0;
  Scalar best_d = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k < words.cols(); ++k) {
    const Scalar d = (f - words.col(k)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

/// commit = mean (f - sg(c))^2 + beta * mean (sg(f) - c)^2, means over all elements.
template <typename Scalar>
Quantized<Scalar> quantize(const Matrix<Scalar>& f_sem, const Codebook<Scalar>& cb) {
  if (f_sem.cols() == 0 || f_sem.rows() == 0) throw RejectedInput("quantize: empty input");
  if (f_sem.rows() != cb.dim()) throw RejectedInput("quantize: feature dimension differs from codebook");
  Quantized<Scalar> q;
  q.c_vq.resize(f_sem.rows(), f_sem.cols());
  q.indices.resize(static_cast<std::size_t>(f_sem.cols()));
  double sq = 0.0;
  for (Eigen::Index n = 0; n < f_sem.cols(); ++n) {
    const int k = nearest_codeword<Scalar>(f_sem.col(n), cb.codewords.value);
    q.indices[static_cast<std::size_t>(n)] = k;
    q.c_vq.col(n) = cb.codewords.value.col(k);
    sq += (f_sem.col(n) - q.c_vq.col(n)).template cast<double>().squaredNorm();
  }
  q.commit_loss = (1.0 + cb.beta) * sq / static_cast<double>(f_sem.size());
  return q;
}

/// Backward through quantize for upstream dL/dc_vq and a commit-loss weight.
/// Accumulates the codebook gradient of the beta term and returns dL/df_sem
/// (straight-through plus the first commit term).
template <typename Scalar>
Matrix<Scalar> quantize_backward(const Matrix<Scalar>& f_sem, const Quantized<Scalar>& q, const Matrix<Scalar>& d_cvq,
                                 double commit_weight, Codebook<Scalar>& cb) {
  const auto scale = static_cast<Scalar>(2.0 * commit_weight / static_cast<double>(f_sem.size()));
  const Matrix<Scalar> diff = f_sem - q.c_vq;
  for (Eigen::Index n = 0; n < f_sem.cols(); ++n)
    cb.codewords.grad.col(q.indices[static_cast<std::size_t>(n)]) -= static_cast<Scalar>(cb.beta) * scale * diff.col(n);
  return d_cvq + scale * diff;
}

/// Greedy k-means++ seeding over the columns of `points`: each new centre is
/// the best of 2 + ln(k) candidates drawn proportionally to squared distance.
template <typename Scalar>
Matrix<Scalar> kmeans_pp_init(const Matrix<Scalar>& points, int k, Rng& rng) {
  const auto N = points.cols();
  if (k < 1 || N < 1) throw RejectedInput("kmeans++: need at least one point and one centre");
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  const auto dist_to = [&](Eigen::Index c) {
    std::vector<double> d(static_cast<std::size_t>(N));
    for (Eigen::Index n = 0; n < N; ++n)
      d[static_cast<std::size_t>(n)] = (points.col(n) - points.col(c)).template cast<double>().squaredNorm();
    return d;
  };
  const auto draw = [&](const std::vector<double>& d2, double total) {
    if (!(total > 0.0)) return static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(N)));
    double u = rng.uniform() * total;
    Eigen::Index pick = 0;
    for (Eigen::Index n = 0; n < N; ++n) {
      u -= d2[static_cast<std::size_t>(n)];
      pick = n;
      if (u < 0.0) break;
    }
    return pick;
  };
  Matrix<Scalar> centres(points.rows(), k);
  Eigen::Index first = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(N)));
  centres.col(0) = points.col(first);
  std::vector<double> d2 = dist_to(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    Eigen::Index best = -1;
    double best_pot = std::numeric_limits<double>::infinity();
    std::vector<double> best_d2;
    for (int trial = 0; trial < trials; ++trial) {
      const Eigen::Index cand = draw(d2, total);
      std::vector<double> d = dist_to(cand);
      double pot = 0.0;
      for (std::size_t n = 0; n < d.size(); ++n) {
        d[n] = std::min(d[n], d2[n]);
        pot += d[n];
      }
      if (pot < best_pot) {
        best_pot = pot;
        best = cand;
        best_d2 = std::move(d);
      }
    }
    centres.col(c) = points.col(best);
    d2 = std::move(best_d2);
  }
  return centres;
}

/// Usage frequency of every codeword over the given index list.
inline std::vector<double> codeword_usage(const std::vector<int>& indices, int k) {
  std::vector<double> usage(static_cast<std::size_t>(k), 0.0);
  for (int i : indices) usage[static_cast<std::size_t>(i)] += 1.0;
  for (auto& u : usage) u /= indices.empty() ? 1.0 : static_cast<double>(indices.size());
  return usage;
}

}  // namespace f3va::backbone
