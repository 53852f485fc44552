#include "f3va/eval/eer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "f3va/errors.hpp"

namespace f3va::eval {

double compute_eer(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw RejectedInput("compute_eer: scores and labels differ in length");
  std::size_t n_target = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw RejectedInput("compute_eer: labels must be 0 or 1");
    if (std::isnan(scores[i])) throw RejectedInput("compute_eer: NaN score");
    n_target += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_nontarget = labels.size() - n_target;
  if (n_target == 0 || n_nontarget == 0) throw RejectedInput("compute_eer: both target and nontarget trials required");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // At threshold -inf every trial is accepted: FAR = 1, FRR = 0.
  double prev_far = 1.0, prev_frr = 0.0;
  std::size_t targets_below = 0, nontargets_below = 0;
  std::size_t i = 0;
  while (true) {
    double far, frr;
    if (i < order.size()) {
      // Threshold at the next unique score: trials strictly below it are rejected.
      far = static_cast<double>(n_nontarget - nontargets_below) / static_cast<double>(n_nontarget);
      frr = static_cast<double>(targets_below) / static_cast<double>(n_target);
    } else {
      far = 0.0;
      frr = 1.0;
    }
    const double d = far - frr;
    if (d <= 0.0) {
      const double prev_d = prev_far - prev_frr;
      const double alpha = prev_d == d ? 1.0 : prev_d / (prev_d - d);
      return 100.0 * (prev_far + alpha * (far - prev_far));
    }
    prev_far = far;
    prev_frr = frr;
    if (i >= order.size()) break;
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]]) ++targets_below; else ++nontargets_below;
      ++i;
    }
  }
  return 100.0 * prev_far;
}

}  // namespace f3va::eval
