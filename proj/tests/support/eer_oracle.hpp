#pragma once

// Brute-force EER: every threshold is evaluated by direct counting.

#include <algorithm>
#include <limits>
#include <vector>

namespace f3va::testing {

inline double brute_force_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.insert(thresholds.begin(), -std::numeric_limits<double>::infinity());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg) += 1;
  std::vector<double> far, frr;
  for (double th : thresholds) {
    double fa = 0, fr = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == 0 && scores[i] >= th) ++fa;
      if (labels[i] == 1 && scores[i] < th) ++fr;
    }
    far.push_back(fa / n_neg);
    frr.push_back(fr / n_pos);
  }
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const double d = far[k] - frr[k];
    if (d > 0) continue;
    if (k == 0) return 100.0 * far[0];
    const double dp = far[k - 1] - frr[k - 1];
    const double alpha = dp / (dp - d);
    return 100.0 * (far[k - 1] + alpha * (far[k] - far[k - 1]));
  }
  return 100.0 * far.back();
}

}  // namespace f3va::testing
