#pragma once

#include <span>

namespace f3va::eval {

/// Equal error rate in percent. A trial is accepted when score >= threshold;
/// thresholds sweep the sorted unique scores plus +-infinity, and the crossing
/// of FAR and FRR is interpolated linearly between adjacent thresholds.
/// Labels: 1 = target, 0 = nontarget.
double compute_eer(std::span<const double> scores, std::span<const int> labels);

}  // namespace f3va::eval
