#include "f3va/backbone/pitch.hpp"

#include <algorithm>
#include <cmath>

namespace f3va::backbone {
namespace {
constexpr double kGrid = 1048576.0;  // 2^20
}

double median(std::vector<double> values) {
  if (values.empty()) throw RejectedInput("median of empty set");
  const auto n = values.size();
  std::sort(values.begin(), values.end());
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

NormalizedPitch normalize_pitch(std::span<const double> f0_hz, double f_ref) {
  if (!(f_ref > 0.0)) throw RejectedInput("normalize_pitch: reference pitch must be positive");
  NormalizedPitch out;
  out.p_norm = VectorXd::Zero(static_cast<Eigen::Index>(f0_hz.size()));
  out.voiced.assign(f0_hz.size(), false);
  std::vector<double> semitones;
  for (std::size_t i = 0; i < f0_hz.size(); ++i) {
    const double f = f0_hz[i];
    if (!(f >= 0.0) || !std::isfinite(f)) throw RejectedInput("normalize_pitch: f0 must be finite and >= 0");
    if (f == 0.0) continue;
    out.voiced[i] = true;
    const double s = std::round(12.0 * std::log2(f / f_ref) * kGrid) / kGrid;
    out.p_norm(static_cast<Eigen::Index>(i)) = s;
    semitones.push_back(s);
  }
  if (semitones.empty()) throw EmptyVoiced();
  const double m = median(semitones);
  for (std::size_t i = 0; i < f0_hz.size(); ++i)
    if (out.voiced[i]) out.p_norm(static_cast<Eigen::Index>(i)) -= m;
  return out;
}

VectorXd normalized_pitch_or_zeros(std::span<const double> f0_hz) {
  try {
    return normalize_pitch(f0_hz).p_norm;
  } catch (const EmptyVoiced&) {
    return VectorXd::Zero(static_cast<Eigen::Index>(f0_hz.size()));
  }
}

}  // namespace f3va::backbone
