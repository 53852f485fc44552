#pragma once

#include <span>
#include <vector>

#include "f3va/errors.hpp"
#include "f3va/linalg.hpp"

namespace f3va::backbone {

inline constexpr double kReferencePitchHz = 440.0;

struct NormalizedPitch {
  VectorXd p_norm;           ///< semitones relative to the voiced median; 0 on unvoiced frames
  std::vector<bool> voiced;
};

/// Every frame of the contour was unvoiced; callers substitute a zero contour.
class EmptyVoiced : public RejectedInput {
 public:
  EmptyVoiced() : RejectedInput("normalize_pitch: no voiced frames") {}
};

/// Semitone conversion 12*log2(f0/f_ref) followed by subtraction of the median
/// over voiced frames (f0 > 0). Semitones are snapped to a 2^-20 grid, which
/// keeps the median subtraction exact in floating point.
NormalizedPitch normalize_pitch(std::span<const double> f0_hz, double f_ref = kReferencePitchHz);

/// normalize_pitch with the all-unvoiced case mapped to zeros.
VectorXd normalized_pitch_or_zeros(std::span<const double> f0_hz);

/// Median with the even-count rule (mean of the two central values).
double median(std::vector<double> values);

}  // namespace f3va::backbone
