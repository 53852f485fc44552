#pragma once

#include <string>
#include <vector>

namespace f3va::cli {

enum class Direction { Higher, Lower };

struct RadarEntry {
  std::string name;
  double v_min = 0.0;
  double v_max = 1.0;
  Direction direction = Direction::Higher;
};

/// WER [0,50] lower; UTMOS [1,4.5], SECS [0,0.7], WA [0,90], A-EER [0,75], C-EER [0,50] higher.
std::vector<RadarEntry> default_radar_spec();
const RadarEntry& radar_entry(const std::vector<RadarEntry>& spec, const std::string& name);

/// Min-max normalisation (inverted for lower-is-better), clamped to [0, 1].
double radar_normalize(double v_raw, const RadarEntry& entry);

}  // namespace f3va::cli
