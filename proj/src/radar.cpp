#include "f3va/cli/radar.hpp"

#include <algorithm>

#include "f3va/errors.hpp"

namespace f3va::cli {

std::vector<RadarEntry> default_radar_spec() {
  return {{"WER", 0.0, 50.0, Direction::Lower},  {"UTMOS", 1.0, 4.5, Direction::Higher},
          {"SECS", 0.0, 0.7, Direction::Higher}, {"WA", 0.0, 90.0, Direction::Higher},
          {"A-EER", 0.0, 75.0, Direction::Higher}, {"C-EER", 0.0, 50.0, Direction::Higher}};
}

const RadarEntry& radar_entry(const std::vector<RadarEntry>& spec, const std::string& name) {
  for (const auto& e : spec)
    if (e.name == name) return e;
  throw ConfigError("radar: unknown metric '" + name + "'");
}

double radar_normalize(double v_raw, const RadarEntry& entry) {
  if (!(entry.v_min < entry.v_max)) throw ConfigError("radar: v_min must be below v_max for " + entry.name);
  double v = (v_raw - entry.v_min) / (entry.v_max - entry.v_min);
  if (entry.direction == Direction::Lower) v = 1.0 - v;
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace f3va::cli
