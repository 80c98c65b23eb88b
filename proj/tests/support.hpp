#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "omnibot/scenario.hpp"
#include "omnibot/sim.hpp"

namespace omnibot::testing {

inline std::filesystem::path scenario_path(const std::string& name) {
  return std::filesystem::path(OMNIBOT_SCENARIO_DIR) / name;
}

inline Scenario shipped(const std::string& name) { return load_scenario_file(scenario_path(name)); }

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(OMNIBOT_TEST_DATA_DIR) / name;
}

/// JSON-lines command schedule from the scenario directory.
std::vector<sim::ScheduledCommand> shipped_commands(const std::string& name);

/// Per-tick line tracking of a line_follow run.
struct LineTracking {
  std::uint64_t ticks = 0;
  std::uint64_t lock_tick = 0;  // first tick with the line inside the dead band; 0 = never
  std::uint64_t post_lock_ticks = 0;
  std::uint64_t post_lock_in_band = 0;
  std::uint64_t longest_lost_ticks = 0;
  double in_band_fraction() const {
    return post_lock_ticks == 0 ? 0.0
                                : static_cast<double>(post_lock_in_band) / post_lock_ticks;
  }
};

inline LineTracking track_line(const Scenario& s) {
  sim::Engine engine(s);
  LineTracking t;
  const double mid = s.line_follow.width_px / 2.0;
  std::uint64_t lost_run = 0;
  while (engine.step()) {
    ++t.ticks;
    const auto& line = engine.state().last_sensors.line;
    const bool in_band = line.found && std::abs(line.x_px - mid) <= s.line_follow.dead_band_px;
    if (t.lock_tick == 0 && in_band) t.lock_tick = t.ticks;
    if (t.lock_tick != 0) {
      ++t.post_lock_ticks;
      if (in_band) ++t.post_lock_in_band;
    }
    lost_run = line.found ? 0 : lost_run + 1;
    t.longest_lost_ticks = std::max(t.longest_lost_ticks, lost_run);
  }
  return t;
}

/// Peak-to-peak of wheel `w` speed over records with time in [t0, t1).
inline double wheel_peak_to_peak(const std::vector<sim::TraceRecord>& trace, int w, double t0,
                                 double t1) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : trace) {
    if (r.time_s < t0 || r.time_s >= t1) continue;
    lo = std::min(lo, r.wheels[w].speed_rad_s);
    hi = std::max(hi, r.wheels[w].speed_rad_s);
  }
  return hi - lo;
}

/// Outcome of replaying a wire transcript against a fresh hub.
struct TranscriptResult {
  std::vector<std::string> failures;
  std::set<std::string> request_ops;
  std::set<std::string> reply_ops;
  std::size_t exchanged = 0;
  bool ok() const { return failures.empty(); }
};

/// Transcript lines: "> request", "= ticks", "< expected" (JSON, the string
/// "*" matching any value). With `record` set, expectations are ignored and
/// the actual messages are written there in transcript form.
TranscriptResult run_transcript(const std::filesystem::path& transcript, const Scenario& scenario,
                                std::ostream* record = nullptr);

}  // namespace omnibot::testing
