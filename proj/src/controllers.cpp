#include "omnibot/controllers.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace omnibot::controllers {

BodyTwist to_body_twist(const VelocityCommand& c) {
  return {c.vx_mm_s * 0.001, c.vy_mm_s * 0.001, c.omega_deg_s * std::numbers::pi / 180.0};
}

std::string_view to_string(AvoidReason r) {
  switch (r) {
    case AvoidReason::running: return "running";
    case AvoidReason::timeout: return "timeout";
    case AvoidReason::bumper: return "bumper";
  }
  return "running";
}

AvoidOutput avoid_step(double v0, double v1, double v8, bool bumper, double elapsed_s) {
  AvoidOutput out;
  out.state.elapsed_s = elapsed_s;
  if (bumper) {
    out.state.terminated = true;
    out.state.reason = AvoidReason::bumper;
    return out;
  }
  if (elapsed_s >= kAvoidTimeLimitS) {
    out.state.terminated = true;
    out.state.reason = AvoidReason::timeout;
    return out;
  }
  if (kAvoidThresholdV <= v0 || kAvoidThresholdV <= v1 || kAvoidThresholdV <= v8) {
    out.command = kAvoidRotate;
  } else {
    out.command = kAvoidForward;
  }
  return out;
}

void validate(const LineFollowConfig& cfg) {
  if (cfg.width_px <= 0) throw std::invalid_argument("line follow width_px must be > 0");
  if (!(cfg.dead_band_px > 0.0 && cfg.dead_band_px < 0.5 * cfg.width_px)) {
    throw std::invalid_argument("line follow dead_band_px must be in (0, width_px/2)");
  }
  if (!std::isfinite(cfg.forward_mm_s) || !std::isfinite(cfg.turn_deg_s)) {
    throw std::invalid_argument("line follow speeds must be finite");
  }
}

VelocityCommand line_follow_step(const sensors::LineDetection& d, const LineFollowConfig& cfg) {
  if (!d.found) {
    if (cfg.lost_line_policy == LostLinePolicy::rotate_search) return {0.0, 0.0, cfg.turn_deg_s};
    return {};
  }
  const double mid = 0.5 * cfg.width_px;
  if (std::abs(d.x_px - mid) <= cfg.dead_band_px) return {cfg.forward_mm_s, 0.0, 0.0};
  if (d.x_px < mid) return {cfg.forward_mm_s, 0.0, cfg.turn_deg_s};
  return {cfg.forward_mm_s, 0.0, -cfg.turn_deg_s};
}

}  // namespace omnibot::controllers
