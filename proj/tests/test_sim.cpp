#include <cmath>
#include <numbers>
#include <string>

#include <fmt/core.h>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "omnibot/sim.hpp"
#include "support.hpp"

namespace omnibot::sim {
namespace {

constexpr double kPi = std::numbers::pi;

Scenario arena(const std::string& controller, double duration, const std::string& extra = "") {
  return load_scenario(fmt::format(R"(
[scene]
bounds = -3 -2 3 2
spawn = -2 0 0
[run]
controller = {}
duration_s = {}
seed = 5
{})",
                                   controller, duration, extra));
}

TEST(Engine, IdleExternalRunStaysAtSpawn) {
  const Scenario s = arena("external", 2.0);
  const auto r = run(s);
  ASSERT_EQ(r.trace.size(), 200u);
  for (const auto& rec : r.trace) {
    EXPECT_EQ(rec.pose.x, -2.0);
    EXPECT_EQ(rec.pose.y, 0.0);
    EXPECT_EQ(rec.pose.theta, 0.0);
  }
  EXPECT_EQ(r.summary.reason, "duration");
  EXPECT_EQ(r.summary.ticks, 200u);
}

TEST(Engine, SingleTickRun) {
  const auto r = run(arena("external", 0.01));
  EXPECT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].tick, 1u);
}

TEST(Engine, TimeBaseIsExact) {
  const Scenario s = arena("external", 3.0);
  Engine e(s);
  std::uint64_t k = 0;
  while (e.step()) {
    ++k;
    const auto& rec = e.trace().back();
    EXPECT_EQ(rec.tick, k);
    EXPECT_NEAR(rec.time_s, static_cast<double>(k) * s.dt_control_s, 1e-12);
    EXPECT_EQ(rec.time_s, static_cast<double>(e.state().physics_ticks) * s.dt_physics_s);
  }
  EXPECT_EQ(k, 300u);
}

TEST(Engine, AvoidDrivesThenRotatesAtWall) {
  // Empty arena, facing the far wall.
  const Scenario s = arena("avoid_obstacles", 12.0);
  const auto r = run(s);
  ASSERT_FALSE(r.trace.empty());
  EXPECT_EQ(r.trace.front().command, controllers::kAvoidForward);
  std::size_t first_rotate = 0;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& rec = r.trace[i];
    const bool near = rec.ir_v[0] >= 0.7 || rec.ir_v[1] >= 0.7 || rec.ir_v[8] >= 0.7;
    EXPECT_EQ(rec.command, near ? controllers::kAvoidRotate : controllers::kAvoidForward) << i;
    if (near && first_rotate == 0) first_rotate = i;
  }
  ASSERT_GT(first_rotate, 0u);
  for (std::size_t i = 0; i < first_rotate; ++i) {
    EXPECT_EQ(r.trace[i].command, controllers::kAvoidForward);
  }
  EXPECT_GT(r.trace[first_rotate].pose.x, 1.0);
  EXPECT_EQ(r.summary.collisions, 0u);
}

TEST(Engine, TracesAreByteIdentical) {
  const Scenario s = arena("avoid_obstacles", 2.0, "[sensors]\nir_noise_v = 0.01\ncamera_noise = 2\n");
  const std::string a = trace_csv(run(s).trace);
  const std::string b = trace_csv(run(s).trace);
  EXPECT_EQ(a, b);
  Scenario other = s;
  other.seed = 6;
  EXPECT_NE(trace_csv(run(other).trace), a);
}

TEST(Engine, TraceHeader) {
  const std::string csv = trace_csv(run(arena("external", 0.02)).trace);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kTraceHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Engine, LatestVelocityWins) {
  Engine e(arena("external", 1.0));
  e.enqueue(SetVelocity{{100, 0, 0}});
  e.enqueue(SetVelocity{{200, 50, 0}});
  ASSERT_TRUE(e.step());
  EXPECT_EQ(e.trace().back().command, (controllers::VelocityCommand{200, 50, 0}));
  EXPECT_EQ(e.applied_commands().size(), 2u);
  EXPECT_EQ(e.applied_commands()[1].tick, 0u);
}

TEST(Engine, WatchdogZeroesStaleCommand) {
  Engine e(arena("external", 2.0), EngineOptions{50});
  e.enqueue(SetVelocity{{300, 0, 0}});
  for (int k = 0; k < 50; ++k) ASSERT_TRUE(e.step());
  EXPECT_EQ(e.trace().back().command.vx_mm_s, 300.0);
  ASSERT_TRUE(e.step());
  EXPECT_EQ(e.trace().back().command.vx_mm_s, 0.0);
}

TEST(Engine, ResetReturnsToSpawn) {
  Engine e(arena("external", 2.0));
  e.enqueue(SetVelocity{{300, 0, 0}});
  for (int k = 0; k < 50; ++k) e.step();
  EXPECT_GT(e.drive().body().pose.x, -1.95);
  e.enqueue(SetVelocity{{0, 0, 0}});
  e.enqueue(Reset{});
  ASSERT_TRUE(e.step());
  EXPECT_NEAR(e.trace().back().pose.x, -2.0, 1e-12);
}

TEST(Engine, ScheduleRoundTripsThroughJson) {
  const std::vector<ScheduledCommand> cmds{
      {0, SetVelocity{{1, 2, 3}}},
      {4, SetPid{2, {0.1, 0.2, 0.3}}},
      {5, SelectController{ControllerKind::line_follow}},
      {6, Reset{}},
  };
  for (const auto& c : cmds) {
    const auto back = scheduled_command_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
  }
  EXPECT_THROW(scheduled_command_from_json(nlohmann::json::parse(
                   R"({"tick":0,"op":"set_pid","wheel":4,"kp":1,"ki":0,"kd":0})")),
               std::invalid_argument);
  EXPECT_THROW(scheduled_command_from_json(nlohmann::json::parse(R"({"tick":0,"op":"x"})")),
               std::invalid_argument);
}

WorldScene walled(double x1, double y1) {
  WorldScene s;
  s.bounds = {-5, -5, x1, y1};
  return s;
}

TEST(Collision, NoPenetrationUnchanged) {
  const RobotParams p;
  drivetrain::RigidBodyState rb{{0, 0, 0.3}, 0.2, 0.1, 0.5};
  const auto before = rb;
  EXPECT_FALSE(resolve_collision(rb, p, walled(1, 1)));
  EXPECT_EQ(rb.pose.x, before.pose.x);
  EXPECT_EQ(rb.vx, before.vx);
}

TEST(Collision, FlatWall) {
  RobotParams p;
  p.body_radius_m = 0.25;
  drivetrain::RigidBodyState rb{{0.76, 0, 0}, 0.3, 0.2, 0.1};
  EXPECT_TRUE(resolve_collision(rb, p, walled(1, 5)));
  EXPECT_NEAR(rb.pose.x, 0.75, 1e-15);
  EXPECT_EQ(rb.pose.y, 0.0);
  EXPECT_EQ(rb.vx, 0.0);
  EXPECT_EQ(rb.vy, 0.2);
  EXPECT_EQ(rb.omega, 0.1);
}

TEST(Collision, VelocityAwayFromWallKept) {
  RobotParams p;
  p.body_radius_m = 0.25;
  drivetrain::RigidBodyState rb{{0.76, 0, 0}, -0.3, 0.2, 0};
  resolve_collision(rb, p, walled(1, 5));
  EXPECT_EQ(rb.vx, -0.3);
}

/// Moves a disc with constant velocity in tiny steps, stopping each
/// velocity component the moment it would cross a wall.
drivetrain::RigidBodyState small_step_oracle(drivetrain::RigidBodyState rb, double radius,
                                              const WorldScene& s, double duration) {
  const double h = 1e-6;
  for (double t = 0; t < duration; t += h) {
    double nx = rb.pose.x + rb.vx * h, ny = rb.pose.y + rb.vy * h;
    if (nx > s.bounds.x1 - radius) {
      nx = s.bounds.x1 - radius;
      rb.vx = 0;
    }
    if (ny > s.bounds.y1 - radius) {
      ny = s.bounds.y1 - radius;
      rb.vy = 0;
    }
    rb.pose.x = nx;
    rb.pose.y = ny;
  }
  return rb;
}

TEST(Collision, CornerZeroesBothNormals) {
  RobotParams p;
  p.body_radius_m = 0.25;
  const WorldScene s = walled(1, 1);
  drivetrain::RigidBodyState rb{{0.77, 0.74, 0}, 0.3, 0.4, 0};
  EXPECT_TRUE(resolve_collision(rb, p, s));
  EXPECT_NEAR(rb.pose.x, 0.75, 1e-15);
  EXPECT_EQ(rb.vx, 0.0);
  // Coming in from well outside, the oracle ends wedged in the corner too.
  drivetrain::RigidBodyState start{{0.6, 0.5, 0}, 0.3, 0.4, 0};
  const auto oracle = small_step_oracle(start, 0.25, s, 1.0);
  drivetrain::RigidBodyState big = start;
  big.pose.x += big.vx * 1.0;
  big.pose.y += big.vy * 1.0;
  EXPECT_TRUE(resolve_collision(big, p, s));
  EXPECT_NEAR(big.pose.x, oracle.pose.x, 1e-6);
  EXPECT_NEAR(big.pose.y, oracle.pose.y, 1e-6);
  EXPECT_EQ(big.vx, oracle.vx);
  EXPECT_EQ(big.vy, oracle.vy);
  EXPECT_GE(clearance(big.pose.position(), p, s), -1e-12);
}

TEST(Collision, CircleObstacle) {
  RobotParams p;
  WorldScene s = walled(5, 5);
  s.obstacles.push_back(Circle{{1, 0}, 0.5});
  drivetrain::RigidBodyState rb{{0.3, 0, 0}, 0.5, 0.1, 0};
  EXPECT_TRUE(resolve_collision(rb, p, s));
  EXPECT_NEAR(rb.pose.x, 1 - 0.5 - p.body_radius_m, 1e-12);
  EXPECT_NEAR(rb.vx, 0.0, 1e-15);
  EXPECT_NEAR(rb.vy, 0.1, 1e-15);
}

TEST(Engine, DrivingIntoWallNeverPenetrates) {
  Engine e(arena("external", 10.0));
  e.enqueue(SetVelocity{{800, 300, 20}});
  while (e.step()) {
  }
  const auto sum = e.summary();
  EXPECT_GE(sum.min_clearance_m, -1e-6);
  EXPECT_GE(sum.collisions, 1u);
}

TEST(ShippedScenarios, AvoidDemo) {
  const auto r = run(testing::shipped("avoid_demo.scn"));
  EXPECT_EQ(r.summary.reason, "timeout");
  EXPECT_EQ(r.summary.ticks, 6000u);
  EXPECT_EQ(r.summary.collisions, 0u);
  EXPECT_GT(r.summary.min_clearance_m, 0.0);
  // Pinned from the first verified run.
  EXPECT_NEAR(r.summary.min_clearance_m, 0.1187, 5e-4);
}

TEST(ShippedScenarios, AvoidDemoDtRefinement) {
  Scenario s = testing::shipped("avoid_demo.scn");
  const auto coarse = run(s).summary.final_pose;
  s.dt_physics_s /= 2;
  const auto fine = run(s).summary.final_pose;
  EXPECT_LT(std::hypot(coarse.x - fine.x, coarse.y - fine.y), 0.01);
  EXPECT_LT(std::abs(std::remainder(coarse.theta - fine.theta, 2 * kPi)), 2 * kPi / 180);
}

TEST(ShippedScenarios, LineDemoTracks) {
  const auto t = testing::track_line(testing::shipped("line_demo.scn"));
  ASSERT_GT(t.lock_tick, 0u);
  EXPECT_GE(t.in_band_fraction(), 0.95);
}

TEST(ShippedScenarios, LineCurveDemoNeverLost) {
  const Scenario s = testing::shipped("line_curve_demo.scn");
  const auto t = testing::track_line(s);
  EXPECT_LE(static_cast<double>(t.longest_lost_ticks) * s.dt_control_s, 0.5);
  // The robot follows the arc: it ends near its far side.
  const auto r = run(s);
  EXPECT_GT(r.summary.final_pose.y, 1.5);
}

TEST(ShippedScenarios, RetuningDampsOscillation) {
  const Scenario s = testing::shipped("tuning_demo.scn");
  const auto schedule = testing::shipped_commands("tuning_demo.cmds.jsonl");
  const auto retuned = run(s, schedule);
  std::vector<ScheduledCommand> no_retune;
  for (const auto& c : schedule) {
    if (!std::holds_alternative<SetPid>(c.command)) no_retune.push_back(c);
  }
  const auto untouched = run(s, no_retune);
  for (int w = 0; w < 3; ++w) {
    const double before = testing::wheel_peak_to_peak(retuned.trace, w, 1.0, 2.0);
    const double after = testing::wheel_peak_to_peak(retuned.trace, w, 4.0, 5.0);
    const double still = testing::wheel_peak_to_peak(untouched.trace, w, 4.0, 5.0);
    EXPECT_LT(after, before) << w;
    EXPECT_LT(after, still) << w;
  }
  EXPECT_GT(testing::wheel_peak_to_peak(untouched.trace, 0, 4.0, 5.0), 5.0);
}

}  // namespace
}  // namespace omnibot::sim
