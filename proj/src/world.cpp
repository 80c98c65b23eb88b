#include "omnibot/world.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace omnibot {

namespace {

constexpr double kPi = std::numbers::pi;

std::optional<double> ray_circle(const Vec2& origin, const Vec2& dir, const Vec2& center,
                                 double radius) {
  const Vec2 oc = origin - center;
  const double c = oc.squaredNorm() - radius * radius;
  if (c <= 0.0) return 0.0;
  const double b = oc.dot(dir);
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t < 0.0) return std::nullopt;
  return t;
}

std::optional<double> ray_capsule(const Vec2& origin, const Vec2& dir, const Segment& seg) {
  const double r = 0.5 * seg.thickness;
  if (point_segment_distance(origin, seg.p1, seg.p2) <= r) return 0.0;

  std::optional<double> best;
  auto take = [&best](std::optional<double> t) {
    if (t && (!best || *t < *best)) best = t;
  };
  take(ray_circle(origin, dir, seg.p1, r));
  take(ray_circle(origin, dir, seg.p2, r));

  const Vec2 d = seg.p2 - seg.p1;
  const double len = d.norm();
  if (len > 0.0) {
    const Vec2 e = d / len;
    const Vec2 n{-e.y(), e.x()};
    const double un = dir.dot(n);
    if (un != 0.0) {
      for (double side : {1.0, -1.0}) {
        const double t = (side * r - (origin - seg.p1).dot(n)) / un;
        if (t < 0.0) continue;
        const double s = (origin + t * dir - seg.p1).dot(e);
        if (s >= 0.0 && s <= len) take(t);
      }
    }
  }
  return best;
}

std::optional<double> ray_bounds(const Vec2& origin, const Vec2& dir, const Bounds& b) {
  if (!b.contains(origin)) return 0.0;
  std::optional<double> best;
  auto take = [&best](double t) {
    if (!best || t < *best) best = t;
  };
  if (dir.x() > 0.0) take((b.x1 - origin.x()) / dir.x());
  if (dir.x() < 0.0) take((b.x0 - origin.x()) / dir.x());
  if (dir.y() > 0.0) take((b.y1 - origin.y()) / dir.y());
  if (dir.y() < 0.0) take((b.y0 - origin.y()) / dir.y());
  return best;
}

SurfaceContact circle_contact(const Vec2& p, const Circle& c) {
  const Vec2 d = p - c.center;
  const double n = d.norm();
  SurfaceContact out;
  out.signed_distance = n - c.radius;
  if (n > 0.0) out.normal = d / n;
  return out;
}

SurfaceContact segment_contact(const Vec2& p, const Segment& s) {
  const Vec2 ab = s.p2 - s.p1;
  const double len2 = ab.squaredNorm();
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp((p - s.p1).dot(ab) / len2, 0.0, 1.0);
  const Vec2 nearest = s.p1 + t * ab;
  const Vec2 d = p - nearest;
  const double n = d.norm();
  SurfaceContact out;
  out.signed_distance = n - 0.5 * s.thickness;
  if (n > 0.0) {
    out.normal = d / n;
  } else if (len2 > 0.0) {
    out.normal = Vec2{-ab.y(), ab.x()}.normalized();
  }
  return out;
}

}  // namespace

void validate(const RobotParams& p) {
  auto positive = [](double v, const char* name) {
    if (!(std::isfinite(v) && v > 0.0)) {
      throw std::invalid_argument(std::string(name) + " must be finite and > 0");
    }
  };
  positive(p.wheel_radius_m, "wheel_radius_m");
  positive(p.wheel_distance_m, "wheel_distance_m");
  positive(p.gear_ratio, "gear_ratio");
  positive(p.mass_kg, "mass_kg");
  positive(p.inertia_z_kg_m2, "inertia_z_kg_m2");
  positive(p.max_speed_m_s, "max_speed_m_s");
  positive(p.max_omega_rad_s, "max_omega_rad_s");
  positive(p.body_radius_m, "body_radius_m");
  for (double a : p.mount_angles_rad) {
    if (!std::isfinite(a)) throw std::invalid_argument("mount_angles_rad must be finite");
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const double diff = normalize_angle(p.mount_angles_rad[i] - p.mount_angles_rad[j]);
      if (std::abs(diff) < 1e-9) {
        throw std::invalid_argument("mount_angles_rad must be pairwise distinct modulo 2pi");
      }
    }
  }
}

double normalize_angle(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("normalize_angle: non-finite angle");
  double r = std::remainder(theta, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

std::vector<SurfaceContact> surface_contacts(const Vec2& p, const WorldScene& scene) {
  std::vector<SurfaceContact> out;
  out.reserve(scene.obstacles.size() + 4);
  for (const auto& ob : scene.obstacles) {
    out.push_back(std::visit(
        [&p](const auto& shape) {
          using T = std::decay_t<decltype(shape)>;
          if constexpr (std::is_same_v<T, Circle>) {
            return circle_contact(p, shape);
          } else {
            return segment_contact(p, shape);
          }
        },
        ob));
  }
  const Bounds& b = scene.bounds;
  out.push_back({p.x() - b.x0, {1.0, 0.0}});
  out.push_back({b.x1 - p.x(), {-1.0, 0.0}});
  out.push_back({p.y() - b.y0, {0.0, 1.0}});
  out.push_back({b.y1 - p.y(), {0.0, -1.0}});
  return out;
}

double point_obstacle_distance(const Vec2& p, const WorldScene& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : surface_contacts(p, scene)) best = std::min(best, c.signed_distance);
  return std::max(best, 0.0);
}

std::optional<double> raycast_scene(const Vec2& origin, const Vec2& dir, const WorldScene& scene) {
  std::optional<double> best = ray_bounds(origin, dir, scene.bounds);
  for (const auto& ob : scene.obstacles) {
    std::optional<double> t;
    if (const auto* c = std::get_if<Circle>(&ob)) {
      t = ray_circle(origin, dir, c->center, c->radius);
    } else {
      t = ray_capsule(origin, dir, std::get<Segment>(ob));
    }
    if (t && (!best || *t < *best)) best = t;
  }
  return best;
}

}  // namespace omnibot
