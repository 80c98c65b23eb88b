#include "omnibot/sensors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace omnibot::sensors {

namespace {

void require_dims(int width, int height, int min_dim) {
  if (width < min_dim || height < min_dim) {
    throw std::invalid_argument("camera frame must be at least " + std::to_string(min_dim) + "x" +
                                std::to_string(min_dim));
  }
}

// Summed rows: lower half, excluding the zero border row.
std::pair<int, int> lower_half_rows(int height) { return {height / 2, height - 1}; }

struct EdgePeak {
  int column = -1;
  double sum = 0.0;
  double position = 0.0;  // continuous abscissa of the edge
};

// Strongest column for the given sign, refined to the centroid of the
// contiguous same-sign run around it.
EdgePeak find_edge(const std::vector<double>& sums, double sign) {
  EdgePeak peak;
  const int n = static_cast<int>(sums.size());
  for (int c = 0; c < n; ++c) {
    const double v = sign * sums[c];
    if (v > peak.sum) {
      peak.sum = v;
      peak.column = c;
    }
  }
  if (peak.column < 0) return peak;
  int lo = peak.column;
  int hi = peak.column;
  while (lo > 0 && sign * sums[lo - 1] > 0.0) --lo;
  while (hi + 1 < n && sign * sums[hi + 1] > 0.0) ++hi;
  double weight = 0.0;
  double moment = 0.0;
  for (int c = lo; c <= hi; ++c) {
    const double w = sign * sums[c];
    weight += w;
    moment += w * c;
  }
  peak.position = moment / weight + 0.5;
  return peak;
}

}  // namespace

IrRing make_ir_ring(const RobotParams& params, double max_range_m) {
  IrRing ring;
  for (std::size_t k = 0; k < kIrCount; ++k) {
    ring.bearings_rad[k] = normalize_angle(static_cast<double>(k) * 40.0 * std::numbers::pi / 180.0);
  }
  ring.max_range_m = max_range_m;
  ring.mount_radius_m = params.body_radius_m;
  return ring;
}

double voltage_curve(double distance_m, const IrCurve& curve) {
  const double d = std::max(distance_m, 0.0);
  return std::clamp(curve.k_v() / (d + curve.d0_m), 0.0, curve.v_max);
}

IrReadings raycast_ir(const Pose& pose, const IrRing& ring, const WorldScene& scene,
                      const IrCurve& curve) {
  IrReadings out;
  for (std::size_t k = 0; k < kIrCount; ++k) {
    const double heading = pose.theta + ring.bearings_rad[k];
    const Vec2 dir{std::cos(heading), std::sin(heading)};
    const Vec2 origin = pose.position() + ring.mount_radius_m * dir;
    const auto hit = raycast_scene(origin, dir, scene);
    const double d = hit ? std::min(*hit, ring.max_range_m) : ring.max_range_m;
    out[k] = {d, voltage_curve(d, curve)};
  }
  return out;
}

bool bumper(const Pose& pose, const RobotParams& params, const WorldScene& scene) {
  return point_obstacle_distance(pose.position(), scene) <= params.body_radius_m;
}

double lateral_to_image_x(double lateral_m, int width, const CameraPatch& patch) {
  return (0.5 * patch.width_m - lateral_m) * width / patch.width_m;
}

double image_x_to_lateral(double x_px, int width, const CameraPatch& patch) {
  return 0.5 * patch.width_m - x_px * patch.width_m / width;
}

CameraFrame render_camera(const Pose& pose, const WorldScene& scene, int width, int height,
                          const CameraPatch& patch) {
  require_dims(width, height, 1);
  CameraFrame frame;
  frame.width_px = width;
  frame.height_px = height;
  frame.pixels.assign(static_cast<std::size_t>(width) * height, kBackgroundIntensity);

  const double px_per_m_u = width / patch.width_m;
  const double px_per_m_v = height / patch.depth_m;
  const double far = patch.near_m + patch.depth_m;
  auto to_image = [&](const Vec2& body) {
    return Vec2{(0.5 * patch.width_m - body.y()) * px_per_m_u, (far - body.x()) * px_per_m_v};
  };
  const Vec2 origin = pose.position();

  for (const auto& line : scene.floor_lines) {
    const double half = 0.5 * line.width_m;
    for (std::size_t s = 0; s + 1 < line.vertices.size(); ++s) {
      const Vec2 a = rotate(line.vertices[s] - origin, -pose.theta);
      const Vec2 b = rotate(line.vertices[s + 1] - origin, -pose.theta);
      const Vec2 ia = to_image(a);
      const Vec2 ib = to_image(b);
      const int c0 = std::max(0, static_cast<int>(std::floor(std::min(ia.x(), ib.x()) - half * px_per_m_u)) - 1);
      const int c1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(ia.x(), ib.x()) + half * px_per_m_u)) + 1);
      const int r0 = std::max(0, static_cast<int>(std::floor(std::min(ia.y(), ib.y()) - half * px_per_m_v)) - 1);
      const int r1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(ia.y(), ib.y()) + half * px_per_m_v)) + 1);
      for (int r = r0; r <= r1; ++r) {
        const double xb = far - (r + 0.5) / px_per_m_v;
        for (int c = c0; c <= c1; ++c) {
          const double yb = 0.5 * patch.width_m - (c + 0.5) / px_per_m_u;
          if (point_segment_distance(Vec2{xb, yb}, a, b) <= half) {
            frame.pixels[static_cast<std::size_t>(r) * width + c] = kLineIntensity;
          }
        }
      }
    }
  }
  return frame;
}

std::vector<int> prewitt_response(const CameraFrame& frame) {
  require_dims(frame.width_px, frame.height_px, 3);
  const int w = frame.width_px;
  const int h = frame.height_px;
  std::vector<int> out(static_cast<std::size_t>(w) * h, 0);
  for (int r = 1; r + 1 < h; ++r) {
    for (int c = 1; c + 1 < w; ++c) {
      int acc = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        acc += static_cast<int>(frame.at(c + 1, r + dr)) - static_cast<int>(frame.at(c - 1, r + dr));
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

std::vector<int> prewitt_gradient(const CameraFrame& frame) {
  std::vector<int> out = prewitt_response(frame);
  for (int& v : out) v = std::abs(v);
  return out;
}

LineDetection detect_line_x(const CameraFrame& frame, const LineDetectorConfig& cfg) {
  LineDetection det;
  if (frame.width_px < 3 || frame.height_px < 3) return det;
  const int w = frame.width_px;
  const std::vector<int> resp = prewitt_response(frame);
  const auto [row_begin, row_end] = lower_half_rows(frame.height_px);

  std::vector<double> sums(static_cast<std::size_t>(w), 0.0);
  for (int r = row_begin; r < row_end; ++r) {
    for (int c = 0; c < w; ++c) sums[c] += resp[static_cast<std::size_t>(r) * w + c];
  }

  const EdgePeak rise = find_edge(sums, 1.0);
  const EdgePeak fall = find_edge(sums, -1.0);
  if (rise.column < 0 || fall.column < 0) return det;
  if (!(rise.sum > cfg.strength_threshold && fall.sum > cfg.strength_threshold)) return det;
  if (rise.column >= fall.column) return det;

  det.found = true;
  det.x_px = std::clamp(0.5 * (rise.position + fall.position), 0.0, std::nextafter(static_cast<double>(w), 0.0));
  double total = 0.0;
  for (int r = row_begin; r < row_end; ++r) {
    for (int c = rise.column; c <= fall.column; ++c) {
      total += std::abs(resp[static_cast<std::size_t>(r) * w + c]);
    }
  }
  const double count = static_cast<double>(row_end - row_begin) * (fall.column - rise.column + 1);
  det.strength = count > 0.0 ? total / count : 0.0;
  return det;
}

double calibrate_line_threshold(const CameraFrame& background, double noise_multiplier,
                                double min_edge_contrast, int min_edge_rows) {
  const std::vector<int> grad = prewitt_gradient(background);
  const int w = background.width_px;
  const auto [row_begin, row_end] = lower_half_rows(background.height_px);
  double worst = 0.0;
  for (int c = 0; c < w; ++c) {
    double sum = 0.0;
    for (int r = row_begin; r < row_end; ++r) sum += grad[static_cast<std::size_t>(r) * w + c];
    worst = std::max(worst, sum);
  }
  const double floor = 3.0 * min_edge_contrast * std::min(min_edge_rows, row_end - row_begin);
  return std::max(noise_multiplier * worst, floor);
}

void add_ir_noise(IrReadings& readings, double sigma_v, const IrCurve& curve, std::mt19937_64& rng) {
  if (sigma_v <= 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma_v);
  for (auto& r : readings) r.voltage_v = std::clamp(r.voltage_v + noise(rng), 0.0, curve.v_max);
}

void add_camera_noise(CameraFrame& frame, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& p : frame.pixels) {
    p = static_cast<std::uint8_t>(std::clamp(std::lround(p + noise(rng)), 0L, 255L));
  }
}

std::string encode_pgm(const CameraFrame& frame) {
  std::string out = "P5\n" + std::to_string(frame.width_px) + " " +
                    std::to_string(frame.height_px) + "\n255\n";
  out.append(frame.pixels.begin(), frame.pixels.end());
  return out;
}

CameraFrame decode_pgm(std::string_view data) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    int v = 0;
    const auto [ptr, ec] = std::from_chars(data.data() + pos, data.data() + data.size(), v);
    if (ec != std::errc{} || v <= 0) throw std::invalid_argument("PGM: bad header field");
    pos = static_cast<std::size_t>(ptr - data.data());
    return v;
  };
  if (data.substr(0, 2) != "P5") throw std::invalid_argument("PGM: expected P5 magic");
  pos = 2;
  CameraFrame f;
  f.width_px = read_int();
  f.height_px = read_int();
  if (read_int() != 255) throw std::invalid_argument("PGM: only maxval 255 is supported");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw std::invalid_argument("PGM: missing header terminator");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(f.width_px) * f.height_px;
  if (data.size() - pos != n) throw std::invalid_argument("PGM: pixel data size mismatch");
  f.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(pos), data.end());
  return f;
}

CameraFrame mirror_horizontally(const CameraFrame& frame) {
  CameraFrame out = frame;
  for (int r = 0; r < frame.height_px; ++r) {
    for (int c = 0; c < frame.width_px; ++c) {
      out.pixels[static_cast<std::size_t>(r) * frame.width_px + c] =
          frame.at(frame.width_px - 1 - c, r);
    }
  }
  return out;
}

}  // namespace omnibot::sensors
