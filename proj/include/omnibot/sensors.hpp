#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "omnibot/world.hpp"

namespace omnibot::sensors {

inline constexpr std::size_t kIrCount = 9;

/// Nine IR rangers on the body perimeter; sensor k looks along k*40 degrees
/// from body +x, counter-clockwise. IR0, IR1 and IR8 face forward.
struct IrRing {
  std::array<double, kIrCount> bearings_rad{};
  double max_range_m = 0.8;
  double mount_radius_m = 0.225;
};

IrRing make_ir_ring(const RobotParams& params, double max_range_m = 0.8);

/// v(d) = clamp(k_v / (d + d0), 0, v_max) with k_v fixed by
/// v(calibration_distance) == calibration_voltage.
struct IrCurve {
  double d0_m = 0.04;
  double v_max = 2.55;
  double calibration_distance_m = 0.30;
  double calibration_voltage = 0.7;

  double k_v() const { return calibration_voltage * (calibration_distance_m + d0_m); }
};

double voltage_curve(double distance_m, const IrCurve& curve = {});

struct IrReading {
  double distance_m = 0.0;
  double voltage_v = 0.0;
};

using IrReadings = std::array<IrReading, kIrCount>;

IrReadings raycast_ir(const Pose& pose, const IrRing& ring, const WorldScene& scene,
                      const IrCurve& curve = {});

/// Contact counts: true when the center is within body_radius of anything.
bool bumper(const Pose& pose, const RobotParams& params, const WorldScene& scene);

/// 8-bit grayscale image, row-major, row 0 at the top.
struct CameraFrame {
  int width_px = 0;
  int height_px = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int col, int row) const {
    return pixels[static_cast<std::size_t>(row) * width_px + col];
  }
};

/// Floor patch imaged by the downward camera, in the body frame. The patch
/// spans [near_m, near_m + depth_m] ahead of the center and width_m across.
struct CameraPatch {
  double near_m = 0.1;
  double depth_m = 0.3;
  double width_m = 0.4;
};

inline constexpr std::uint8_t kBackgroundIntensity = 30;
inline constexpr std::uint8_t kLineIntensity = 220;

/// Orthographic top-down view: image up is body +x, column 0 is the robot's
/// left. A pixel is line-colored when its center lies within half a line
/// width of a floor polyline. Throws std::invalid_argument for width or
/// height < 1.
CameraFrame render_camera(const Pose& pose, const WorldScene& scene, int width, int height,
                          const CameraPatch& patch = {});

/// Maps a body-frame lateral offset (+ = left) to the continuous image
/// abscissa in [0, width).
double lateral_to_image_x(double lateral_m, int width, const CameraPatch& patch = {});
double image_x_to_lateral(double x_px, int width, const CameraPatch& patch = {});

/// Signed response of the horizontal Prewitt kernel
///   [-1 0 1; -1 0 1; -1 0 1]
/// with zero border. Throws std::invalid_argument for frames under 3x3.
std::vector<int> prewitt_response(const CameraFrame& frame);
/// |prewitt_response|
std::vector<int> prewitt_gradient(const CameraFrame& frame);

struct LineDetection {
  bool found = false;
  double x_px = 0.0;  // continuous abscissa, 0 = left edge of the image
  double strength = 0.0;
};

struct LineDetectorConfig {
  /// Minimum column sum of the edge responses for both edges of the pair.
  double strength_threshold = 0.0;
};

/// Sums the signed Prewitt response over the lower half of the image per
/// column, takes the strongest rising and falling edges and reports their
/// midpoint when both exceed the threshold with the rising edge on the left.
LineDetection detect_line_x(const CameraFrame& frame, const LineDetectorConfig& cfg = {});

/// Threshold = max(noise_multiplier * largest lower-half column sum of
/// |response| on a line-free frame, the column sum of a min_edge_contrast
/// step spanning min_edge_rows rows).
double calibrate_line_threshold(const CameraFrame& background, double noise_multiplier = 8.0,
                                double min_edge_contrast = 20.0, int min_edge_rows = 8);

/// Optional seeded noise hooks; both are no-ops at sigma 0.
void add_ir_noise(IrReadings& readings, double sigma_v, const IrCurve& curve, std::mt19937_64& rng);
void add_camera_noise(CameraFrame& frame, double sigma, std::mt19937_64& rng);

/// Binary PGM (P5, maxval 255).
std::string encode_pgm(const CameraFrame& frame);
/// Throws std::invalid_argument on malformed input.
CameraFrame decode_pgm(std::string_view data);

CameraFrame mirror_horizontally(const CameraFrame& frame);

}  // namespace omnibot::sensors
