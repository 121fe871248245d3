#pragma once

#include "rar/scene.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace rar {

/// One RGBD frame from the wrist camera. `camera_pose` is metadata for
/// debugging and oracles; learned components never read it.
struct Observation {
  static constexpr int kWidth = 128;
  static constexpr int kHeight = 128;
  static constexpr std::size_t kPixels = static_cast<std::size_t>(kWidth) * kHeight;

  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
  std::vector<float> depth;       // metres along the optical axis, 0 = no hit
  Pose camera_pose;

  bool well_formed() const { return rgb.size() == kPixels * 3 && depth.size() == kPixels; }
  /// Throws Error when the dimensions are not exactly 128x128.
  void check() const;

  bool operator==(const Observation& o) const { return rgb == o.rgb && depth == o.depth; }
};

struct RenderOptions {
  double fov_deg = 60.0;
  double rgb_noise = 0.0;    // sigma, intensity in [0, 1]
  double depth_noise = 0.0;  // sigma, metres
  Rgb table_color{0.62, 0.56, 0.48};
  Vec3 light_dir{0.35, 0.25, 1.0};
  double ambient = 0.35;
  double near_plane = 0.005;
};

double focal_length_px(double fov_deg);

/// Deterministic pinhole render: z-buffer over primitives, flat colour with
/// Lambert shading from a fixed light. Noise, when enabled, is seeded from the
/// world's seed and step counter.
Observation render(const WorldState& world, const RenderOptions& opts = {});

/// Continuous pixel coordinates (u right, v down; pixel centres at +0.5) of a
/// world point, or nullopt when it is behind the camera.
std::optional<Eigen::Vector2d> project(const Pose& camera, const Vec3& world_point, double fov_deg = 60.0);

}  // namespace rar
