#pragma once

// Rigid-body math: poses, planar 4-DoF poses, twists and displacements.
//
// Conventions
//   Pose      maps coordinates of `child` into `frame`   (frame_T_child)
//   Twist     body-frame velocity, always expressed in the end-effector frame
//   yaw       rotation about +z of the reference frame, wrapped to (-pi, pi]

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rar {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = 3.14159265358979323846;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FrameError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

enum class Frame : std::uint8_t { World, EndEffector, Object, Camera };

std::string_view to_string(Frame f);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double theta);

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Frame frame = Frame::World;
  Frame child = Frame::World;

  static Pose identity(Frame f = Frame::World) { return Pose{Vec3::Zero(), Quat::Identity(), f, f}; }
  static Pose from(const Vec3& p, const Quat& q, Frame frame, Frame child);

  Eigen::Matrix4d matrix() const;
  Eigen::Matrix3d rotation() const { return orientation.toRotationMatrix(); }
  Vec3 transform(const Vec3& p) const { return position + orientation * p; }

  double yaw() const;
  double roll() const;
  double pitch() const;
};

/// Rigid composition a * b. Requires a.child == b.frame.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Translation distance and rotation angle between two poses.
double translation_error(const Pose& a, const Pose& b);
double rotation_error(const Pose& a, const Pose& b);

Quat yaw_quat(double theta);

/// x, y, z and a yaw about world z. The only place angles get wrapped for
/// planar labels.
class PlanarPose4 {
 public:
  PlanarPose4() = default;
  PlanarPose4(double x, double y, double z, double theta_z)
      : x_(x), y_(y), z_(z), theta_(wrap_angle(theta_z)) {}

  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  double theta_z() const { return theta_; }

  Pose to_pose(Frame frame = Frame::World, Frame child = Frame::Object) const;

  /// Throws DegeneracyError if |roll| or |pitch| exceed `tol`.
  static PlanarPose4 from_pose(const Pose& p, double tol = 1e-6);

  PlanarPose4 operator+(const PlanarPose4& o) const {
    return {x_ + o.x_, y_ + o.y_, z_ + o.z_, theta_ + o.theta_};
  }

  bool operator==(const PlanarPose4&) const = default;

 private:
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
  double theta_ = 0.0;
};

struct TwistLimits {
  double max_linear = 0.5;   // m/s
  double max_angular = 1.5;  // rad/s
};

struct Twist {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
  Frame frame = Frame::EndEffector;

  static Twist zero() { return {}; }
  bool finite() const { return linear.allFinite() && angular.allFinite(); }
  bool within(const TwistLimits& lim) const;
  /// Scales linear and angular parts independently so both satisfy `lim`.
  Twist clamped(const TwistLimits& lim) const;
  bool operator==(const Twist&) const = default;
};

/// 4-DoF displacement: translation in the end-effector frame of the pose it
/// was computed from, plus a yaw increment in (-pi, pi].
struct Displacement4 {
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
  double dtheta_z = 0.0;

  Displacement4() = default;
  Displacement4(double x, double y, double z, double theta)
      : dx(x), dy(y), dz(z), dtheta_z(wrap_angle(theta)) {}

  Vec3 translation() const { return {dx, dy, dz}; }
  double translation_norm() const { return translation().norm(); }
  Displacement4 scaled(double s) const { return {dx * s, dy * s, dz * s, dtheta_z * s}; }
  bool operator==(const Displacement4&) const = default;
};

/// Displacement, in the end-effector frame of `p`, that brings `p` onto `b`.
/// Both poses must be World-referenced and planar (roll = pitch = 0).
Displacement4 displacement_to_bottleneck(const Pose& p, const Pose& b);

/// Moves `p` by `d`: translation along p's own axes, then yaw about p's z.
Pose apply_displacement(const Pose& p, const Displacement4& d);

/// Closed-form SE(3) exponential of a body twist held for `dt`.
Pose se3_exp(const Vec3& v, const Vec3& w, double dt, Frame f = Frame::EndEffector);

/// p * exp(t * dt). Requires t.frame == EndEffector and dt > 0.
Pose integrate_twist(const Pose& p, const Twist& t, double dt);

}  // namespace rar
