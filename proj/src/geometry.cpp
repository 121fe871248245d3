#include "rar/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace rar {

std::string_view to_string(Frame f) {
  switch (f) {
    case Frame::World: return "world";
    case Frame::EndEffector: return "end_effector";
    case Frame::Object: return "object";
    case Frame::Camera: return "camera";
  }
  return "?";
}

double wrap_angle(double theta) {
  double r = std::remainder(theta, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

Pose Pose::from(const Vec3& p, const Quat& q, Frame frame, Frame child) {
  return Pose{p, q.normalized(), frame, child};
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation();
  m.topRightCorner<3, 1>() = position;
  return m;
}

double Pose::yaw() const {
  const Quat& q = orientation;
  return std::atan2(2.0 * (q.w() * q.z() + q.x() * q.y()), 1.0 - 2.0 * (q.y() * q.y() + q.z() * q.z()));
}

double Pose::roll() const {
  const Quat& q = orientation;
  return std::atan2(2.0 * (q.w() * q.x() + q.y() * q.z()), 1.0 - 2.0 * (q.x() * q.x() + q.y() * q.y()));
}

double Pose::pitch() const {
  const Quat& q = orientation;
  return std::asin(std::clamp(2.0 * (q.w() * q.y() - q.z() * q.x()), -1.0, 1.0));
}

Pose compose(const Pose& a, const Pose& b) {
  if (a.child != b.frame) {
    throw FrameError("compose: " + std::string(to_string(a.frame)) + "<-" + std::string(to_string(a.child)) +
                     " does not chain with " + std::string(to_string(b.frame)) + "<-" +
                     std::string(to_string(b.child)));
  }
  Pose out;
  out.position = a.position + a.orientation * b.position;
  out.orientation = (a.orientation * b.orientation).normalized();
  out.frame = a.frame;
  out.child = b.child;
  return out;
}

Pose inverse(const Pose& p) {
  Pose out;
  out.orientation = p.orientation.conjugate().normalized();
  out.position = -(out.orientation * p.position);
  out.frame = p.child;
  out.child = p.frame;
  return out;
}

double translation_error(const Pose& a, const Pose& b) { return (a.position - b.position).norm(); }

double rotation_error(const Pose& a, const Pose& b) { return a.orientation.angularDistance(b.orientation); }

Quat yaw_quat(double theta) { return Quat(Eigen::AngleAxisd(theta, Vec3::UnitZ())); }

Pose PlanarPose4::to_pose(Frame frame, Frame child) const {
  return Pose{Vec3(x_, y_, z_), yaw_quat(theta_), frame, child};
}

PlanarPose4 PlanarPose4::from_pose(const Pose& p, double tol) {
  // Tilt of the local z axis away from vertical covers roll and pitch at once
  // and stays well-defined near the yaw singularity.
  const Vec3 z_axis = p.orientation * Vec3::UnitZ();
  const double tilt_x = std::abs(std::atan2(z_axis.y(), z_axis.z()));
  const double tilt_y = std::abs(std::atan2(z_axis.x(), z_axis.z()));
  if (tilt_x > tol || tilt_y > tol) {
    throw DegeneracyError("pose is not planar (roll/pitch beyond tolerance)");
  }
  return {p.position.x(), p.position.y(), p.position.z(), p.yaw()};
}

bool Twist::within(const TwistLimits& lim) const {
  return finite() && linear.norm() <= lim.max_linear + 1e-12 && angular.norm() <= lim.max_angular + 1e-12;
}

Twist Twist::clamped(const TwistLimits& lim) const {
  Twist out = *this;
  const double v = linear.norm();
  const double w = angular.norm();
  if (v > lim.max_linear) out.linear *= lim.max_linear / v;
  if (w > lim.max_angular) out.angular *= lim.max_angular / w;
  return out;
}

namespace {

void require_planar_world(const Pose& p, const char* what) {
  if (p.frame != Frame::World) {
    throw FrameError(std::string("displacement_to_bottleneck: ") + what + " must be world-referenced");
  }
  (void)PlanarPose4::from_pose(p);
}

Eigen::Matrix3d skew(const Vec3& w) {
  Eigen::Matrix3d k;
  k << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return k;
}

}  // namespace

Displacement4 displacement_to_bottleneck(const Pose& p, const Pose& b) {
  require_planar_world(p, "current pose");
  require_planar_world(b, "bottleneck pose");
  const Vec3 d_world = b.position - p.position;
  const Vec3 d_ee = p.orientation.conjugate() * d_world;
  return {d_ee.x(), d_ee.y(), d_ee.z(), wrap_angle(b.yaw() - p.yaw())};
}

Pose apply_displacement(const Pose& p, const Displacement4& d) {
  Pose out = p;
  out.position = p.position + p.orientation * d.translation();
  out.orientation = (p.orientation * yaw_quat(d.dtheta_z)).normalized();
  return out;
}

Pose se3_exp(const Vec3& v, const Vec3& w, double dt, Frame f) {
  const Vec3 rho = v * dt;
  const Vec3 phi = w * dt;
  const double theta = phi.norm();
  const Eigen::Matrix3d k = skew(phi);

  double b = 0.0;
  double c = 0.0;
  Quat q;
  if (theta < 1e-6) {
    const double t2 = theta * theta;
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
    q = Quat(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
  } else {
    b = (1.0 - std::cos(theta)) / (theta * theta);
    c = (theta - std::sin(theta)) / (theta * theta * theta);
    q = Quat(Eigen::AngleAxisd(theta, phi / theta));
  }
  const Eigen::Matrix3d vmat = Eigen::Matrix3d::Identity() + b * k + c * k * k;
  return Pose{vmat * rho, q.normalized(), f, f};
}

Pose integrate_twist(const Pose& p, const Twist& t, double dt) {
  if (t.frame != Frame::EndEffector) throw FrameError("integrate_twist: twist must be in the end-effector frame");
  if (!(dt > 0.0)) throw Error("integrate_twist: dt must be positive");
  Pose step = se3_exp(t.linear, t.angular, dt, p.child);
  return compose(p, step);
}

}  // namespace rar
