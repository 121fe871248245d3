#include "rar/geometry.hpp"
#include "rar/rng.hpp"

#include <gtest/gtest.h>

namespace rar {
namespace {

Pose random_pose(Rng& rng, Frame frame = Frame::World, Frame child = Frame::EndEffector) {
  const Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Pose::from(p, q, frame, child);
}

Pose planar_ee(double x, double y, double z, double yaw) {
  return Pose::from(Vec3(x, y, z), yaw_quat(yaw), Frame::World, Frame::EndEffector);
}

void expect_pose_near(const Pose& a, const Pose& b, double tol) {
  EXPECT_LT(translation_error(a, b), tol);
  EXPECT_LT(rotation_error(a, b), tol);
}

TEST(Compose, IdentityIsNeutral) {
  Rng rng(1);
  const Pose p = random_pose(rng);
  expect_pose_near(compose(Pose::identity(Frame::World), p), p, 1e-15);
}

TEST(Compose, InverseGivesIdentity) {
  Rng rng(2);
  const Pose p = random_pose(rng);
  const Pose e = compose(p, inverse(p));
  EXPECT_EQ(e.frame, Frame::World);
  EXPECT_EQ(e.child, Frame::World);
  EXPECT_LT(e.position.norm(), 1e-12);
  EXPECT_LT(rotation_error(e, Pose::identity()), 1e-12);
}

TEST(Compose, MatchesHomogeneousMatrixProduct) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose a = random_pose(rng, Frame::World, Frame::EndEffector);
    const Pose b = random_pose(rng, Frame::EndEffector, Frame::Camera);
    const Eigen::Matrix4d m = a.matrix() * b.matrix();
    const Pose c = compose(a, b);
    EXPECT_LT((c.matrix() - m).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(c.frame, Frame::World);
    EXPECT_EQ(c.child, Frame::Camera);
  }
}

TEST(Compose, RejectsMismatchedFrames) {
  const Pose a = Pose::from(Vec3::Zero(), Quat::Identity(), Frame::World, Frame::Object);
  const Pose b = Pose::from(Vec3::Zero(), Quat::Identity(), Frame::EndEffector, Frame::Camera);
  EXPECT_THROW(compose(a, b), FrameError);
}

TEST(Displacement, ZeroAtBottleneck) {
  const Pose b = planar_ee(0.2, -0.1, 0.35, 0.7);
  const Displacement4 d = displacement_to_bottleneck(b, b);
  EXPECT_NEAR(d.translation_norm(), 0.0, 1e-15);
  EXPECT_NEAR(d.dtheta_z, 0.0, 1e-15);
}

TEST(Displacement, AxisAlignedCase) {
  const Displacement4 d = displacement_to_bottleneck(planar_ee(0.1, 0, 0, 0), planar_ee(0, 0, 0, 0));
  EXPECT_NEAR(d.dx, -0.1, 1e-15);
  EXPECT_NEAR(d.dy, 0.0, 1e-15);
  EXPECT_NEAR(d.dz, 0.0, 1e-15);
  EXPECT_NEAR(d.dtheta_z, 0.0, 1e-15);
}

TEST(Displacement, RotatedFrameMatchesMatrixOracle) {
  const Pose p = planar_ee(0.3, 0.1, 0.4, kPi / 2);
  const Pose b = planar_ee(0.5, 0.1, 0.4, kPi / 2);
  const Displacement4 d = displacement_to_bottleneck(p, b);
  const Eigen::Matrix4d rel = p.matrix().inverse() * b.matrix();
  EXPECT_NEAR(d.dx, rel(0, 3), 1e-12);
  EXPECT_NEAR(d.dy, rel(1, 3), 1e-12);
  EXPECT_NEAR(d.dz, rel(2, 3), 1e-12);
  // World +x seen from an EE yawed by pi/2 is EE -y.
  EXPECT_NEAR(d.dx, 0.0, 1e-12);
  EXPECT_NEAR(d.dy, -0.2, 1e-12);
  EXPECT_NEAR(d.dtheta_z, 0.0, 1e-12);
}

TEST(Displacement, PropertyApplyReachesBottleneck) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const Pose p = planar_ee(rng.uniform(-.5, .5), rng.uniform(-.5, .5), rng.uniform(0, .8), rng.uniform(-kPi, kPi));
    const Pose b = planar_ee(rng.uniform(-.5, .5), rng.uniform(-.5, .5), rng.uniform(0, .8), rng.uniform(-kPi, kPi));
    const Displacement4 d = displacement_to_bottleneck(p, b);
    EXPECT_GT(d.dtheta_z, -kPi - 1e-12);
    EXPECT_LE(d.dtheta_z, kPi);
    expect_pose_near(apply_displacement(p, d), b, 1e-9);
  }
}

TEST(Displacement, RejectsNonPlanarPoses) {
  const Pose tilted = Pose::from(Vec3::Zero(), Quat(Eigen::AngleAxisd(0.3, Vec3::UnitX())), Frame::World,
                                 Frame::EndEffector);
  EXPECT_THROW(displacement_to_bottleneck(tilted, planar_ee(0, 0, 0, 0)), DegeneracyError);
}

TEST(IntegrateTwist, PureTranslation) {
  Twist t;
  t.linear = Vec3(0.1, 0, 0);
  const Pose p = integrate_twist(Pose::identity(Frame::World), t, 1.0);
  EXPECT_NEAR((p.position - Vec3(0.1, 0, 0)).norm(), 0.0, 1e-15);
}

TEST(IntegrateTwist, PureRotation) {
  Twist t;
  t.angular = Vec3(0, 0, kPi / 2);
  const Pose p = integrate_twist(Pose::identity(Frame::World), t, 1.0);
  EXPECT_NEAR(p.yaw(), kPi / 2, 1e-12);
  EXPECT_LT(p.position.norm(), 1e-15);
}

TEST(IntegrateTwist, ScrewMatchesFineSubstepIntegration) {
  Twist t;
  t.linear = Vec3(0.1, 0, 0);
  t.angular = Vec3(0, 0, 1);
  const Pose p = integrate_twist(Pose::identity(Frame::World), t, 1.0);

  // 1000 substeps. The heading used for each translation increment is the
  // one at the middle of the substep.
  const int n = 1000;
  const double h = 1.0 / n;
  Vec3 x = Vec3::Zero();
  double yaw = 0.0;
  for (int k = 0; k < n; ++k) {
    const double mid = yaw + 0.5 * h * t.angular.z();
    x += Vec3(std::cos(mid), std::sin(mid), 0.0) * t.linear.x() * h;
    yaw += h * t.angular.z();
  }
  EXPECT_LT((p.position - x).norm(), 1e-6);
  EXPECT_NEAR(p.yaw(), yaw, 1e-12);
}

TEST(IntegrateTwist, RejectsWorldFrameTwist) {
  Twist t;
  t.frame = Frame::World;
  EXPECT_THROW(integrate_twist(Pose::identity(Frame::World), t, 0.05), FrameError);
}

TEST(IntegrateTwist, PropertyComposesOverTime) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    Twist t;
    t.linear = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    t.angular = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Pose p = random_pose(rng);
    const Pose once = integrate_twist(p, t, 0.2);
    const Pose twice = integrate_twist(integrate_twist(p, t, 0.1), t, 0.1);
    expect_pose_near(once, twice, 1e-12);
  }
}

TEST(WrapAngle, HalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_NEAR(wrap_angle(0.25), 0.25, 1e-15);
}

TEST(PlanarPose4, RoundTripsThroughPose) {
  const PlanarPose4 a(0.1, -0.2, 0.3, 2.5);
  const PlanarPose4 b = PlanarPose4::from_pose(a.to_pose());
  EXPECT_NEAR(a.x(), b.x(), 1e-15);
  EXPECT_NEAR(a.y(), b.y(), 1e-15);
  EXPECT_NEAR(a.z(), b.z(), 1e-15);
  EXPECT_NEAR(a.theta_z(), b.theta_z(), 1e-12);
}

TEST(Twist, ClampKeepsDirection) {
  Twist t;
  t.linear = Vec3(3, 4, 0);
  t.angular = Vec3(0, 0, 6);
  const Twist c = t.clamped(TwistLimits{});
  EXPECT_TRUE(c.within(TwistLimits{}));
  EXPECT_NEAR(c.linear.norm(), 0.5, 1e-12);
  EXPECT_NEAR(c.linear.normalized().dot(t.linear.normalized()), 1.0, 1e-12);
  EXPECT_NEAR(c.angular.z(), 1.5, 1e-12);
}

}  // namespace
}  // namespace rar
