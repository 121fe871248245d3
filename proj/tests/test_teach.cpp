#include "rar/act.hpp"
#include "rar/teach.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace rar {
namespace {

using test::catalog;

TEST(CollectDemo, AnchoredSampleHasZeroLabel) {
  const SceneItem& item = catalog().find("can_red");
  CollectionConfig cc;
  cc.samples = 5;
  cc.anchor_first_sample = true;
  const CollectedDemo d = collect_demo(item, {0.02, -0.04, 0.0, 1.1}, canonical_script(item), cc);
  const Displacement4& l = d.record.samples.front().label;
  EXPECT_EQ(l.translation_norm(), 0.0);
  EXPECT_EQ(l.dtheta_z, 0.0);
  EXPECT_TRUE(d.record.samples.front().observation == d.record.bottleneck_obs);
}

TEST(CollectDemo, PropertyLabelsReachBottleneck) {
  CollectionConfig cc;
  cc.samples = 100;
  std::uint64_t seed = 40;
  for (const SceneItem* item : catalog().split("train")) {
    cc.seed = seed++;
    const PlanarPose4 placement(0.05, -0.03, 0.0, 0.8);
    const CollectedDemo d = collect_demo(*item, placement, canonical_script(*item), cc);
    const Pose& b = d.record.bottleneck_pose;
    EXPECT_LT(translation_error(b, bottleneck_world(*item, placement)), 1e-12);
    ASSERT_EQ(d.record.samples.size(), 100u);
    for (const AlignmentSample& s : d.record.samples) {
      const Pose reached = apply_displacement(s.pose, s.label);
      EXPECT_LT(translation_error(reached, b), 1e-9) << item->name;
      EXPECT_LT(rotation_error(reached, b), 1e-9) << item->name;
    }
  }
}

TEST(CollectDemo, PropertyLabelsRespectVolumeBounds) {
  const SceneItem& item = catalog().find("mug_blue");
  CollectionConfig cc;
  cc.samples = 100;
  cc.seed = 41;
  const CollectionVolume& v = cc.volume;
  const CollectedDemo d = collect_demo(item, {0.0, 0.0, 0.0, -2.0}, canonical_script(item), cc);
  for (const AlignmentSample& s : d.record.samples) {
    // The offset was drawn on world axes; yaw-only frames keep its
    // horizontal length and its height.
    EXPECT_LE(std::hypot(s.label.dx, s.label.dy), std::hypot(v.x, v.y) + 1e-12);
    EXPECT_GE(-s.label.dz, v.z_min - 1e-12);
    EXPECT_LE(-s.label.dz, v.z_max + 1e-12);
    EXPECT_LE(std::abs(s.label.dtheta_z), v.yaw + 1e-12);
  }
}

TEST(CollectDemo, DeterministicUnderSeed) {
  const SceneItem& item = catalog().find("toaster_steel");
  CollectionConfig cc;
  cc.samples = 10;
  cc.seed = 77;
  const CollectedDemo a = collect_demo(item, {}, canonical_script(item), cc);
  const CollectedDemo b = collect_demo(item, {}, canonical_script(item), cc);
  ASSERT_EQ(a.record.samples.size(), b.record.samples.size());
  for (std::size_t i = 0; i < a.record.samples.size(); ++i) {
    EXPECT_EQ(a.record.samples[i].label, b.record.samples[i].label);
    EXPECT_TRUE(a.record.samples[i].observation == b.record.samples[i].observation);
  }
}

TEST(CollectDemo, RejectsBadConfig) {
  const SceneItem& item = catalog().find("can_red");
  CollectionConfig cc;
  cc.samples = 0;
  EXPECT_THROW(collect_demo(item, {}, canonical_script(item), cc), Error);
  cc.samples = 3;
  cc.volume.z_max = -1.0;
  EXPECT_THROW(collect_demo(item, {}, canonical_script(item), cc), Error);
}

TEST(ScriptedTrajectory, GraspDescentStepCount) {
  EXPECT_EQ(segment_steps(0.15, 0.1, 0.05), 30);

  const SceneItem& item = catalog().find("can_red");
  DemoScript script = canonical_script(item);
  script.params.fine_distance = 0.0;
  // Bottleneck 15 cm straight above the grasp site.
  const Vec3 site = item.object->grasp_sites.front();
  script.bottleneck.position = site + Vec3(0.0, 0.0, 0.15);
  const Trajectory t = scripted_trajectory(script, item, 0.05);
  std::size_t close = t.steps.size();
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (t.steps[i].event == Gripper::Closed) {
      close = i;
      break;
    }
  }
  ASSERT_EQ(close, 30u);
  for (std::size_t i = 0; i < close; ++i) {
    EXPECT_NEAR(t.steps[i].twist.linear.z(), -0.1, 1e-12);
    EXPECT_NEAR(t.steps[i].twist.linear.head<2>().norm(), 0.0, 1e-12);
  }
}

TEST(ScriptedTrajectory, MotionlessProgramIsRejected) {
  const SceneItem& item = catalog().find("can_red");
  DemoScript script = canonical_script(item);
  script.bottleneck.position = item.object->grasp_sites.front();
  script.params.lift = 0.0;
  EXPECT_THROW(scripted_trajectory(script, item, 0.05), Error);
  EXPECT_THROW(segment_steps(0.1, 0.0, 0.05), Error);
}

TEST(ScriptedTrajectory, EveryLibraryScriptSucceedsFromBottleneck) {
  // The script-validation gate, across all splits and placements.
  Rng rng(8);
  for (const SceneItem& item : catalog().items) {
    for (int k = 0; k < 3; ++k) {
      const PlanarPose4 placement(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0, rng.uniform(-kPi, kPi));
      const WorldState w = make_world(item, placement, bottleneck_world(item, placement), 1);
      const DemoScript script = canonical_script(item);
      const WorldState end = replay(w, scripted_trajectory(script, item, 0.05));
      EXPECT_TRUE(check_success(end, item.task)) << item.name << " placement " << k;
    }
  }
}

TEST(SampleCollectionPose, StaysInsideVolume) {
  const Pose b = Pose::from(Vec3(0.1, 0.2, 0.35), yaw_quat(0.5), Frame::World, Frame::EndEffector);
  CollectionVolume v;
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = sample_collection_pose(b, v, rng);
    const Vec3 off = p.position - b.position;
    EXPECT_LE(std::abs(off.x()), v.x);
    EXPECT_LE(std::abs(off.y()), v.y);
    EXPECT_GE(off.z(), v.z_min);
    EXPECT_LE(off.z(), v.z_max);
    EXPECT_LE(std::abs(wrap_angle(p.yaw() - b.yaw())), v.yaw + 1e-12);
    EXPECT_LE(off.norm(), v.diagonal() + 1e-12);
  }
}

}  // namespace
}  // namespace rar
