#pragma once

// Training-time data generation: scripted demonstrations from the bottleneck
// and self-supervised alignment samples around it.

#include "rar/buffer.hpp"
#include "rar/catalog.hpp"

namespace rar {

class VisibilityError : public Error {
 public:
  using Error::Error;
};

class ScriptValidationError : public Error {
 public:
  using Error::Error;
};

/// Offsets from b^W, world axes for translation, yaw about world z.
struct CollectionVolume {
  double x = 0.10;
  double y = 0.10;
  double z_min = 0.0;
  double z_max = 0.20;
  double yaw = kPi / 4.0;
  bool sample_yaw = true;

  void validate() const;
  /// Largest translation a sample can be away from b^W.
  double diagonal() const;
};

struct CollectionConfig {
  int samples = 100;  // I
  CollectionVolume volume;
  double dt = 0.05;
  std::uint64_t seed = 0;
  bool anchor_first_sample = false;  // place sample 0 exactly at b^W
  RenderOptions render;
  SimConfig sim;

  void validate() const;
};

struct ScriptParams {
  double approach_speed = 0.10;  // m/s
  double fine_speed = 0.03;      // m/s, last centimetres of an insertion
  double fine_distance = 0.03;
  double lift = 0.15;
  double angular_speed = 1.0;  // rad/s
  double pour_tilt_deg = 110.0;
  double unscrew_turns = 3.0;         // quarter turns
  double unscrew_pitch = 0.002;       // rise per quarter turn
  double unscrew_lift = 0.06;
  double insert_cap_clearance = 0.0;  // cap bottom above the rim at release
  double bread_depth = 0.03;          // bread bottom below the slot top at release
  double retreat = 0.05;
};

struct DemoScript {
  Task task = Task::Grasp;
  Pose bottleneck;  // b^O: Object <- EndEffector
  ScriptParams params;
};

DemoScript canonical_script(const SceneItem& item);

/// Canonical motion for the script's task, as end-effector twists at `dt`.
/// Throws Error for programs that come out empty.
Trajectory scripted_trajectory(const DemoScript& script, const SceneItem& item, double dt);

/// Steps needed to cover `distance` at `speed` with period dt.
int segment_steps(double distance, double speed, double dt);

struct CollectedDemo {
  DemoRecord record;
  ObjectMeta meta;
};

/// Renders o_b at b^W, samples I poses in the volume with labels, then records
/// the scripted trajectory and checks that it succeeds.
CollectedDemo collect_demo(const SceneItem& item, const PlanarPose4& placement, const DemoScript& script,
                           const CollectionConfig& cfg);

/// Samples p_i around `b`. Exposed for label-bound tests.
Pose sample_collection_pose(const Pose& b, const CollectionVolume& v, Rng& rng);

}  // namespace rar
