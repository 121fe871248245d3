#pragma once

// Kinematic tabletop world: parametric objects built from primitives, a
// free-flying end-effector with a rigidly mounted wrist camera, proximity
// grasping and per-task success predicates.

#include "rar/geometry.hpp"
#include "rar/rng.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rar {

enum class Task : std::uint8_t { Grasp, Pour, Unscrew, InsertCap, InsertBread };

inline constexpr std::array<Task, 5> kAllTasks = {Task::Grasp, Task::Pour, Task::Unscrew, Task::InsertCap,
                                                  Task::InsertBread};

std::string_view to_string(Task t);
/// Throws Error on an unknown symbol.
Task task_from_string(std::string_view s);

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  bool operator==(const Rgb&) const = default;
};

// Shapes live in their primitive's local frame.
struct Cylinder {
  double radius = 0.0;
  double height = 0.0;  // spans local z in [0, height]
};
struct Box {
  Vec3 half = Vec3::Zero();  // centred on the local origin
};
struct TorusSegment {
  double major = 0.0;  // in the local xy plane, arc centred on +x
  double minor = 0.0;
  double arc = 0.0;    // total swept angle, radians
};
using Shape = std::variant<Cylinder, Box, TorusSegment>;

struct Primitive {
  Shape shape;
  Pose local;  // Object <- primitive
  Rgb color;
};

/// Circular opening on top of a bottle neck; `center.z()` is the rim height.
struct Mouth {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};
/// Rectangular slot; `center.z()` is the top surface height.
struct Slot {
  Vec3 center = Vec3::Zero();
  double half_x = 0.0;
  double half_y = 0.0;
  double depth = 0.0;
};
/// Open container a liquid can be poured into; `center.z()` is the rim.
struct Basin {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};
using Receptacle = std::variant<Mouth, Slot, Basin>;

enum class Role : std::uint8_t { Body, Cap, Bread, Cup };

struct ObjectSpec {
  std::string name;
  std::string class_id;
  std::vector<Primitive> parts;
  Rgb color;
  std::optional<Task> task_affinity;
  Role role = Role::Body;
  std::vector<Vec3> grasp_sites;  // object frame
  std::optional<Receptacle> receptacle;

  /// Axis-aligned bounds of all parts in the object frame.
  std::pair<Vec3, Vec3> bounds() const;
  double top() const { return bounds().second.z(); }
  double footprint_radius() const;

  /// Throws Error when a size parameter is non-positive or the object does not
  /// fit in a 0.3 m cube.
  void validate() const;
};

using SpecPtr = std::shared_ptr<const ObjectSpec>;

struct TableExtent {
  double x_min = -0.6;
  double x_max = 0.6;
  double y_min = -0.6;
  double y_max = 0.6;
  bool contains(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
};

enum class Gripper : std::uint8_t { Open, Closed };

struct PlacedObject {
  SpecPtr spec;
  Pose pose;  // World <- Object
};

/// Latched task progress, updated by step().
struct TaskProgress {
  double engaged_yaw = 0.0;  // signed yaw executed while a cap is engaged on its bottle
  bool poured = false;
  bool clipped = false;
  int clip_events = 0;
  std::uint64_t steps = 0;
  double time = 0.0;
  bool operator==(const TaskProgress&) const = default;
};

/// End-effector <- camera. The camera looks along -z, offset 5 cm along +x.
Pose camera_mount();

struct WorldState {
  std::vector<PlacedObject> objects;  // objects[0] is the scene's primary object
  Pose end_effector = Pose{Vec3::Zero(), Quat::Identity(), Frame::World, Frame::EndEffector};
  Gripper gripper = Gripper::Open;
  std::optional<std::size_t> attached;
  Pose grip = Pose::identity(Frame::EndEffector);  // EE <- attached object
  TableExtent table;
  std::uint64_t rng_seed = 0;
  TaskProgress progress;

  Pose camera_pose() const { return compose(end_effector, camera_mount()); }
};

/// Thresholds for grasping, task predicates and engagement.
struct SimConfig {
  double grasp_radius = 0.02;
  double lift_height = 0.10;
  double pour_min_tilt = 100.0 * kPi / 180.0;
  double cap_radial_tolerance = 0.004;
  double cap_depth_tolerance = 0.003;
  double unscrew_min_yaw = 270.0 * kPi / 180.0;
  double unscrew_lift = 0.03;
  double engage_radius = 0.006;
  double engage_height = 0.008;
  double bread_min_depth = 0.02;
  double table_clearance = 0.0;
};

/// Applies a body twist for dt. The attached object moves rigidly with the
/// end-effector; everything else stays put. Going below the table clips and
/// flags the episode.
WorldState step(const WorldState& world, const Twist& action, double dt, const SimConfig& cfg = {});

/// Teleports the end-effector (and anything it holds) to `target`.
WorldState move_end_effector(const WorldState& world, const Pose& target, const SimConfig& cfg = {});

/// Closing attaches the nearest object with a grasp site within grasp_radius
/// of the gripper origin; opening releases the held object onto its support.
WorldState set_gripper(const WorldState& world, Gripper cmd, const SimConfig& cfg = {});

bool check_success(const WorldState& world, Task task, const SimConfig& cfg = {});
bool check_success(const WorldState& world, std::string_view task, const SimConfig& cfg = {});

/// Height an object released at (x, y) comes to rest on, excluding `self`.
double support_height(const WorldState& world, std::size_t self, const Pose& released);

struct PlacementRegion {
  TableExtent table;
  double margin = 0.5;
};

/// Uniform x, y inside the table minus margin, resting on the table, yaw
/// uniform in (-pi, pi].
PlanarPose4 sample_test_pose(const ObjectSpec& spec, Rng& rng, const PlacementRegion& region = {});

/// Radial distance of a cap's axis from a mouth receptacle, and the cap's
/// height above the rim. Shared by the insertion and unscrewing predicates.
struct CapFit {
  double radial = 0.0;
  double height = 0.0;
};
std::optional<CapFit> cap_fit(const WorldState& world, std::size_t cap_index);

double tilt_angle(const Pose& p);

}  // namespace rar
