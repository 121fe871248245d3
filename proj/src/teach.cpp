#include "rar/teach.hpp"

#include "rar/act.hpp"

#include <algorithm>
#include <cmath>

namespace rar {

void CollectionVolume::validate() const {
  if (!(x > 0.0 && y > 0.0 && z_max > z_min && z_min >= 0.0)) throw Error("collection volume ranges must be positive");
  if (sample_yaw && !(yaw > 0.0 && yaw <= kPi)) throw Error("collection yaw range must be in (0, pi]");
}

double CollectionVolume::diagonal() const { return std::sqrt(x * x + y * y + z_max * z_max); }

void CollectionConfig::validate() const {
  if (samples < 1) throw Error("collection needs at least one sample");
  if (!(dt > 0.0)) throw Error("collection dt must be positive");
  volume.validate();
}

int segment_steps(double distance, double speed, double dt) {
  if (!(speed > 0.0) || !(dt > 0.0)) throw Error("segment speed and dt must be positive");
  // The small slack keeps exact multiples (0.15 m at 5 mm/step) from rounding up.
  return std::max(1, static_cast<int>(std::ceil(std::abs(distance) / (speed * dt) - 1e-9)));
}

namespace {

class Program {
 public:
  explicit Program(double dt) : dt_(dt) {}

  void translate(const Vec3& d, double speed) {
    if (d.norm() == 0.0) return;
    const int n = segment_steps(d.norm(), speed, dt_);
    Twist t;
    t.linear = d / (n * dt_);
    for (int k = 0; k < n; ++k) traj_.steps.push_back({t, std::nullopt});
  }

  // Screw about an end-effector axis, optionally climbing `rise` along it.
  void rotate(const Vec3& axis, double angle, double speed, double rise = 0.0) {
    if (angle == 0.0) return;
    const int n = segment_steps(angle, speed, dt_);
    Twist t;
    t.angular = axis.normalized() * (angle / (n * dt_));
    t.linear = axis.normalized() * (rise / (n * dt_));
    for (int k = 0; k < n; ++k) traj_.steps.push_back({t, std::nullopt});
  }

  void gripper(Gripper g) { traj_.steps.push_back({Twist::zero(), g}); }

  Trajectory finish() {
    traj_.dt = dt_;
    const bool moves = std::any_of(traj_.steps.begin(), traj_.steps.end(),
                                   [](const TrajectoryStep& st) { return !(st.twist == Twist::zero()); });
    if (!moves) throw Error("scripted program has no motion");
    return std::move(traj_);
  }

 private:
  double dt_;
  Trajectory traj_;
};

// Descends the last `fine` metres slowly.
void descend(Program& p, double depth, const ScriptParams& sp) {
  const double fine = std::min(sp.fine_distance, depth);
  p.translate(Vec3(0.0, 0.0, -(depth - fine)), sp.approach_speed);
  p.translate(Vec3(0.0, 0.0, -fine), sp.fine_speed);
}

// Object-frame point expressed in the bottleneck end-effector frame.
Vec3 site_in_ee(const DemoScript& s, const Vec3& site_object) {
  return inverse(s.bottleneck).transform(site_object);
}

}  // namespace

DemoScript canonical_script(const SceneItem& item) { return {item.task, item.bottleneck, {}}; }

Trajectory scripted_trajectory(const DemoScript& script, const SceneItem& item, double dt) {
  const ScriptParams& sp = script.params;
  Program p(dt);
  switch (script.task) {
    case Task::Grasp: {
      if (item.object->grasp_sites.empty()) throw Error("grasp script needs a grasp site on '" + item.name + "'");
      const Vec3 g = site_in_ee(script, item.object->grasp_sites.front());
      p.translate(Vec3(g.x(), g.y(), 0.0), sp.approach_speed);
      descend(p, -g.z(), sp);
      p.gripper(Gripper::Closed);
      p.translate(Vec3(0.0, 0.0, sp.lift), sp.approach_speed);
      break;
    }
    case Task::Pour: {
      if (item.object->grasp_sites.empty() || item.companions.empty()) {
        throw Error("pour script needs a grasp site and a target container on '" + item.name + "'");
      }
      const Vec3 g = site_in_ee(script, item.object->grasp_sites.front());
      const Vec3 target = site_in_ee(script, item.companions.front().offset.to_pose(Frame::Object, Frame::Object).position);
      const double tilt = sp.pour_tilt_deg * kPi / 180.0;
      p.translate(Vec3(g.x(), g.y(), 0.0), sp.approach_speed);
      descend(p, -g.z(), sp);
      p.gripper(Gripper::Closed);
      p.translate(Vec3(0.0, 0.0, sp.lift), sp.approach_speed);
      p.translate(Vec3(target.x() - g.x(), target.y() - g.y(), 0.0), sp.approach_speed);
      p.rotate(Vec3::UnitX(), tilt, sp.angular_speed);
      p.rotate(Vec3::UnitX(), -tilt, sp.angular_speed);
      break;
    }
    case Task::Unscrew: {
      const ObjectSpec* cap = nullptr;
      Vec3 cap_site;
      for (const Companion& c : item.companions) {
        if (c.spec->role == Role::Cap && !c.spec->grasp_sites.empty()) {
          cap = c.spec.get();
          cap_site = c.offset.to_pose(Frame::Object, Frame::Object).transform(c.spec->grasp_sites.front());
        }
      }
      if (cap == nullptr) throw Error("unscrew script needs a cap on '" + item.name + "'");
      const Vec3 g = site_in_ee(script, cap_site);
      p.translate(Vec3(g.x(), g.y(), 0.0), sp.approach_speed);
      descend(p, -g.z(), sp);
      p.gripper(Gripper::Closed);
      const int quarters = static_cast<int>(std::lround(sp.unscrew_turns));
      for (int q = 0; q < quarters; ++q) p.rotate(Vec3::UnitZ(), 0.5 * kPi, sp.angular_speed, sp.unscrew_pitch);
      p.translate(Vec3(0.0, 0.0, sp.unscrew_lift), sp.approach_speed);
      break;
    }
    case Task::InsertCap:
    case Task::InsertBread: {
      if (!item.held || !item.object->receptacle) {
        throw Error("insert script needs a held part and a receptacle on '" + item.name + "'");
      }
      // Where the held part's origin must end up, in the object frame.
      Vec3 goal_object;
      if (script.task == Task::InsertCap) {
        const auto* mouth = std::get_if<Mouth>(&*item.object->receptacle);
        if (mouth == nullptr) throw Error("insert_cap needs a mouth on '" + item.name + "'");
        goal_object = mouth->center + Vec3(0.0, 0.0, sp.insert_cap_clearance);
      } else {
        const auto* slot = std::get_if<Slot>(&*item.object->receptacle);
        if (slot == nullptr) throw Error("insert_bread needs a slot on '" + item.name + "'");
        goal_object = slot->center - Vec3(0.0, 0.0, sp.bread_depth);
      }
      // The EE keeps the bottleneck orientation, so the held part lands on the
      // goal when the EE sits at goal - R_b * grip.
      const Vec3 ee_goal = goal_object - script.bottleneck.orientation * item.held->grip.position;
      const Vec3 g = site_in_ee(script, ee_goal);
      p.translate(Vec3(g.x(), g.y(), 0.0), sp.approach_speed);
      descend(p, -g.z(), sp);
      p.gripper(Gripper::Open);
      p.translate(Vec3(0.0, 0.0, sp.retreat), sp.approach_speed);
      break;
    }
  }
  return p.finish();
}

Pose sample_collection_pose(const Pose& b, const CollectionVolume& v, Rng& rng) {
  const double dx = rng.uniform(-v.x, v.x);
  const double dy = rng.uniform(-v.y, v.y);
  const double dz = rng.uniform(v.z_min, v.z_max);
  const double dyaw = v.sample_yaw ? rng.uniform(-v.yaw, v.yaw) : 0.0;
  return Pose{b.position + Vec3(dx, dy, dz), yaw_quat(b.yaw() + dyaw), Frame::World, Frame::EndEffector};
}

CollectedDemo collect_demo(const SceneItem& item, const PlanarPose4& placement, const DemoScript& script,
                           const CollectionConfig& cfg) {
  cfg.validate();
  const Pose b = bottleneck_world(item, placement);
  WorldState world = make_world(item, placement, b, cfg.seed, TableExtent{});

  CollectedDemo out;
  out.meta = {item.name, item.class_id, placement};
  DemoRecord& rec = out.record;
  rec.task = script.task;
  rec.bottleneck_pose = b;
  rec.bottleneck_obs = render(world, cfg.render);

  WorldState bare = world;
  bare.objects.erase(bare.objects.begin());
  if (bare.attached) --*bare.attached;
  if (render(bare, cfg.render).depth == rec.bottleneck_obs.depth) {
    throw VisibilityError("object '" + item.name + "' is not visible from its bottleneck pose");
  }

  Rng rng(derive_seed(cfg.seed, 0xA11C));
  rec.samples.reserve(static_cast<std::size_t>(cfg.samples));
  for (int i = 0; i < cfg.samples; ++i) {
    const Pose p = (i == 0 && cfg.anchor_first_sample) ? b : sample_collection_pose(b, cfg.volume, rng);
    const WorldState at = move_end_effector(world, p, cfg.sim);
    rec.samples.push_back({render(at, cfg.render), displacement_to_bottleneck(p, b), p});
  }

  rec.trajectory = scripted_trajectory(script, item, cfg.dt);
  const WorldState done = replay(world, rec.trajectory, cfg.sim);
  if (!check_success(done, script.task, cfg.sim)) {
    throw ScriptValidationError("scripted " + std::string(to_string(script.task)) + " demo fails on '" + item.name + "'");
  }
  return out;
}

}  // namespace rar
