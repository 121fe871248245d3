#include "rar/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rar {

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Grasp: return "grasp";
    case Task::Pour: return "pour";
    case Task::Unscrew: return "unscrew";
    case Task::InsertCap: return "insert_cap";
    case Task::InsertBread: return "insert_bread";
  }
  return "?";
}

Task task_from_string(std::string_view s) {
  for (Task t : kAllTasks) {
    if (to_string(t) == s) return t;
  }
  throw Error("unknown task symbol '" + std::string(s) + "'");
}

Pose camera_mount() {
  return Pose{Vec3(0.05, 0.0, 0.0), Quat::Identity(), Frame::EndEffector, Frame::Camera};
}

namespace {

std::pair<Vec3, Vec3> local_bounds(const Shape& shape) {
  struct Visitor {
    std::pair<Vec3, Vec3> operator()(const Cylinder& c) const {
      return {Vec3(-c.radius, -c.radius, 0.0), Vec3(c.radius, c.radius, c.height)};
    }
    std::pair<Vec3, Vec3> operator()(const Box& b) const { return {-b.half, b.half}; }
    std::pair<Vec3, Vec3> operator()(const TorusSegment& t) const {
      const double e = t.major + t.minor;
      return {Vec3(-e, -e, -t.minor), Vec3(e, e, t.minor)};
    }
  };
  return std::visit(Visitor{}, shape);
}

bool positive_sizes(const Shape& shape) {
  struct Visitor {
    bool operator()(const Cylinder& c) const { return c.radius > 0.0 && c.height > 0.0; }
    bool operator()(const Box& b) const { return (b.half.array() > 0.0).all(); }
    bool operator()(const TorusSegment& t) const { return t.major > 0.0 && t.minor > 0.0 && t.arc > 0.0; }
  };
  return std::visit(Visitor{}, shape);
}

std::array<Vec3, 8> corners(const Vec3& lo, const Vec3& hi) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    out[i] = Vec3((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  }
  return out;
}

double lowest_point(const PlacedObject& obj) {
  const auto [lo, hi] = obj.spec->bounds();
  double z = std::numeric_limits<double>::infinity();
  for (const Vec3& c : corners(lo, hi)) z = std::min(z, obj.pose.transform(c).z());
  return z;
}

// Footprint of a bread slice (first box part) inside a slot, tested in the
// slot owner's frame.
bool footprint_in_slot(const PlacedObject& item, const Pose& item_pose, const PlacedObject& owner, const Slot& slot) {
  const Box* box = nullptr;
  Pose part_local;
  for (const Primitive& p : item.spec->parts) {
    if ((box = std::get_if<Box>(&p.shape))) {
      part_local = p.local;
      break;
    }
  }
  if (box == nullptr) return false;
  const Pose owner_inv = inverse(owner.pose);
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      const Vec3 c_part(sx * box->half.x(), sy * box->half.y(), 0.0);
      const Vec3 c_world = item_pose.transform(part_local.transform(c_part));
      const Vec3 c_owner = owner_inv.transform(c_world);
      if (std::abs(c_owner.x() - slot.center.x()) > slot.half_x) return false;
      if (std::abs(c_owner.y() - slot.center.y()) > slot.half_y) return false;
    }
  }
  return true;
}

// Lowest rim point of a cup's body cylinder, in world coordinates.
std::optional<Vec3> cup_lip(const PlacedObject& cup) {
  for (const Primitive& p : cup.spec->parts) {
    const auto* cyl = std::get_if<Cylinder>(&p.shape);
    if (cyl == nullptr) continue;
    Vec3 best;
    double best_z = std::numeric_limits<double>::infinity();
    constexpr int kSamples = 72;
    for (int k = 0; k < kSamples; ++k) {
      const double a = 2.0 * kPi * k / kSamples;
      const Vec3 rim(cyl->radius * std::cos(a), cyl->radius * std::sin(a), cyl->height);
      const Vec3 w = cup.pose.transform(p.local.transform(rim));
      if (w.z() < best_z) {
        best_z = w.z();
        best = w;
      }
    }
    return best;
  }
  return std::nullopt;
}

WorldState place_end_effector(WorldState out, Pose target, const SimConfig& cfg) {
  if (target.position.z() < cfg.table_clearance) {
    target.position.z() = cfg.table_clearance;
    out.progress.clipped = true;
    ++out.progress.clip_events;
  }
  out.end_effector = target;
  if (out.attached) out.objects[*out.attached].pose = compose(out.end_effector, out.grip);
  return out;
}

bool cap_engaged(const WorldState& w, const SimConfig& cfg) {
  if (!w.attached || w.objects[*w.attached].spec->role != Role::Cap) return false;
  const auto fit = cap_fit(w, *w.attached);
  return fit && fit->radial <= cfg.engage_radius && fit->height >= -0.002 && fit->height <= cfg.engage_height;
}

void update_progress(WorldState& w, const WorldState& before, const SimConfig& cfg) {
  if (cap_engaged(w, cfg) && cap_engaged(before, cfg)) {
    w.progress.engaged_yaw += wrap_angle(w.end_effector.yaw() - before.end_effector.yaw());
  }
  if (w.attached) {
    const PlacedObject& held = w.objects[*w.attached];
    if (held.spec->role == Role::Cup && tilt_angle(held.pose) >= cfg.pour_min_tilt) {
      if (const auto lip = cup_lip(held)) {
        for (std::size_t j = 0; j < w.objects.size(); ++j) {
          if (j == *w.attached || !w.objects[j].spec->receptacle) continue;
          const auto* basin = std::get_if<Basin>(&*w.objects[j].spec->receptacle);
          if (basin == nullptr) continue;
          const Vec3 local = inverse(w.objects[j].pose).transform(*lip);
          const double r = std::hypot(local.x() - basin->center.x(), local.y() - basin->center.y());
          if (r <= basin->radius && lip->z() > w.objects[j].pose.transform(basin->center).z()) w.progress.poured = true;
        }
      }
    }
  }
}

}  // namespace

std::pair<Vec3, Vec3> ObjectSpec::bounds() const {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Primitive& p : parts) {
    const auto [plo, phi] = local_bounds(p.shape);
    for (const Vec3& c : corners(plo, phi)) {
      const Vec3 w = p.local.transform(c);
      lo = lo.cwiseMin(w);
      hi = hi.cwiseMax(w);
    }
  }
  if (parts.empty()) return {Vec3::Zero(), Vec3::Zero()};
  return {lo, hi};
}

double ObjectSpec::footprint_radius() const {
  const auto [lo, hi] = bounds();
  return std::max({std::hypot(lo.x(), lo.y()), std::hypot(lo.x(), hi.y()), std::hypot(hi.x(), lo.y()),
                   std::hypot(hi.x(), hi.y())});
}

void ObjectSpec::validate() const {
  if (parts.empty()) throw Error("object '" + name + "' has no primitives");
  for (const Primitive& p : parts) {
    if (!positive_sizes(p.shape)) throw Error("object '" + name + "' has a non-positive size parameter");
  }
  const auto [lo, hi] = bounds();
  if (((hi - lo).array() > 0.3 + 1e-12).any()) throw Error("object '" + name + "' does not fit in a 0.3 m cube");
}

double tilt_angle(const Pose& p) {
  const Vec3 z = p.orientation * Vec3::UnitZ();
  return std::acos(std::clamp(z.z(), -1.0, 1.0));
}

std::optional<CapFit> cap_fit(const WorldState& world, std::size_t cap_index) {
  const Pose& cap = world.objects.at(cap_index).pose;
  std::optional<CapFit> best;
  for (std::size_t j = 0; j < world.objects.size(); ++j) {
    if (j == cap_index || !world.objects[j].spec->receptacle) continue;
    const auto* mouth = std::get_if<Mouth>(&*world.objects[j].spec->receptacle);
    if (mouth == nullptr) continue;
    const Vec3 m = world.objects[j].pose.transform(mouth->center);
    const CapFit fit{std::hypot(cap.position.x() - m.x(), cap.position.y() - m.y()), cap.position.z() - m.z()};
    if (!best || fit.radial < best->radial) best = fit;
  }
  return best;
}

WorldState step(const WorldState& world, const Twist& action, double dt, const SimConfig& cfg) {
  WorldState out = place_end_effector(world, integrate_twist(world.end_effector, action, dt), cfg);
  update_progress(out, world, cfg);
  ++out.progress.steps;
  out.progress.time += dt;
  return out;
}

WorldState move_end_effector(const WorldState& world, const Pose& target, const SimConfig& cfg) {
  if (target.frame != Frame::World || target.child != Frame::EndEffector) {
    throw FrameError("move_end_effector: target must be a World <- EndEffector pose");
  }
  WorldState out = place_end_effector(world, target, cfg);
  update_progress(out, world, cfg);
  return out;
}

double support_height(const WorldState& world, std::size_t self, const Pose& released) {
  const PlacedObject& item = world.objects.at(self);
  double best = 0.0;
  for (std::size_t j = 0; j < world.objects.size(); ++j) {
    if (j == self) continue;
    const PlacedObject& other = world.objects[j];
    const Vec3 local = inverse(other.pose).transform(released.position);
    double candidate = -std::numeric_limits<double>::infinity();
    bool resolved = false;
    if (other.spec->receptacle) {
      if (const auto* slot = std::get_if<Slot>(&*other.spec->receptacle)) {
        if (item.spec->role == Role::Bread && footprint_in_slot(item, released, other, *slot)) {
          candidate = other.pose.position.z() + slot->center.z() - slot->depth;
          resolved = true;
        }
      } else if (const auto* mouth = std::get_if<Mouth>(&*other.spec->receptacle)) {
        if (std::hypot(local.x() - mouth->center.x(), local.y() - mouth->center.y()) <= mouth->radius) {
          candidate = other.pose.position.z() + mouth->center.z();
          resolved = true;
        }
      }
    }
    if (!resolved) {
      const auto [lo, hi] = other.spec->bounds();
      if (local.x() >= lo.x() && local.x() <= hi.x() && local.y() >= lo.y() && local.y() <= hi.y()) {
        candidate = other.pose.position.z() + hi.z();
      }
    }
    best = std::max(best, candidate);
  }
  return best;
}

WorldState set_gripper(const WorldState& world, Gripper cmd, const SimConfig& cfg) {
  WorldState out = world;
  if (cmd == world.gripper) return out;
  out.gripper = cmd;
  if (cmd == Gripper::Closed) {
    const Vec3 origin = world.end_effector.position;
    std::optional<std::size_t> best;
    double best_d = cfg.grasp_radius;
    for (std::size_t i = 0; i < world.objects.size(); ++i) {
      for (const Vec3& site : world.objects[i].spec->grasp_sites) {
        const double d = (world.objects[i].pose.transform(site) - origin).norm();
        if (d <= best_d) {
          best_d = d;
          best = i;
        }
      }
    }
    if (best) {
      out.attached = best;
      out.grip = compose(inverse(world.end_effector), world.objects[*best].pose);
    }
    return out;
  }
  if (world.attached) {
    const std::size_t idx = *world.attached;
    PlacedObject& obj = out.objects[idx];
    // Released objects settle upright, keeping their yaw.
    Pose rest{obj.pose.position, yaw_quat(obj.pose.yaw()), Frame::World, Frame::Object};
    rest.position.z() = support_height(out, idx, rest);
    obj.pose = rest;
    out.attached.reset();
    out.grip = Pose::identity(Frame::EndEffector);
    out.grip.child = Frame::Object;
  }
  return out;
}

bool check_success(const WorldState& world, Task task, const SimConfig& cfg) {
  switch (task) {
    case Task::Grasp: {
      if (!world.attached) return false;
      return lowest_point(world.objects[*world.attached]) >= cfg.lift_height;
    }
    case Task::Pour:
      return world.progress.poured;
    case Task::Unscrew: {
      if (world.progress.engaged_yaw < cfg.unscrew_min_yaw - 1e-6) return false;
      if (!world.attached || world.objects[*world.attached].spec->role != Role::Cap) return false;
      const auto fit = cap_fit(world, *world.attached);
      return fit && fit->height >= cfg.unscrew_lift;
    }
    case Task::InsertCap: {
      for (std::size_t i = 0; i < world.objects.size(); ++i) {
        if (world.objects[i].spec->role != Role::Cap) continue;
        const auto fit = cap_fit(world, i);
        if (fit && fit->radial <= cfg.cap_radial_tolerance && std::abs(fit->height) <= cfg.cap_depth_tolerance) {
          return true;
        }
      }
      return false;
    }
    case Task::InsertBread: {
      for (std::size_t i = 0; i < world.objects.size(); ++i) {
        const PlacedObject& bread = world.objects[i];
        if (bread.spec->role != Role::Bread) continue;
        for (std::size_t j = 0; j < world.objects.size(); ++j) {
          if (j == i || !world.objects[j].spec->receptacle) continue;
          const auto* slot = std::get_if<Slot>(&*world.objects[j].spec->receptacle);
          if (slot == nullptr) continue;
          const double top = world.objects[j].pose.position.z() + slot->center.z();
          if (footprint_in_slot(bread, bread.pose, world.objects[j], *slot) &&
              lowest_point(bread) <= top - cfg.bread_min_depth) {
            return true;
          }
        }
      }
      return false;
    }
  }
  return false;
}

bool check_success(const WorldState& world, std::string_view task, const SimConfig& cfg) {
  return check_success(world, task_from_string(task), cfg);
}

PlanarPose4 sample_test_pose(const ObjectSpec& /*spec*/, Rng& rng, const PlacementRegion& region) {
  const TableExtent& t = region.table;
  const double x = rng.uniform(t.x_min + region.margin, t.x_max - region.margin);
  const double y = rng.uniform(t.y_min + region.margin, t.y_max - region.margin);
  const double theta = rng.uniform(-kPi, kPi);
  return {x, y, 0.0, theta};
}

}  // namespace rar
