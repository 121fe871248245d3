#include "rar/catalog.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <set>

namespace rar {

namespace {

using json = nlohmann::json;

Pose part(const Vec3& p, const Quat& q = Quat::Identity()) { return Pose{p, q, Frame::Object, Frame::Object}; }

Quat rot_x(double a) { return Quat(Eigen::AngleAxisd(a, Vec3::UnitX())); }

Rgb shade_of(const Rgb& c, double k) { return {c.r * k, c.g * k, c.b * k}; }

const Rgb kMarker{0.92, 0.92, 0.95};
const Rgb kDark{0.12, 0.10, 0.09};

class Params {
 public:
  Params(const std::string& class_id, const ClassParams& given) : given_(given), class_id_(class_id) {}
  double operator()(const std::string& key, double fallback) {
    used_.insert(key);
    defaults_[key] = fallback;
    const auto it = given_.find(key);
    const double v = it == given_.end() ? fallback : it->second;
    if (!(v > 0.0)) throw Error(class_id_ + ": parameter '" + key + "' must be positive");
    return v;
  }
  const ClassParams& defaults() const { return defaults_; }
  void check_unused() const {
    for (const auto& [k, v] : given_) {
      if (!used_.count(k)) throw Error(class_id_ + ": unknown parameter '" + k + "'");
    }
  }

 private:
  const ClassParams& given_;
  std::string class_id_;
  std::set<std::string> used_;
  ClassParams defaults_;
};

std::shared_ptr<ObjectSpec> make_spec(const std::string& name, const std::string& class_id, const Rgb& color) {
  auto s = std::make_shared<ObjectSpec>();
  s->name = name;
  s->class_id = class_id;
  s->color = color;
  return s;
}

// Handle loop standing in the xz plane, centred at (x, 0, z), bulging along
// +x (or -x when `flip`).
Primitive handle(double x, double z, double major, double minor, const Rgb& color, bool flip = false) {
  Quat q = rot_x(0.5 * kPi);
  if (flip) q = Quat(Eigen::AngleAxisd(kPi, Vec3::UnitZ())) * q;
  return {TorusSegment{major, minor, kPi}, part(Vec3(x, 0.0, z), q), color};
}

std::shared_ptr<ObjectSpec> bottle_body(const std::string& name, const std::string& class_id, const Rgb& color,
                                        double r, double h, double neck_r, double neck_h) {
  auto s = make_spec(name, class_id, color);
  s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), color});
  s->parts.push_back({Cylinder{neck_r, neck_h}, part(Vec3(0.0, 0.0, h)), shade_of(color, 0.8)});
  s->parts.push_back({Box{Vec3(0.007, 0.005, 0.004)}, part(Vec3(0.6 * r, 0.0, h + 0.004)), kMarker});
  s->receptacle = Mouth{Vec3(0.0, 0.0, h + neck_h), neck_r};
  return s;
}

std::shared_ptr<ObjectSpec> cap_spec(const std::string& name, const Rgb& color, double r, double h) {
  auto s = make_spec(name, "cap", color);
  s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), color});
  s->role = Role::Cap;
  s->grasp_sites.push_back(Vec3(0.0, 0.0, 0.6 * h));
  return s;
}

using Builder = std::function<void(SceneItem&, Params&, const Rgb&)>;

const std::map<std::string, std::pair<Task, Builder>>& registry() {
  static const std::map<std::string, std::pair<Task, Builder>> reg = {
      {"can",
       {Task::Grasp,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.033);
          const double h = p("height", 0.12);
          const double tab = p("tab", 0.014);
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), c});
          s->parts.push_back({Box{Vec3(0.5 * tab, 0.25 * tab, 0.002)}, part(Vec3(0.55 * r, 0.0, h + 0.002)), kMarker});
          s->grasp_sites.push_back(Vec3(0.0, 0.0, h - 0.02));
          it.object = s;
        }}},
      {"mug",
       {Task::Grasp,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.04);
          const double h = p("height", 0.10);
          const double hr = p("handle_radius", 0.025);
          const double ht = p("handle_thickness", 0.007);
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), c});
          s->parts.push_back(handle(r, 0.5 * h, hr, ht, shade_of(c, 0.85)));
          s->grasp_sites.push_back(Vec3(r + hr, 0.0, 0.5 * h));
          it.object = s;
        }}},
      {"cup",
       {Task::Pour,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.035);
          const double h = p("height", 0.09);
          const double bowl_r = p("bowl_radius", 0.075);
          const double bowl_h = p("bowl_height", 0.04);
          const double offset = p("bowl_offset", 0.17);
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), c});
          s->parts.push_back({TorusSegment{0.018, 0.006, kPi},
                              part(Vec3(0.0, r, 0.5 * h), Quat(Eigen::AngleAxisd(0.5 * kPi, Vec3::UnitZ())) * rot_x(0.5 * kPi)),
                              shade_of(c, 0.85)});
          s->role = Role::Cup;
          s->grasp_sites.push_back(Vec3(0.0, 0.0, 0.6 * h));
          it.object = s;

          const Rgb bowl_color{0.85, 0.85, 0.80};
          auto bowl = make_spec(it.name + "/bowl", "bowl", bowl_color);
          bowl->parts.push_back({Cylinder{bowl_r, bowl_h}, part(Vec3::Zero()), bowl_color});
          bowl->parts.push_back({Cylinder{0.8 * bowl_r, 0.002}, part(Vec3(0.0, 0.0, bowl_h)), shade_of(bowl_color, 0.55)});
          bowl->receptacle = Basin{Vec3(0.0, 0.0, bowl_h), bowl_r};
          it.companions.push_back({bowl, PlanarPose4(offset, 0.0, 0.0, 0.0)});
        }}},
      {"capped_bottle",
       {Task::Unscrew,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.035);
          const double h = p("height", 0.15);
          const double nr = p("neck_radius", 0.014);
          const double nh = p("neck_height", 0.025);
          const double cr = p("cap_radius", 0.018);
          const double ch = p("cap_height", 0.02);
          it.object = bottle_body(it.name, it.class_id, c, r, h, nr, nh);
          it.companions.push_back({cap_spec(it.name + "/cap", Rgb{0.95, 0.85, 0.2}, cr, ch), PlanarPose4(0.0, 0.0, h + nh, 0.0)});
        }}},
      {"open_bottle",
       {Task::InsertCap,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.035);
          const double h = p("height", 0.15);
          const double nr = p("neck_radius", 0.014);
          const double nh = p("neck_height", 0.025);
          const double cr = p("cap_radius", 0.018);
          const double ch = p("cap_height", 0.02);
          it.object = bottle_body(it.name, it.class_id, c, r, h, nr, nh);
          auto cap = cap_spec(it.name + "/cap", Rgb{0.9, 0.3, 0.6}, cr, ch);
          it.held = HeldTool{cap, Pose{Vec3(0.0, 0.0, -0.6 * ch), Quat::Identity(), Frame::EndEffector, Frame::Object}};
        }}},
      {"toaster",
       {Task::InsertBread,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double len = p("length", 0.18);
          const double wid = p("width", 0.12);
          const double h = p("height", 0.13);
          const double sl = p("slot_length", 0.12);
          const double sw = p("slot_width", 0.016);
          const double bl = p("bread_length", 0.10);
          const double bt = p("bread_thickness", 0.01);
          const double bh = p("bread_height", 0.09);
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({Box{Vec3(0.5 * len, 0.5 * wid, 0.5 * h)}, part(Vec3(0.0, 0.0, 0.5 * h)), c});
          s->parts.push_back({Box{Vec3(0.5 * sl, 0.5 * sw, 0.001)}, part(Vec3(0.0, 0.0, h + 0.001)), kDark});
          s->parts.push_back({Box{Vec3(0.008, 0.015, 0.012)}, part(Vec3(0.5 * len + 0.008, 0.0, 0.6 * h)), kMarker});
          s->receptacle = Slot{Vec3(0.0, 0.0, h), 0.5 * sl, 0.5 * sw, 0.8 * h};
          it.object = s;

          const Rgb crust{0.78, 0.58, 0.32};
          auto bread = make_spec(it.name + "/bread", "bread", crust);
          bread->parts.push_back({Box{Vec3(0.5 * bl, 0.5 * bt, 0.5 * bh)}, part(Vec3(0.0, 0.0, 0.5 * bh)), crust});
          bread->role = Role::Bread;
          bread->grasp_sites.push_back(Vec3(0.0, 0.0, bh));
          it.held = HeldTool{bread, Pose{Vec3(0.0, 0.0, -bh), Quat::Identity(), Frame::EndEffector, Frame::Object}};
        }}},
      {"banana",
       {Task::Grasp,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double bend = p("bend_radius", 0.09);
          const double t = p("thickness", 0.018);
          const double arc = p("arc_deg", 110.0) * kPi / 180.0;
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({TorusSegment{bend, t, arc}, part(Vec3(-bend, 0.0, t)), c});
          s->parts.push_back({Cylinder{0.5 * t, 0.012},
                              part(Vec3(-bend + bend * std::cos(0.5 * arc), bend * std::sin(0.5 * arc), t)),
                              Rgb{0.35, 0.25, 0.1}});
          s->grasp_sites.push_back(Vec3(0.0, 0.0, t));
          it.object = s;
        }}},
      {"teapot",
       {Task::Grasp,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.05);
          const double h = p("height", 0.09);
          const double hr = p("handle_radius", 0.025);
          const double ht = p("handle_thickness", 0.007);
          const double spout = p("spout_length", 0.05);
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), c});
          s->parts.push_back(handle(r, 0.5 * h, hr, ht, shade_of(c, 0.85)));
          s->parts.push_back({Box{Vec3(0.5 * spout, 0.008, 0.008)}, part(Vec3(-r - 0.5 * spout + 0.005, 0.0, 0.6 * h)),
                              shade_of(c, 0.9)});
          s->parts.push_back({Cylinder{0.012, 0.015}, part(Vec3(0.0, 0.0, h)), kMarker});
          s->grasp_sites.push_back(Vec3(r + hr, 0.0, 0.5 * h));
          it.object = s;
        }}},
      {"thermos",
       {Task::Unscrew,
        [](SceneItem& it, Params& p, const Rgb& c) {
          const double r = p("radius", 0.04);
          const double h = p("height", 0.155);
          const double nr = p("neck_radius", 0.016);
          const double nh = p("neck_height", 0.02);
          const double cr = p("cap_radius", 0.021);
          const double ch = p("cap_height", 0.025);
          auto s = make_spec(it.name, it.class_id, c);
          s->parts.push_back({Cylinder{r, h}, part(Vec3::Zero()), c});
          s->parts.push_back({Cylinder{nr, nh}, part(Vec3(0.0, 0.0, h)), kMarker});
          s->parts.push_back({Box{Vec3(0.012, 0.006, 0.01)}, part(Vec3(-r - 0.008, 0.0, 0.8 * h)), shade_of(c, 0.6)});
          s->receptacle = Mouth{Vec3(0.0, 0.0, h + nh), nr};
          it.object = s;
          it.companions.push_back({cap_spec(it.name + "/cap", shade_of(c, 0.7), cr, ch), PlanarPose4(0.0, 0.0, h + nh, 0.0)});
        }}},
  };
  return reg;
}

Rgb parse_rgb(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error("color must be an [r, g, b] array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw Error(where + ": unknown key '" + k + "'");
  }
}

}  // namespace

std::vector<std::string> known_classes() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

ClassParams default_params(const std::string& class_id) {
  const auto it = registry().find(class_id);
  if (it == registry().end()) throw Error("unknown object class '" + class_id + "'");
  const ClassParams none;
  Params p(class_id, none);
  SceneItem item;
  item.name = class_id;
  item.class_id = class_id;
  it->second.second(item, p, Rgb{0.5, 0.5, 0.5});
  return p.defaults();
}

SceneItem build_item(const std::string& name, const std::string& class_id, const std::string& split,
                     const ClassParams& params, const Rgb& color, double bottleneck_height) {
  const auto it = registry().find(class_id);
  if (it == registry().end()) throw Error("unknown object class '" + class_id + "'");
  SceneItem item;
  item.name = name;
  item.class_id = class_id;
  item.split = split;
  item.task = it->second.first;
  Params p(class_id, params);
  it->second.second(item, p, color);
  p.check_unused();
  auto spec = std::const_pointer_cast<ObjectSpec>(item.object);
  spec->task_affinity = item.task;
  item.object->validate();
  for (const Companion& c : item.companions) c.spec->validate();
  if (item.held) item.held->spec->validate();
  item.bottleneck = Pose{Vec3(0.0, 0.0, bottleneck_height), Quat::Identity(), Frame::Object, Frame::EndEffector};
  return item;
}

const SceneItem& Catalog::find(std::string_view name) const {
  for (const SceneItem& it : items) {
    if (it.name == name) return it;
  }
  throw Error("catalog has no object named '" + std::string(name) + "'");
}

std::vector<const SceneItem*> Catalog::split(std::string_view s) const {
  std::vector<const SceneItem*> out;
  for (const SceneItem& it : items) {
    if (it.split == s) out.push_back(&it);
  }
  return out;
}

Catalog parse_catalog(const json& doc) {
  reject_unknown(doc, {"version", "bottleneck_height", "objects"}, "object library");
  if (doc.value("version", 1) != 1) throw Error("object library: unsupported version");
  Catalog cat;
  cat.bottleneck_height = doc.value("bottleneck_height", 0.35);
  std::set<std::string> names;
  const json& objects = doc.at("objects");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const json& o = objects[i];
    const std::string where = "objects[" + std::to_string(i) + "]";
    reject_unknown(o, {"name", "class_id", "split", "color", "params"}, where);
    const std::string name = o.at("name").get<std::string>();
    if (!names.insert(name).second) throw Error(where + ": duplicate name '" + name + "'");
    const std::string split = o.at("split").get<std::string>();
    if (split != "train" && split != "intra" && split != "inter") throw Error(where + ": bad split '" + split + "'");
    ClassParams params;
    if (o.contains("params")) {
      for (const auto& [k, v] : o.at("params").items()) params[k] = v.get<double>();
    }
    try {
      cat.items.push_back(build_item(name, o.at("class_id").get<std::string>(), split, params, parse_rgb(o.at("color")),
                                     cat.bottleneck_height));
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  return cat;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open object library '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error("object library '" + path.string() + "': " + e.what());
  }
  return parse_catalog(doc);
}

Pose bottleneck_world(const SceneItem& item, const PlanarPose4& placement) {
  return compose(placement.to_pose(Frame::World, Frame::Object), item.bottleneck);
}

Pose deployment_start_pose(double camera_height) {
  const Pose camera{Vec3(0.0, 0.0, camera_height), Quat::Identity(), Frame::World, Frame::Camera};
  return compose(camera, inverse(camera_mount()));
}

WorldState make_world(const SceneItem& item, const PlanarPose4& placement, const Pose& end_effector,
                      std::uint64_t seed, const TableExtent& table) {
  WorldState w;
  w.table = table;
  w.rng_seed = seed;
  w.end_effector = end_effector;
  const Pose base = placement.to_pose(Frame::World, Frame::Object);
  w.objects.push_back({item.object, base});
  for (const Companion& c : item.companions) {
    w.objects.push_back({c.spec, compose(base, c.offset.to_pose(Frame::Object, Frame::Object))});
  }
  if (item.held) {
    w.objects.push_back({item.held->spec, compose(end_effector, item.held->grip)});
    w.attached = w.objects.size() - 1;
    w.grip = item.held->grip;
    w.gripper = Gripper::Closed;
  }
  return w;
}

}  // namespace rar
