#include "rar/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rar {

void Observation::check() const {
  if (!well_formed()) throw Error("observation must be 128x128 RGB + 128x128 depth");
}

double focal_length_px(double fov_deg) {
  return 0.5 * Observation::kWidth / std::tan(0.5 * fov_deg * kPi / 180.0);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Hit {
  double t = kInf;
  Vec3 normal = Vec3::UnitZ();  // primitive-local
};

bool hit_cylinder(const Cylinder& c, const Vec3& o, const Vec3& d, double t_min, Hit& best) {
  bool found = false;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-18) {
    const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
    const double cc = o.x() * o.x() + o.y() * o.y() - c.radius * c.radius;
    const double disc = b * b - 4.0 * a * cc;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      for (double t : {(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)}) {
        if (t <= t_min || t >= best.t) continue;
        const double z = o.z() + t * d.z();
        if (z < 0.0 || z > c.height) continue;
        const Vec3 p = o + t * d;
        best = {t, Vec3(p.x(), p.y(), 0.0) / c.radius};
        found = true;
        break;
      }
    }
  }
  if (std::abs(d.z()) > 1e-18) {
    for (double zc : {0.0, c.height}) {
      const double t = (zc - o.z()) / d.z();
      if (t <= t_min || t >= best.t) continue;
      const Vec3 p = o + t * d;
      if (p.x() * p.x() + p.y() * p.y() > c.radius * c.radius) continue;
      best = {t, Vec3(0.0, 0.0, zc > 0.0 ? 1.0 : -1.0)};
      found = true;
    }
  }
  return found;
}

// Slab test. Returns entry/exit parameters and the entry axis.
bool slab(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d, double& t0, double& t1, int& axis,
          double& sign) {
  t0 = -kInf;
  t1 = kInf;
  axis = 0;
  sign = 1.0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-18) {
      if (o[k] < lo[k] || o[k] > hi[k]) return false;
      continue;
    }
    double a = (lo[k] - o[k]) / d[k];
    double b = (hi[k] - o[k]) / d[k];
    double s = -1.0;
    if (a > b) {
      std::swap(a, b);
      s = 1.0;
    }
    if (a > t0) {
      t0 = a;
      axis = k;
      sign = s;
    }
    t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  return true;
}

bool hit_box(const Box& bx, const Vec3& o, const Vec3& d, double t_min, Hit& best) {
  double t0 = 0.0;
  double t1 = 0.0;
  int axis = 0;
  double sign = 1.0;
  if (!slab(-bx.half, bx.half, o, d, t0, t1, axis, sign)) return false;
  if (t0 <= t_min || t0 >= best.t) return false;
  Vec3 n = Vec3::Zero();
  n[axis] = sign;
  best = {t0, n};
  return true;
}

struct TorusQuery {
  double dist;
  Vec3 normal;
};

TorusQuery torus_sdf(const TorusSegment& tor, const Vec3& p) {
  const double half = 0.5 * tor.arc;
  const double phi = std::atan2(p.y(), p.x());
  Vec3 center;
  if (std::abs(phi) <= half) {
    center = Vec3(tor.major * std::cos(phi), tor.major * std::sin(phi), 0.0);
  } else {
    const double end = phi > 0.0 ? half : -half;
    center = Vec3(tor.major * std::cos(end), tor.major * std::sin(end), 0.0);
  }
  const Vec3 r = p - center;
  const double len = r.norm();
  return {len - tor.minor, len > 1e-12 ? Vec3(r / len) : Vec3(Vec3::UnitZ())};
}

bool hit_torus(const TorusSegment& tor, const Vec3& o, const Vec3& d, double t_min, Hit& best) {
  const double e = tor.major + tor.minor;
  double t0 = 0.0;
  double t1 = 0.0;
  int axis = 0;
  double sign = 1.0;
  if (!slab(Vec3(-e, -e, -tor.minor), Vec3(e, e, tor.minor), o, d, t0, t1, axis, sign)) return false;
  t0 = std::max(t0, t_min);
  t1 = std::min(t1, best.t);
  if (t0 >= t1) return false;
  const double speed = d.norm();
  double t = t0;
  for (int it = 0; it < 96 && t < t1; ++it) {
    const TorusQuery q = torus_sdf(tor, o + t * d);
    if (q.dist < 1e-5) {
      best = {t, q.normal};
      return true;
    }
    t += q.dist / speed;
  }
  return false;
}

bool hit_shape(const Shape& s, const Vec3& o, const Vec3& d, double t_min, Hit& best) {
  if (const auto* c = std::get_if<Cylinder>(&s)) return hit_cylinder(*c, o, d, t_min, best);
  if (const auto* b = std::get_if<Box>(&s)) return hit_box(*b, o, d, t_min, best);
  return hit_torus(std::get<TorusSegment>(s), o, d, t_min, best);
}

double bounding_radius(const Shape& s, Vec3& center) {
  if (const auto* c = std::get_if<Cylinder>(&s)) {
    center = Vec3(0.0, 0.0, 0.5 * c->height);
    return std::hypot(c->radius, 0.5 * c->height);
  }
  if (const auto* b = std::get_if<Box>(&s)) {
    center = Vec3::Zero();
    return b->half.norm();
  }
  const auto& t = std::get<TorusSegment>(s);
  center = Vec3::Zero();
  return t.major + t.minor;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::optional<Eigen::Vector2d> project(const Pose& camera, const Vec3& world_point, double fov_deg) {
  const Vec3 pc = inverse(camera).transform(world_point);
  if (pc.z() >= 0.0) return std::nullopt;
  const double f = focal_length_px(fov_deg);
  const double depth = -pc.z();
  return Eigen::Vector2d(0.5 * Observation::kWidth + f * pc.x() / depth, 0.5 * Observation::kHeight - f * pc.y() / depth);
}

Observation render(const WorldState& world, const RenderOptions& opts) {
  constexpr int W = Observation::kWidth;
  constexpr int H = Observation::kHeight;
  const double f = focal_length_px(opts.fov_deg);

  Observation obs;
  obs.camera_pose = world.camera_pose();
  obs.rgb.assign(Observation::kPixels * 3, 0);
  obs.depth.assign(Observation::kPixels, 0.0f);

  std::vector<double> zbuf(Observation::kPixels, kInf);
  std::vector<Rgb> color(Observation::kPixels, Rgb{});

  const Pose& cam = obs.camera_pose;
  const Eigen::Matrix3d cam_rot = cam.rotation();
  const Vec3 light = opts.light_dir.normalized();
  auto shade = [&](const Rgb& base, const Vec3& n_world, const Vec3& ray_world) {
    Vec3 n = n_world;
    if (n.dot(ray_world) > 0.0) n = -n;
    const double k = opts.ambient + (1.0 - opts.ambient) * std::max(0.0, n.dot(light));
    return Rgb{base.r * k, base.g * k, base.b * k};
  };
  auto ray_dir = [&](int i, int j) { return Vec3((i + 0.5 - 0.5 * W) / f, -(j + 0.5 - 0.5 * H) / f, -1.0); };

  // Table plane z = 0.
  for (int j = 0; j < H; ++j) {
    for (int i = 0; i < W; ++i) {
      const Vec3 dw = cam_rot * ray_dir(i, j);
      if (dw.z() >= 0.0) continue;
      const double t = -cam.position.z() / dw.z();
      if (t <= opts.near_plane) continue;
      const Vec3 p = cam.position + t * dw;
      if (!world.table.contains(p.x(), p.y())) continue;
      const std::size_t idx = static_cast<std::size_t>(j) * W + i;
      zbuf[idx] = t;
      color[idx] = shade(opts.table_color, Vec3::UnitZ(), dw);
    }
  }

  const Pose cam_inv = inverse(cam);
  for (const PlacedObject& obj : world.objects) {
    for (const Primitive& prim : obj.spec->parts) {
      const Pose world_from_prim = compose(obj.pose, prim.local);
      const Pose cam_from_prim = compose(cam_inv, world_from_prim);
      const Eigen::Matrix3d r_cp = cam_from_prim.rotation();
      const Eigen::Matrix3d r_pc = r_cp.transpose();
      const Vec3 origin_local = r_pc * (-cam_from_prim.position);
      const Eigen::Matrix3d r_wp = world_from_prim.rotation();

      Vec3 bc_local;
      const double radius = bounding_radius(prim.shape, bc_local);
      const Vec3 bc = cam_from_prim.transform(bc_local);
      const double depth = -bc.z();
      if (depth + radius <= opts.near_plane) continue;

      int i0 = 0;
      int i1 = W - 1;
      int j0 = 0;
      int j1 = H - 1;
      if (depth - radius > opts.near_plane) {
        double umin = kInf;
        double umax = -kInf;
        double vmin = kInf;
        double vmax = -kInf;
        for (double x : {bc.x() - radius, bc.x() + radius}) {
          for (double z : {depth - radius, depth + radius}) {
            const double u = 0.5 * W + f * x / z;
            umin = std::min(umin, u);
            umax = std::max(umax, u);
          }
        }
        for (double y : {bc.y() - radius, bc.y() + radius}) {
          for (double z : {depth - radius, depth + radius}) {
            const double v = 0.5 * H - f * y / z;
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
          }
        }
        i0 = std::max(0, static_cast<int>(std::floor(umin - 0.5)));
        i1 = std::min(W - 1, static_cast<int>(std::ceil(umax)));
        j0 = std::max(0, static_cast<int>(std::floor(vmin - 0.5)));
        j1 = std::min(H - 1, static_cast<int>(std::ceil(vmax)));
      }

      for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) {
          const std::size_t idx = static_cast<std::size_t>(j) * W + i;
          const Vec3 dc = ray_dir(i, j);
          Hit hit;
          hit.t = zbuf[idx];
          if (!hit_shape(prim.shape, origin_local, r_pc * dc, opts.near_plane, hit)) continue;
          zbuf[idx] = hit.t;
          color[idx] = shade(prim.color, r_wp * hit.normal, cam_rot * dc);
        }
      }
    }
  }

  std::optional<Rng> noise;
  if (opts.rgb_noise > 0.0 || opts.depth_noise > 0.0) noise.emplace(derive_seed(world.rng_seed, world.progress.steps));
  for (std::size_t idx = 0; idx < Observation::kPixels; ++idx) {
    Rgb c = color[idx];
    double z = std::isfinite(zbuf[idx]) ? zbuf[idx] : 0.0;
    if (noise && opts.rgb_noise > 0.0) {
      c.r += opts.rgb_noise * noise->normal();
      c.g += opts.rgb_noise * noise->normal();
      c.b += opts.rgb_noise * noise->normal();
    }
    if (noise && opts.depth_noise > 0.0 && z > 0.0) z = std::max(0.0, z + opts.depth_noise * noise->normal());
    obs.rgb[3 * idx + 0] = to_byte(c.r);
    obs.rgb[3 * idx + 1] = to_byte(c.g);
    obs.rgb[3 * idx + 2] = to_byte(c.b);
    obs.depth[idx] = static_cast<float>(z);
  }
  return obs;
}

}  // namespace rar
