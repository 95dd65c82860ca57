#pragma once

// Procedural multiview depth data: forward-kinematics pose sampling and an
// analytic capsule-body depth renderer.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthpose/core.hpp"
#include "depthpose/random.hpp"

namespace depthpose {

/// Per-joint body dimensions. Bone j connects joint j to its parent; root
/// entries of the bone arrays are unused (zero).
struct BodyShape {
  std::vector<double> bone_length;
  std::vector<double> bone_radius;
  std::vector<double> joint_radius;

  void validate(const Skeleton &sk) const {
    const auto n = sk.joint_count();
    detail::require(bone_length.size() == n && bone_radius.size() == n && joint_radius.size() == n,
                    "body shape size does not match skeleton");
    for (std::size_t j = 0; j < n; ++j) {
      detail::require(joint_radius[j] > 0 && joint_radius[j] <= 0.3, "joint radius out of (0, 0.3]");
      if (sk.parents[j] < 0)
        continue;
      detail::require(bone_length[j] > 0 && bone_length[j] <= 1.2, "bone length out of (0, 1.2]");
      detail::require(bone_radius[j] > 0 && bone_radius[j] <= 0.3, "bone radius out of (0, 0.3]");
    }
  }
};

struct AngleRange {
  double lo = 0.0, hi = 0.0;
};

/// Joint-angle sampler. Joint j's bone direction is its rest direction
/// (expressed in the root frame) rotated by Rz*Ry*Rx of angles drawn from
/// `ranges[j]`, composed with the accumulated rotation of its parent. The
/// root's ranges orient the whole body; root position is uniform in the box.
struct PoseSamplerConfig {
  std::vector<Vec3> rest_direction;
  std::vector<std::array<AngleRange, 3>> ranges;
  Vec3 root_min{-0.15, -0.15, 0.95};
  Vec3 root_max{0.15, 0.15, 1.05};
  std::uint64_t seed = 0;
  std::size_t count = 1;

  void validate(const Skeleton &sk) const {
    const auto n = sk.joint_count();
    detail::require(rest_direction.size() == n && ranges.size() == n,
                    "pose sampler config size does not match skeleton");
    for (const auto &r : ranges)
      for (const auto &a : r)
        detail::require(a.lo <= a.hi && std::isfinite(a.lo) && std::isfinite(a.hi),
                        "angle range must satisfy lo <= hi");
    detail::require(root_min.x <= root_max.x && root_min.y <= root_max.y && root_min.z <= root_max.z,
                    "root box must satisfy min <= max");
  }
};

namespace detail {

struct BoneDefaults {
  Vec3 rest;
  double length;
  double radius;
  double joint_radius;
  std::array<AngleRange, 3> ranges;
};

// Root frame: x = body right, y = facing direction, z = up.
inline const std::map<std::string, BoneDefaults> &bone_table() {
  constexpr double pi = 3.14159265358979323846;
  static const std::map<std::string, BoneDefaults> table = {
      // UBC3V-style names.
      {"spine-base", {{0, 0, 1}, 0.0, 0.0, 0.13, {{{-0.1, 0.1}, {-0.1, 0.1}, {-pi / 3, pi / 3}}}}},
      {"spine-mid", {{0, 0, 1}, 0.25, 0.13, 0.13, {{{-0.2, 0.5}, {-0.2, 0.2}, {-0.4, 0.4}}}}},
      {"neck", {{0, 0, 1}, 0.25, 0.12, 0.06, {{{-0.2, 0.3}, {-0.15, 0.15}, {-0.2, 0.2}}}}},
      {"head", {{0, 0, 1}, 0.15, 0.05, 0.11, {{{-0.3, 0.4}, {-0.3, 0.3}, {-0.5, 0.5}}}}},
      {"r-shoulder", {{1, 0, 0}, 0.18, 0.05, 0.06, {{{-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1}}}}},
      {"l-shoulder", {{-1, 0, 0}, 0.18, 0.05, 0.06, {{{-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1}}}}},
      {"r-elbow", {{0, 0, -1}, 0.28, 0.05, 0.05, {{{-0.8, 2.0}, {-1.6, 0.1}, {-0.3, 0.3}}}}},
      {"l-elbow", {{0, 0, -1}, 0.28, 0.05, 0.05, {{{-0.8, 2.0}, {-0.1, 1.6}, {-0.3, 0.3}}}}},
      {"r-wrist", {{0, 0, -1}, 0.25, 0.04, 0.045, {{{0.0, 2.0}, {-0.3, 0.3}, {0.0, 0.0}}}}},
      {"l-wrist", {{0, 0, -1}, 0.25, 0.04, 0.045, {{{0.0, 2.0}, {-0.3, 0.3}, {0.0, 0.0}}}}},
      {"r-hip", {{0.9, 0, -0.45}, 0.11, 0.08, 0.08, {{{0, 0}, {0, 0}, {0, 0}}}}},
      {"l-hip", {{-0.9, 0, -0.45}, 0.11, 0.08, 0.08, {{{0, 0}, {0, 0}, {0, 0}}}}},
      {"r-knee", {{0, 0, -1}, 0.42, 0.07, 0.065, {{{-0.4, 1.2}, {-0.4, 0.2}, {-0.2, 0.2}}}}},
      {"l-knee", {{0, 0, -1}, 0.42, 0.07, 0.065, {{{-0.4, 1.2}, {-0.2, 0.4}, {-0.2, 0.2}}}}},
      {"r-ankle", {{0, 0, -1}, 0.40, 0.05, 0.05, {{{-1.5, 0.0}, {-0.1, 0.1}, {0, 0}}}}},
      {"l-ankle", {{0, 0, -1}, 0.40, 0.05, 0.05, {{{-1.5, 0.0}, {-0.1, 0.1}, {0, 0}}}}},
      {"r-foot", {{0, 1, 0}, 0.14, 0.04, 0.04, {{{-0.3, 0.3}, {0, 0}, {-0.2, 0.2}}}}},
      {"l-foot", {{0, 1, 0}, 0.14, 0.04, 0.04, {{{-0.3, 0.3}, {0, 0}, {-0.2, 0.2}}}}},
      // ITOP names.
      {"Torso", {{0, 0, 1}, 0.0, 0.0, 0.14, {{{-0.1, 0.1}, {-0.1, 0.1}, {-pi / 3, pi / 3}}}}},
      {"Neck", {{0, 0, 1}, 0.35, 0.13, 0.06, {{{-0.2, 0.4}, {-0.2, 0.2}, {-0.4, 0.4}}}}},
      {"Head", {{0, 0, 1}, 0.2, 0.05, 0.11, {{{-0.3, 0.4}, {-0.3, 0.3}, {-0.5, 0.5}}}}},
      {"R-Shoulder", {{1, 0, 0}, 0.18, 0.05, 0.06, {{{-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1}}}}},
      {"L-Shoulder", {{-1, 0, 0}, 0.18, 0.05, 0.06, {{{-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1}}}}},
      {"R-Elbow", {{0, 0, -1}, 0.28, 0.05, 0.05, {{{-0.8, 2.0}, {-1.6, 0.1}, {-0.3, 0.3}}}}},
      {"L-Elbow", {{0, 0, -1}, 0.28, 0.05, 0.05, {{{-0.8, 2.0}, {-0.1, 1.6}, {-0.3, 0.3}}}}},
      {"R-Hand", {{0, 0, -1}, 0.3, 0.04, 0.05, {{{0.0, 2.0}, {-0.3, 0.3}, {0.0, 0.0}}}}},
      {"L-Hand", {{0, 0, -1}, 0.3, 0.04, 0.05, {{{0.0, 2.0}, {-0.3, 0.3}, {0.0, 0.0}}}}},
      {"R-Hip", {{0.35, 0, -1}, 0.3, 0.1, 0.08, {{{0, 0}, {0, 0}, {0, 0}}}}},
      {"L-Hip", {{-0.35, 0, -1}, 0.3, 0.1, 0.08, {{{0, 0}, {0, 0}, {0, 0}}}}},
      {"R-Knee", {{0, 0, -1}, 0.42, 0.07, 0.065, {{{-0.4, 1.2}, {-0.4, 0.2}, {-0.2, 0.2}}}}},
      {"L-Knee", {{0, 0, -1}, 0.42, 0.07, 0.065, {{{-0.4, 1.2}, {-0.2, 0.4}, {-0.2, 0.2}}}}},
      {"R-Foot", {{0, 0, -1}, 0.45, 0.05, 0.05, {{{-1.5, 0.0}, {-0.1, 0.1}, {0, 0}}}}},
      {"L-Foot", {{0, 0, -1}, 0.45, 0.05, 0.05, {{{-1.5, 0.0}, {-0.1, 0.1}, {0, 0}}}}},
  };
  return table;
}

inline const BoneDefaults &bone_defaults(const std::string &joint) {
  const auto it = bone_table().find(joint);
  if (it == bone_table().end())
    throw ValidationError("no default body dimensions for joint '" + joint + "'");
  return it->second;
}

} // namespace detail

/// Adult-sized defaults for the built-in skeleton presets.
inline BodyShape default_body_shape(const Skeleton &sk) {
  BodyShape b;
  for (std::size_t j = 0; j < sk.joint_count(); ++j) {
    const auto &d = detail::bone_defaults(sk.joints[j]);
    const bool root = sk.parents[j] < 0;
    b.bone_length.push_back(root ? 0.0 : d.length);
    b.bone_radius.push_back(root ? 0.0 : d.radius);
    b.joint_radius.push_back(d.joint_radius);
  }
  b.validate(sk);
  return b;
}

inline PoseSamplerConfig default_sampler_config(const Skeleton &sk, std::uint64_t seed = 0,
                                                std::size_t count = 1) {
  PoseSamplerConfig cfg;
  for (std::size_t j = 0; j < sk.joint_count(); ++j) {
    const auto &d = detail::bone_defaults(sk.joints[j]);
    cfg.rest_direction.push_back(normalized(d.rest));
    cfg.ranges.push_back(d.ranges);
  }
  cfg.seed = seed;
  cfg.count = count;
  cfg.validate(sk);
  return cfg;
}

/// Draws one world-frame pose from `rng`.
inline Pose sample_pose(const PoseSamplerConfig &cfg, const BodyShape &shape, const SkeletonPtr &sk,
                        Rng &rng) {
  const auto n = sk->joint_count();
  std::vector<Mat3> rot(n);
  std::vector<Vec3> pos(n);
  for (const std::size_t j : sk->topological_order()) {
    const auto &r = cfg.ranges[j];
    const double ax = uniform(rng, r[0].lo, r[0].hi);
    const double ay = uniform(rng, r[1].lo, r[1].hi);
    const double az = uniform(rng, r[2].lo, r[2].hi);
    const Mat3 local = axis_rotation(2, az) * axis_rotation(1, ay) * axis_rotation(0, ax);
    const int parent = sk->parents[j];
    if (parent < 0) {
      rot[j] = local;
      pos[j] = {uniform(rng, cfg.root_min.x, cfg.root_max.x),
                uniform(rng, cfg.root_min.y, cfg.root_max.y),
                uniform(rng, cfg.root_min.z, cfg.root_max.z)};
    } else {
      const auto p = static_cast<std::size_t>(parent);
      rot[j] = rot[p] * local;
      pos[j] = pos[p] + shape.bone_length[j] * (rot[j] * cfg.rest_direction[j]);
    }
  }
  return Pose(sk, std::move(pos));
}

/// Deterministic pose stream: pose `index` of the sampler seeded by cfg.seed.
inline Pose sample_pose(const PoseSamplerConfig &cfg, const BodyShape &shape, const SkeletonPtr &sk,
                        std::uint64_t index = 0) {
  Rng rng = make_rng(cfg.seed, "pose", index);
  return sample_pose(cfg, shape, sk, rng);
}

// ---------------------------------------------------------------------------
// Rendering.

struct RenderOptions {
  double noise_sigma = 0.0;      ///< additive Gaussian noise on returns, meters
  double background_depth = 0.0; ///< fronto-parallel plane at this z; 0 disables
};

namespace detail {

// Smallest positive root of a t^2 + b t + c = 0, or +inf.
inline double nearest_root(double a, double b, double c) {
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0 || a <= 0.0)
    return std::numeric_limits<double>::infinity();
  const double s = std::sqrt(disc);
  const double t0 = (-b - s) / (2.0 * a);
  if (t0 > 0.0)
    return t0;
  const double t1 = (-b + s) / (2.0 * a);
  return t1 > 0.0 ? t1 : std::numeric_limits<double>::infinity();
}

// Ray origin is the camera centre; direction d has d.z = 1, so the ray
// parameter equals camera-frame depth.
inline double ray_sphere(Vec3 d, Vec3 c, double r) {
  return nearest_root(dot(d, d), -2.0 * dot(d, c), dot(c, c) - r * r);
}

inline double ray_capsule(Vec3 d, Vec3 a, Vec3 b, double r) {
  double best = std::min(ray_sphere(d, a, r), ray_sphere(d, b, r));
  const Vec3 ba = b - a;
  const double len2 = dot(ba, ba);
  if (len2 <= 0.0)
    return best;
  const Vec3 oa = -1.0 * a;
  const Vec3 dd = d - (dot(d, ba) / len2) * ba;
  const Vec3 oo = oa - (dot(oa, ba) / len2) * ba;
  const double t = nearest_root(dot(dd, dd), 2.0 * dot(dd, oo), dot(oo, oo) - r * r);
  if (std::isfinite(t)) {
    const double s = dot(oa + t * d, ba) / len2;
    if (s >= 0.0 && s <= 1.0)
      best = std::min(best, t);
  }
  return best;
}

struct Primitive {
  Vec3 a, b; // camera frame; a == b for spheres
  double radius;
  int u0, u1, v0, v1; // conservative pixel bounding box
};

inline void sphere_bounds(const Camera &cam, Vec3 c, double r, double &umin, double &umax,
                          double &vmin, double &vmax, bool &ok) {
  if (c.z - r <= 1e-6) {
    ok = false;
    return;
  }
  const auto &k = cam.intrinsics;
  const double zn = c.z - r, zf = c.z + r;
  umin = std::min(umin, k.fx * std::min((c.x - r) / zn, (c.x - r) / zf) + k.cx);
  umax = std::max(umax, k.fx * std::max((c.x + r) / zn, (c.x + r) / zf) + k.cx);
  vmin = std::min(vmin, k.fy * std::min((c.y - r) / zn, (c.y - r) / zf) + k.cy);
  vmax = std::max(vmax, k.fy * std::max((c.y + r) / zn, (c.y + r) / zf) + k.cy);
}

inline Primitive make_primitive(const Camera &cam, Vec3 a, Vec3 b, double r, int h, int w) {
  Primitive p{a, b, r, 0, w - 1, 0, h - 1};
  constexpr double inf = std::numeric_limits<double>::infinity();
  double umin = inf, umax = -inf, vmin = inf, vmax = -inf;
  bool ok = true;
  sphere_bounds(cam, a, r, umin, umax, vmin, vmax, ok);
  sphere_bounds(cam, b, r, umin, umax, vmin, vmax, ok);
  if (a.z + r <= 0.0 && b.z + r <= 0.0) {
    p.u0 = 0, p.u1 = -1; // entirely behind the camera
    return p;
  }
  if (!ok)
    return p; // straddles the camera plane: test every pixel
  p.u0 = std::max(0, static_cast<int>(std::floor(umin)) - 1);
  p.u1 = std::min(w - 1, static_cast<int>(std::ceil(umax)) + 1);
  p.v0 = std::max(0, static_cast<int>(std::floor(vmin)) - 1);
  p.v1 = std::min(h - 1, static_cast<int>(std::ceil(vmax)) + 1);
  return p;
}

} // namespace detail

/// Renders a world-frame pose as a depth frame (z-depth, meters, 0 = miss):
/// one capsule per bone and one sphere per joint. `rng` is only used when
/// noise is enabled.
inline DepthFrame render_depth(const Pose &pose, const BodyShape &shape, const Camera &cam,
                               std::uint16_t camera_index, int h, int w,
                               const RenderOptions &opt = {}, Rng *rng = nullptr) {
  detail::require(h > 0 && w > 0, "render_depth: frame size must be positive");
  const auto &sk = *pose.skeleton;
  std::vector<detail::Primitive> prims;
  std::vector<Vec3> pc(pose.joint_count());
  for (std::size_t j = 0; j < pc.size(); ++j)
    pc[j] = cam.world_to_camera(pose.joints[j]);
  for (std::size_t j = 0; j < pc.size(); ++j) {
    prims.push_back(detail::make_primitive(cam, pc[j], pc[j], shape.joint_radius[j], h, w));
    if (sk.parents[j] >= 0)
      prims.push_back(detail::make_primitive(cam, pc[static_cast<std::size_t>(sk.parents[j])], pc[j],
                                             shape.bone_radius[j], h, w));
  }

  DepthFrame frame(camera_index, h, w);
  std::vector<double> best(frame.depth.size(), std::numeric_limits<double>::infinity());
  const auto &k = cam.intrinsics;
  for (const auto &p : prims) {
    for (int v = p.v0; v <= p.v1; ++v)
      for (int u = p.u0; u <= p.u1; ++u) {
        const Vec3 d{(u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0};
        const double t = (p.a == p.b) ? detail::ray_sphere(d, p.a, p.radius)
                                      : detail::ray_capsule(d, p.a, p.b, p.radius);
        auto &cell = best[static_cast<std::size_t>(v) * static_cast<std::size_t>(w) +
                          static_cast<std::size_t>(u)];
        cell = std::min(cell, t);
      }
  }
  for (std::size_t i = 0; i < best.size(); ++i) {
    double z = best[i];
    if (!std::isfinite(z)) {
      if (opt.background_depth <= 0.0)
        continue;
      z = opt.background_depth;
    }
    if (opt.noise_sigma > 0.0 && rng != nullptr)
      z = std::max(1e-3, z + opt.noise_sigma * standard_normal(*rng));
    frame.depth[i] = static_cast<float>(z);
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Dataset generation.

struct SynthConfig {
  std::string skeleton = "ubc3v18";
  std::size_t scenes = 100;
  std::size_t cameras = 3;
  int frame_height = 64;
  int frame_width = 64;
  double vertical_fov_deg = 50.0;
  double ring_radius = 3.0;
  double camera_height = 1.2;
  double look_at_height = 1.0;
  double azimuth_jitter_deg = 15.0;
  double noise_sigma = 0.0;
  double background_depth = 0.0;
  double train_fraction = 1.0;
  double val_fraction = 0.0;
  std::uint64_t seed = 0;
  /// Overrides for the preset body and sampler; empty means defaults.
  std::optional<BodyShape> body;
  std::optional<PoseSamplerConfig> sampler;

  void validate() const {
    detail::require(cameras >= 1 && cameras <= 255, "synth: camera count must be in [1, 255]");
    detail::require(frame_height >= 8 && frame_width >= 8, "synth: frames must be at least 8x8");
    detail::require(train_fraction >= 0 && val_fraction >= 0 && train_fraction + val_fraction <= 1.0 + 1e-12,
                    "synth: split fractions must be non-negative and sum to <= 1");
    detail::require(vertical_fov_deg > 0 && vertical_fov_deg < 180, "synth: fov out of range");
    detail::require(ring_radius > 0, "synth: ring radius must be positive");
    detail::require(noise_sigma >= 0 && background_depth >= 0, "synth: negative noise or background");
  }
};

/// Cameras on a ring around the origin at equal azimuth spacing plus jitter.
inline std::vector<Camera> ring_cameras(const SynthConfig &cfg) {
  constexpr double pi = 3.14159265358979323846;
  Rng rng = make_rng(cfg.seed, "synth-cameras");
  const double f = 0.5 * cfg.frame_height / std::tan(0.5 * cfg.vertical_fov_deg * pi / 180.0);
  const Intrinsics k{f, f, 0.5 * cfg.frame_width, 0.5 * cfg.frame_height};
  std::vector<Camera> cams;
  for (std::size_t v = 0; v < cfg.cameras; ++v) {
    const double jitter = cfg.azimuth_jitter_deg * pi / 180.0;
    const double az = 2.0 * pi * static_cast<double>(v) / static_cast<double>(cfg.cameras) -
                      0.5 * pi + uniform(rng, -jitter, jitter);
    const Vec3 eye{cfg.ring_radius * std::cos(az), cfg.ring_radius * std::sin(az), cfg.camera_height};
    cams.push_back(Camera::look_at("cam" + std::to_string(v), eye, {0, 0, cfg.look_at_height},
                                   {0, 0, 1}, k));
  }
  return cams;
}

/// One pose per scene rendered from every ring camera. Scene i, its views
/// and its noise depend only on (seed, i), so the output is independent of
/// evaluation order.
inline Dataset generate_dataset(const SynthConfig &cfg) {
  cfg.validate();
  auto sk = std::make_shared<const Skeleton>(skeleton_preset(cfg.skeleton));
  const BodyShape shape = cfg.body.value_or(default_body_shape(*sk));
  shape.validate(*sk);
  const PoseSamplerConfig sampler = cfg.sampler.value_or(default_sampler_config(*sk, cfg.seed));
  sampler.validate(*sk);

  Dataset ds;
  ds.skeleton = sk;
  ds.cameras = ring_cameras(cfg);
  ds.frame_height = cfg.frame_height;
  ds.frame_width = cfg.frame_width;
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.scenes)));
  const auto n_val = std::min(cfg.scenes - std::min(cfg.scenes, n_train),
                              static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(cfg.scenes))));
  const RenderOptions opt{cfg.noise_sigma, cfg.background_depth};

  for (std::size_t i = 0; i < cfg.scenes; ++i) {
    Rng pose_rng = make_rng(cfg.seed, "synth-pose", i);
    Pose world = sample_pose(sampler, shape, sk, pose_rng);
    // Round through a float buffer. g++ 11 at -O3 folded an in-place
    // double->float->double round trip on the x/y pair into a no-op.
    std::vector<float> f32(3 * world.joints.size());
    for (std::size_t j = 0; j < world.joints.size(); ++j) {
      f32[3 * j] = static_cast<float>(world.joints[j].x);
      f32[3 * j + 1] = static_cast<float>(world.joints[j].y);
      f32[3 * j + 2] = static_cast<float>(world.joints[j].z);
    }
    for (std::size_t j = 0; j < world.joints.size(); ++j)
      world.joints[j] = {f32[3 * j], f32[3 * j + 1], f32[3 * j + 2]};

    Sample s;
    s.scene = static_cast<std::uint32_t>(i);
    s.split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    for (std::size_t v = 0; v < ds.cameras.size(); ++v) {
      const auto &cam = ds.cameras[v];
      bool visible = true;
      for (const auto &p : world.joints)
        visible = visible && cam.world_to_camera(p).z > 0.05;
      if (!visible)
        continue;
      Rng noise_rng = make_rng(cfg.seed, "synth-noise", i, v);
      s.views.push_back(render_depth(world, shape, cam, static_cast<std::uint16_t>(v),
                                     cfg.frame_height, cfg.frame_width, opt, &noise_rng));
    }
    if (s.views.empty())
      continue;
    s.pose = std::move(world);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// JSON.

inline void to_json(nlohmann::json &j, const BodyShape &b) {
  j = {{"bone_length", b.bone_length}, {"bone_radius", b.bone_radius}, {"joint_radius", b.joint_radius}};
}

inline void from_json(const nlohmann::json &j, BodyShape &b) {
  j.at("bone_length").get_to(b.bone_length);
  j.at("bone_radius").get_to(b.bone_radius);
  j.at("joint_radius").get_to(b.joint_radius);
}

inline void to_json(nlohmann::json &j, const PoseSamplerConfig &c) {
  nlohmann::json rest = nlohmann::json::array(), ranges = nlohmann::json::array();
  for (const auto &d : c.rest_direction)
    rest.push_back({d.x, d.y, d.z});
  for (const auto &r : c.ranges)
    ranges.push_back({{r[0].lo, r[0].hi}, {r[1].lo, r[1].hi}, {r[2].lo, r[2].hi}});
  j = {{"rest_direction", rest},
       {"ranges", ranges},
       {"root_min", {c.root_min.x, c.root_min.y, c.root_min.z}},
       {"root_max", {c.root_max.x, c.root_max.y, c.root_max.z}}};
}

inline void from_json(const nlohmann::json &j, PoseSamplerConfig &c) {
  c.rest_direction.clear();
  c.ranges.clear();
  for (const auto &d : j.at("rest_direction"))
    c.rest_direction.push_back({d.at(0), d.at(1), d.at(2)});
  for (const auto &r : j.at("ranges")) {
    std::array<AngleRange, 3> a;
    for (std::size_t k = 0; k < 3; ++k)
      a[k] = {r.at(k).at(0), r.at(k).at(1)};
    c.ranges.push_back(a);
  }
  if (j.contains("root_min"))
    c.root_min = {j["root_min"].at(0), j["root_min"].at(1), j["root_min"].at(2)};
  if (j.contains("root_max"))
    c.root_max = {j["root_max"].at(0), j["root_max"].at(1), j["root_max"].at(2)};
}

inline void to_json(nlohmann::json &j, const SynthConfig &c) {
  j = {{"skeleton", c.skeleton},
       {"scenes", c.scenes},
       {"cameras", c.cameras},
       {"frame_height", c.frame_height},
       {"frame_width", c.frame_width},
       {"vertical_fov_deg", c.vertical_fov_deg},
       {"ring_radius", c.ring_radius},
       {"camera_height", c.camera_height},
       {"look_at_height", c.look_at_height},
       {"azimuth_jitter_deg", c.azimuth_jitter_deg},
       {"noise_sigma", c.noise_sigma},
       {"background_depth", c.background_depth},
       {"train_fraction", c.train_fraction},
       {"val_fraction", c.val_fraction},
       {"seed", c.seed}};
  if (c.body)
    j["body"] = *c.body;
  if (c.sampler)
    j["sampler"] = *c.sampler;
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json &j, SynthConfig &c) {
  auto opt = [&](const char *key, auto &field) {
    if (j.contains(key))
      j.at(key).get_to(field);
  };
  opt("skeleton", c.skeleton);
  opt("scenes", c.scenes);
  opt("cameras", c.cameras);
  opt("frame_height", c.frame_height);
  opt("frame_width", c.frame_width);
  opt("vertical_fov_deg", c.vertical_fov_deg);
  opt("ring_radius", c.ring_radius);
  opt("camera_height", c.camera_height);
  opt("look_at_height", c.look_at_height);
  opt("azimuth_jitter_deg", c.azimuth_jitter_deg);
  opt("noise_sigma", c.noise_sigma);
  opt("background_depth", c.background_depth);
  opt("train_fraction", c.train_fraction);
  opt("val_fraction", c.val_fraction);
  opt("seed", c.seed);
  if (j.contains("body"))
    c.body = j.at("body").get<BodyShape>();
  if (j.contains("sampler"))
    c.sampler = j.at("sampler").get<PoseSamplerConfig>();
}

} // namespace depthpose
