#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "depthpose/error.hpp"

namespace depthpose {

// ---------------------------------------------------------------------------
// Small fixed-size geometry.

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend Vec3 operator*(Vec3 a, double s) { return s * a; }
  friend bool operator==(const Vec3 &, const Vec3 &) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) { return (1.0 / norm(a)) * a; }

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
  double &operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }

  static Mat3 identity() { return {}; }

  static Mat3 from_rows(Vec3 r0, Vec3 r1, Vec3 r2) {
    return Mat3{{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}};
  }

  Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        t(r, c) = (*this)(c, r);
    return t;
  }

  double determinant() const {
    const auto &a = *this;
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  }

  friend Vec3 operator*(const Mat3 &a, Vec3 v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }

  friend Mat3 operator*(const Mat3 &a, const Mat3 &b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        out(r, c) = a(r, 0) * b(0, c) + a(r, 1) * b(1, c) + a(r, 2) * b(2, c);
    return out;
  }
};

/// Rotation about a coordinate axis (0 = x, 1 = y, 2 = z) by `angle` radians.
inline Mat3 axis_rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  switch (axis) {
  case 0: r = Mat3{{1, 0, 0, 0, c, -s, 0, s, c}}; break;
  case 1: r = Mat3{{c, 0, s, 0, 1, 0, -s, 0, c}}; break;
  default: r = Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}}; break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Body model.

/// Named-joint tree. `parents[j]` is the parent joint index, -1 for the root.
struct Skeleton {
  std::string name;
  std::vector<std::string> joints;
  std::vector<int> parents;

  std::size_t joint_count() const noexcept { return joints.size(); }

  std::optional<std::size_t> find(const std::string &joint) const {
    for (std::size_t j = 0; j < joints.size(); ++j)
      if (joints[j] == joint)
        return j;
    return std::nullopt;
  }

  /// Throws ValidationError unless J >= 2, names are unique and the parents
  /// form a single tree.
  void validate() const {
    const auto n = joints.size();
    detail::require(n >= 2, "skeleton '" + name + "' needs at least 2 joints");
    detail::require(parents.size() == n, "skeleton '" + name + "': parent list size mismatch");
    std::set<std::string> unique(joints.begin(), joints.end());
    detail::require(unique.size() == n, "skeleton '" + name + "': duplicate joint names");
    int roots = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const int p = parents[j];
      if (p < 0) {
        detail::require(p == -1, "skeleton '" + name + "': bad parent index");
        ++roots;
        continue;
      }
      detail::require(static_cast<std::size_t>(p) < n && static_cast<std::size_t>(p) != j,
                      "skeleton '" + name + "': bad parent index");
    }
    detail::require(roots == 1, "skeleton '" + name + "' must have exactly one root");
    // Every joint must reach the root within n steps (no cycles).
    for (std::size_t j = 0; j < n; ++j) {
      int cur = static_cast<int>(j);
      std::size_t steps = 0;
      while (cur != -1 && steps <= n) {
        cur = parents[static_cast<std::size_t>(cur)];
        ++steps;
      }
      detail::require(cur == -1, "skeleton '" + name + "': parent cycle");
    }
  }

  std::size_t root() const {
    for (std::size_t j = 0; j < parents.size(); ++j)
      if (parents[j] < 0)
        return j;
    throw ValidationError("skeleton has no root");
  }

  /// Joint indices ordered so that every parent precedes its children.
  std::vector<std::size_t> topological_order() const {
    std::vector<std::size_t> order{root()};
    for (std::size_t i = 0; i < order.size(); ++i)
      for (std::size_t j = 0; j < parents.size(); ++j)
        if (parents[j] == static_cast<int>(order[i]))
          order.push_back(j);
    return order;
  }

  friend bool operator==(const Skeleton &, const Skeleton &) = default;
};

/// 15-joint body model of the ITOP dataset, in its published joint order.
inline Skeleton itop_skeleton() {
  return Skeleton{"itop15",
                  {"Head", "Neck", "R-Shoulder", "L-Shoulder", "R-Elbow", "L-Elbow", "R-Hand",
                   "L-Hand", "Torso", "R-Hip", "L-Hip", "R-Knee", "L-Knee", "R-Foot", "L-Foot"},
                  {1, 8, 1, 1, 2, 3, 4, 5, -1, 8, 8, 9, 10, 11, 12}};
}

/// 18-joint UBC3V-style body model. The joint names are stand-ins; the
/// original release only shows the joints graphically.
inline Skeleton ubc3v_skeleton() {
  return Skeleton{"ubc3v18",
                  {"head", "neck", "r-shoulder", "l-shoulder", "r-elbow", "l-elbow", "r-wrist",
                   "l-wrist", "spine-mid", "spine-base", "r-hip", "l-hip", "r-knee", "l-knee",
                   "r-ankle", "l-ankle", "r-foot", "l-foot"},
                  {1, 8, 1, 1, 2, 3, 4, 5, 9, -1, 9, 9, 10, 11, 12, 13, 14, 15}};
}

inline Skeleton skeleton_preset(const std::string &name) {
  if (name == "itop15")
    return itop_skeleton();
  if (name == "ubc3v18")
    return ubc3v_skeleton();
  throw ValidationError("unknown skeleton preset '" + name + "'");
}

using SkeletonPtr = std::shared_ptr<const Skeleton>;

/// J joint positions in meters. The frame (camera or world) is implied by
/// where the pose came from.
struct Pose {
  SkeletonPtr skeleton;
  std::vector<Vec3> joints;

  Pose() = default;
  Pose(SkeletonPtr s, std::vector<Vec3> j) : skeleton(std::move(s)), joints(std::move(j)) {
    validate();
  }

  std::size_t joint_count() const noexcept { return joints.size(); }

  void validate() const {
    detail::require(skeleton != nullptr, "pose has no skeleton");
    detail::require(joints.size() == skeleton->joint_count(),
                    "pose joint count does not match skeleton '" + skeleton->name + "'");
    for (const auto &p : joints)
      detail::require(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z),
                      "pose has non-finite coordinates");
  }

  friend bool operator==(const Pose &a, const Pose &b) {
    return a.joints == b.joints &&
           (a.skeleton == b.skeleton || (a.skeleton && b.skeleton && *a.skeleton == *b.skeleton));
  }
};

/// Length-3J vector, joint-major: x0 y0 z0 x1 y1 z1 ...
struct PoseVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double &operator[](std::size_t i) { return values[i]; }
  friend bool operator==(const PoseVector &, const PoseVector &) = default;
};

inline PoseVector vectorize(const Pose &pose) {
  PoseVector v;
  v.values.reserve(3 * pose.joints.size());
  for (const auto &p : pose.joints) {
    v.values.push_back(p.x);
    v.values.push_back(p.y);
    v.values.push_back(p.z);
  }
  return v;
}

inline Pose devectorize(const PoseVector &v, SkeletonPtr skeleton) {
  detail::require(skeleton != nullptr, "devectorize: null skeleton");
  detail::require(v.size() == 3 * skeleton->joint_count(),
                  "devectorize: vector length " + std::to_string(v.size()) + " != 3J");
  std::vector<Vec3> joints(skeleton->joint_count());
  for (std::size_t j = 0; j < joints.size(); ++j)
    joints[j] = {v[3 * j], v[3 * j + 1], v[3 * j + 2]};
  return Pose(std::move(skeleton), std::move(joints));
}

// ---------------------------------------------------------------------------
// Target standardisation.

struct Normalizer {
  static constexpr double kStdFloor = 1e-6;

  std::vector<double> mean;
  std::vector<double> std;

  std::size_t size() const noexcept { return mean.size(); }
  friend bool operator==(const Normalizer &, const Normalizer &) = default;
};

/// Per-dimension mean and population standard deviation; std entries below
/// Normalizer::kStdFloor are clamped to it.
inline Normalizer fit_normalizer(std::span<const PoseVector> vectors) {
  detail::require(vectors.size() >= 2, "fit_normalizer needs at least 2 vectors");
  const std::size_t d = vectors.front().size();
  for (const auto &v : vectors)
    detail::require(v.size() == d, "fit_normalizer: vectors of different lengths");
  Normalizer n{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  const double count = static_cast<double>(vectors.size());
  for (const auto &v : vectors)
    for (std::size_t i = 0; i < d; ++i)
      n.mean[i] += v[i];
  for (auto &m : n.mean)
    m /= count;
  for (const auto &v : vectors)
    for (std::size_t i = 0; i < d; ++i) {
      const double e = v[i] - n.mean[i];
      n.std[i] += e * e;
    }
  for (auto &s : n.std)
    s = std::max(std::sqrt(s / count), Normalizer::kStdFloor);
  return n;
}

inline PoseVector normalize(const PoseVector &v, const Normalizer &n) {
  detail::require(v.size() == n.size(), "normalize: length mismatch");
  PoseVector out{std::vector<double>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = (v[i] - n.mean[i]) / n.std[i];
  return out;
}

inline PoseVector denormalize(const PoseVector &v, const Normalizer &n) {
  detail::require(v.size() == n.size(), "denormalize: length mismatch");
  PoseVector out{std::vector<double>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = v[i] * n.std[i] + n.mean[i];
  return out;
}

// ---------------------------------------------------------------------------
// Sensors.

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  friend bool operator==(const Intrinsics &, const Intrinsics &) = default;
};

/// Pinhole depth camera. Extrinsics map world to camera coordinates:
/// X_cam = R * X_world + t. Camera axes: x right, y down, z forward.
/// Pixel (u, v) covers [u, u+1) x [v, v+1); its centre is (u + 0.5, v + 0.5).
struct Camera {
  std::string id;
  Mat3 rotation;
  Vec3 translation;
  Intrinsics intrinsics;

  void validate(double tol = 1e-6) const {
    const Mat3 rtr = rotation.transposed() * rotation;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        detail::require(std::abs(rtr(r, c) - (r == c ? 1.0 : 0.0)) <= tol,
                        "camera '" + id + "': rotation is not orthonormal");
    detail::require(std::abs(rotation.determinant() - 1.0) <= tol,
                    "camera '" + id + "': rotation determinant is not +1");
    detail::require(intrinsics.fx > 0 && intrinsics.fy > 0,
                    "camera '" + id + "': focal lengths must be positive");
  }

  Vec3 world_to_camera(Vec3 p) const { return rotation * p + translation; }
  Vec3 camera_to_world(Vec3 p) const { return rotation.transposed() * (p - translation); }
  Vec3 center() const { return camera_to_world({0, 0, 0}); }

  /// Continuous pixel coordinates of a camera-frame point (z > 0).
  std::pair<double, double> project(Vec3 p_cam) const {
    return {intrinsics.fx * p_cam.x / p_cam.z + intrinsics.cx,
            intrinsics.fy * p_cam.y / p_cam.z + intrinsics.cy};
  }

  /// 3x4 row-major [R | t].
  std::array<double, 12> extrinsics() const {
    std::array<double, 12> e{};
    const double t[3] = {translation.x, translation.y, translation.z};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        e[static_cast<std::size_t>(4 * r + c)] = rotation(r, c);
      e[static_cast<std::size_t>(4 * r + 3)] = t[r];
    }
    return e;
  }

  static Camera from_extrinsics(std::string id, const std::array<double, 12> &e, Intrinsics k) {
    Camera cam;
    cam.id = std::move(id);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        cam.rotation(r, c) = e[static_cast<std::size_t>(4 * r + c)];
    cam.translation = {e[3], e[7], e[11]};
    cam.intrinsics = k;
    return cam;
  }

  /// Camera at `eye` looking at `target`, with world `up` projecting to
  /// image-up (negative camera y).
  static Camera look_at(std::string id, Vec3 eye, Vec3 target, Vec3 up, Intrinsics k) {
    const Vec3 z = normalized(target - eye);
    const Vec3 x = normalized(cross(z, up));
    const Vec3 y = cross(z, x);
    Camera cam;
    cam.id = std::move(id);
    cam.rotation = Mat3::from_rows(x, y, z);
    cam.translation = -1.0 * (cam.rotation * eye);
    cam.intrinsics = k;
    return cam;
  }

  friend bool operator==(const Camera &a, const Camera &b) {
    return a.id == b.id && a.rotation.m == b.rotation.m && a.translation == b.translation &&
           a.intrinsics == b.intrinsics;
  }
};

inline Pose world_to_camera(const Pose &world, const Camera &cam) {
  std::vector<Vec3> joints;
  joints.reserve(world.joints.size());
  for (const auto &p : world.joints)
    joints.push_back(cam.world_to_camera(p));
  return Pose(world.skeleton, std::move(joints));
}

/// H x W depth image in meters, row-major; 0 means no return.
struct DepthFrame {
  std::uint16_t camera = 0;
  int height = 0;
  int width = 0;
  std::vector<float> depth;

  DepthFrame() = default;
  DepthFrame(std::uint16_t cam, int h, int w, float fill = 0.0f)
      : camera(cam), height(h), width(w),
        depth(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  float at(int r, int c) const {
    return depth[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(c)];
  }
  float &at(int r, int c) {
    return depth[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(c)];
  }
  bool empty() const noexcept { return depth.empty(); }
  friend bool operator==(const DepthFrame &, const DepthFrame &) = default;
};

// ---------------------------------------------------------------------------
// Datasets.

enum class Split : std::uint8_t { Train, Val, Test };

inline const char *to_string(Split s) {
  switch (s) {
  case Split::Train: return "train";
  case Split::Val: return "val";
  case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string &s) {
  if (s == "train")
    return Split::Train;
  if (s == "val")
    return Split::Val;
  if (s == "test")
    return Split::Test;
  throw ValidationError("unknown split '" + s + "'");
}

struct Sample {
  std::uint32_t scene = 0;
  Split split = Split::Train;
  std::vector<DepthFrame> views;
  Pose pose; // world frame

  friend bool operator==(const Sample &, const Sample &) = default;
};

struct Dataset {
  SkeletonPtr skeleton;
  std::vector<Camera> cameras;
  int frame_height = 0;
  int frame_width = 0;
  std::vector<Sample> samples;

  std::size_t frame_count() const {
    std::size_t n = 0;
    for (const auto &s : samples)
      n += s.views.size();
    return n;
  }

  std::vector<const Sample *> split(Split which) const {
    std::vector<const Sample *> out;
    for (const auto &s : samples)
      if (s.split == which)
        out.push_back(&s);
    return out;
  }

  void validate() const {
    detail::require(skeleton != nullptr, "dataset has no skeleton");
    skeleton->validate();
    for (const auto &c : cameras)
      c.validate();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto &s = samples[i];
      const std::string where = "sample " + std::to_string(i);
      detail::require(!s.views.empty(), where + " has no views");
      for (const auto &v : s.views) {
        detail::require(v.camera < cameras.size(), where + " references an undeclared camera");
        detail::require(v.height == frame_height && v.width == frame_width &&
                            v.depth.size() == static_cast<std::size_t>(frame_height) *
                                                  static_cast<std::size_t>(frame_width),
                        where + " has a frame of the wrong size");
      }
      s.pose.validate();
      detail::require(s.pose.joint_count() == skeleton->joint_count(),
                      where + " pose does not match the skeleton");
    }
  }

  friend bool operator==(const Dataset &a, const Dataset &b) {
    return *a.skeleton == *b.skeleton && a.cameras == b.cameras &&
           a.frame_height == b.frame_height && a.frame_width == b.frame_width &&
           a.samples == b.samples;
  }
};

} // namespace depthpose
