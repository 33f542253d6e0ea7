#include "partflow/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Geometry>

#include "partflow/diagnostics.hpp"
#include "partflow/errors.hpp"

namespace partflow {

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

namespace {

double clamp_to_range(const JointSpec& joint, double q) {
  if (q < joint.range.lower || q > joint.range.upper) {
    const double c = std::clamp(q, joint.range.lower, joint.range.upper);
    std::ostringstream os;
    os << "joint value " << q << " outside [" << joint.range.lower << ", " << joint.range.upper << "], clamped to "
       << c;
    warn(os.str());
    return c;
  }
  return q;
}

}  // namespace

RigidTransform joint_transform(const JointSpec& joint, double q) {
  if (!joint.movable()) return RigidTransform::identity();
  if (std::abs(joint.axis.norm() - 1.0) > kAxisTolerance) {
    throw InvariantError("joint axis must be unit length, got norm " + std::to_string(joint.axis.norm()));
  }
  q = clamp_to_range(joint, q);
  RigidTransform t;
  if (joint.type == JointType::kPrismatic) {
    t.translation = q * joint.axis;
  } else {
    // Rotation about the line through `origin` along `axis`: p' = R (p - o) + o.
    t.rotation = Eigen::AngleAxisd(q, joint.axis).toRotationMatrix();
    t.translation = joint.origin - t.rotation * joint.origin;
  }
  return t;
}

std::vector<RigidTransform> forward_kinematics(const ArticulatedObject& obj, const JointState& state) {
  const int n = static_cast<int>(obj.size());
  if (static_cast<int>(state.values.size()) != n) {
    throw ShapeError("joint state has " + std::to_string(state.values.size()) + " values for " + std::to_string(n) +
                     " parts");
  }
  require_tree(obj);
  std::vector<RigidTransform> world(n);
  std::vector<bool> done(n, false);
  // Joint parameters are world-frame at rest: world(i) = world(parent) ∘ local(i).
  auto resolve = [&](auto&& self, int i) -> const RigidTransform& {
    if (done[i]) return world[i];
    const auto& joint = obj.parts[i].joint;
    const double q = joint.movable() ? state.values[i] : 0.0;
    const RigidTransform local = joint_transform(joint, q);
    world[i] = joint.parent == kRoot ? local : self(self, joint.parent).compose(local);
    done[i] = true;
    return world[i];
  };
  for (int i = 0; i < n; ++i) resolve(resolve, i);
  return world;
}

PartGeometry transform_geometry(const PartGeometry& g, const RigidTransform& t) {
  PartGeometry out = g;
  for (auto& v : out.vertices) v = t.apply(v);
  // Recomputed from transformed points; rotating the old corners would overestimate.
  out.recompute_bounds();
  return out;
}

ArticulatedObject pose_object(const ArticulatedObject& obj, const JointState& state) {
  const auto world = forward_kinematics(obj, state);
  ArticulatedObject out = obj;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& t = world[i];
    if (t.rotation == Eigen::Matrix3d::Identity() && t.translation.isZero(0.0)) continue;
    out.parts[i].geometry = transform_geometry(obj.parts[i].geometry, t);
  }
  return out;
}

std::vector<JointState> sample_states(const ArticulatedObject& obj, std::span<const double> fractions,
                                      OpeningMode mode) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw RangeError("state fraction " + std::to_string(f) + " outside [0, 1]");
  }
  const std::size_t n = obj.size();
  auto value_at = [&](std::size_t i, double f) {
    const auto& j = obj.parts[i].joint;
    return j.movable() ? j.range.lower + f * (j.range.upper - j.range.lower) : 0.0;
  };
  std::vector<JointState> states;
  for (double f : fractions) {
    if (mode == OpeningMode::kJoint) {
      JointState s{std::vector<double>(n, 0.0)};
      for (std::size_t i = 0; i < n; ++i) s.values[i] = value_at(i, f);
      states.push_back(std::move(s));
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (!obj.parts[i].joint.movable()) continue;
        JointState s{std::vector<double>(n, 0.0)};
        for (std::size_t k = 0; k < n; ++k) {
          const auto& j = obj.parts[k].joint;
          // Joints whose range excludes 0 rest at their nearest bound.
          s.values[k] = j.movable() ? std::clamp(0.0, j.range.lower, j.range.upper) : 0.0;
        }
        s.values[i] = value_at(i, f);
        states.push_back(std::move(s));
      }
    }
  }
  return states;
}

Vec3 project_origin_to_aabb(const Vec3& origin, const Aabb& box) {
  if (box.min == box.max) {
    warn("degenerate AABB in origin projection; returning its min corner");
    return box.min;
  }
  if (!box.contains(origin)) return origin.cwiseMax(box.min).cwiseMin(box.max);
  // Interior (or boundary) point: push to the nearest of the six faces.
  Vec3 out = origin;
  double best = std::numeric_limits<double>::infinity();
  int best_axis = 0;
  double best_value = origin.x();
  for (int a = 0; a < 3; ++a) {
    const double to_min = origin[a] - box.min[a];
    const double to_max = box.max[a] - origin[a];
    if (to_min < best) {
      best = to_min;
      best_axis = a;
      best_value = box.min[a];
    }
    if (to_max < best) {
      best = to_max;
      best_axis = a;
      best_value = box.max[a];
    }
  }
  out[best_axis] = best_value;
  return out;
}

}  // namespace partflow
