#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "partflow/artcore.hpp"

namespace partflow {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  // this ∘ inner: applies `inner` first.
  RigidTransform compose(const RigidTransform& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }
  Eigen::Matrix4d matrix() const;
};

// One scalar per part: radians for revolute joints, world units for prismatic.
struct JointState {
  std::vector<double> values;
};

RigidTransform joint_transform(const JointSpec& joint, double q);

// World transform of every part under `state`, composed along the parent chain.
std::vector<RigidTransform> forward_kinematics(const ArticulatedObject& obj, const JointState& state);

PartGeometry transform_geometry(const PartGeometry& g, const RigidTransform& t);

ArticulatedObject pose_object(const ArticulatedObject& obj, const JointState& state);

enum class OpeningMode {
  kJoint,       // every movable joint opened to the same fraction at once
  kOneAtATime,  // one state per (fraction, movable joint) with the others at rest
};

std::vector<JointState> sample_states(const ArticulatedObject& obj, std::span<const double> fractions,
                                      OpeningMode mode = OpeningMode::kJoint);

inline const std::vector<double> kDefaultStateFractions = {0.25, 0.5, 0.75, 1.0};

// Nearest point on the boundary surface of `box`. Interior points move to the
// closest face, exterior points are clamped.
Vec3 project_origin_to_aabb(const Vec3& origin, const Aabb& box);

}  // namespace partflow
