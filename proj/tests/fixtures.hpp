#pragma once

#include <numbers>
#include <random>
#include <vector>

#include "partflow/artcore.hpp"

namespace fixture {

using namespace partflow;

// Axis-aligned grid of points filling [lo, hi] with n samples per axis.
inline std::vector<Vec3> box_points(const Vec3& lo, const Vec3& hi, int n = 3) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 f(i / double(n - 1), j / double(n - 1), k / double(n - 1));
        pts.push_back(lo + f.cwiseProduct(hi - lo));
      }
  return pts;
}

inline Part make_part(int id, Semantic s, JointType t, int parent, std::vector<Vec3> pts, Vec3 origin = Vec3::Zero(),
                      Vec3 axis = Vec3::UnitZ(), JointRange range = {}) {
  Part p;
  p.id = id;
  p.geometry = PartGeometry::points(std::move(pts));
  p.joint.type = t;
  p.joint.semantic = s;
  p.joint.parent = parent;
  p.joint.origin = origin;
  p.joint.axis = axis;
  p.joint.range = t == JointType::kFixed ? JointRange{} : range;
  return p;
}

// Base box plus a door hinged on its left front edge about +z.
inline ArticulatedObject cabinet() {
  ArticulatedObject obj;
  obj.parts.push_back(make_part(0, Semantic::kBase, JointType::kFixed, kRoot,
                                box_points({0.2, 0.3, 0.2}, {0.8, 0.8, 0.8})));
  obj.parts.push_back(make_part(1, Semantic::kDoor, JointType::kRevolute, 0,
                                box_points({0.2, 0.25, 0.2}, {0.8, 0.3, 0.8}), {0.2, 0.25, 0.5}, Vec3::UnitZ(),
                                {0.0, std::numbers::pi / 2}));
  return obj;
}

// Depth-1 object with a base and 1..max_movable random movable parts.
inline ArticulatedObject random_object(std::mt19937_64& rng, int max_movable = 3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  ArticulatedObject obj;
  auto rand_box = [&](double lo, double hi) {
    Vec3 a(lo + u(rng) * (hi - lo), lo + u(rng) * (hi - lo), lo + u(rng) * (hi - lo));
    Vec3 e(0.05 + 0.2 * u(rng), 0.05 + 0.2 * u(rng), 0.05 + 0.2 * u(rng));
    return box_points(a, a + e, 3);
  };
  obj.parts.push_back(make_part(0, Semantic::kBase, JointType::kFixed, kRoot, rand_box(0.2, 0.5)));
  const int k = 1 + static_cast<int>(u(rng) * max_movable);
  for (int i = 1; i <= k; ++i) {
    const bool revolute = u(rng) < 0.5;
    Vec3 axis(g(rng), g(rng), g(rng));
    axis.normalize();
    auto pts = rand_box(0.2, 0.5);
    const Vec3 origin = pts.front();
    const JointRange range = revolute ? JointRange{0.0, 0.5 + u(rng)} : JointRange{0.0, 0.05 + 0.2 * u(rng)};
    obj.parts.push_back(make_part(i, revolute ? Semantic::kDoor : Semantic::kDrawer,
                                  revolute ? JointType::kRevolute : JointType::kPrismatic, 0, std::move(pts), origin,
                                  axis, range));
  }
  return obj;
}

}  // namespace fixture
