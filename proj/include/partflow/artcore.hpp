#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace partflow {

using Vec3 = Eigen::Vector3d;

inline constexpr int kRoot = -1;

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  static Aabb of(std::span<const Vec3> points);
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double volume() const;
  bool contains(const Vec3& p, double tol = 0.0) const;
  bool valid() const { return (min.array() <= max.array()).all(); }
  Aabb merged(const Aabb& other) const;

  friend bool operator==(const Aabb& a, const Aabb& b) { return a.min == b.min && a.max == b.max; }
};

enum class JointType { kFixed = 0, kPrismatic = 1, kRevolute = 2 };
inline constexpr int kJointTypeCount = 3;

enum class Semantic { kBase = 0, kDoor = 1, kDrawer = 2, kLid = 3, kOther = 4 };
inline constexpr int kSemanticCount = 5;

std::string_view to_string(JointType t);
std::string_view to_string(Semantic s);
std::optional<JointType> parse_joint_type(std::string_view s);
// Unlisted labels map to kOther unless `aliases` (label -> canonical label) says otherwise.
Semantic parse_semantic(std::string_view s, const nlohmann::json& aliases = nullptr);

struct JointRange {
  double lower = 0.0;
  double upper = 0.0;
  friend bool operator==(const JointRange&, const JointRange&) = default;
};

// Joint parameters of one part. Origin and axis are world coordinates at rest.
struct JointSpec {
  JointType type = JointType::kFixed;
  Semantic semantic = Semantic::kOther;
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  JointRange range;
  int parent = kRoot;

  bool movable() const { return type != JointType::kFixed; }
  friend bool operator==(const JointSpec& a, const JointSpec& b) {
    return a.type == b.type && a.semantic == b.semantic && a.origin == b.origin && a.axis == b.axis &&
           a.range == b.range && a.parent == b.parent;
  }
};

enum class GeometryKind { kPoints, kMesh, kVoxels };

// Part geometry. `vertices` holds points, mesh vertices or voxel centers
// depending on `kind`; `bounds` is kept in sync by the factory functions.
struct PartGeometry {
  GeometryKind kind = GeometryKind::kPoints;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  double voxel_size = 0.0;
  Aabb bounds;
  nlohmann::json extra = nlohmann::json::object();

  static PartGeometry points(std::vector<Vec3> pts);
  static PartGeometry mesh(std::vector<Vec3> verts, std::vector<std::array<int, 3>> faces);
  static PartGeometry voxels(std::vector<Vec3> centers, double voxel_size);

  bool empty() const { return vertices.empty(); }
  void recompute_bounds();

  friend bool operator==(const PartGeometry& a, const PartGeometry& b);
};

// Concatenates vertex sets. Kinds are kept when both sides agree (mesh faces
// are re-indexed), otherwise the result degrades to a point set.
PartGeometry geometry_union(const PartGeometry& a, const PartGeometry& b);

struct Part {
  int id = 0;
  PartGeometry geometry;
  JointSpec joint;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const Part& a, const Part& b) {
    return a.id == b.id && a.geometry == b.geometry && a.joint == b.joint && a.extra == b.extra;
  }
};

struct ArticulatedObject {
  std::vector<Part> parts;
  nlohmann::json extra = nlohmann::json::object();

  std::size_t size() const { return parts.size(); }
  // Index of the unique part labelled base, or nullopt when there is not exactly one.
  std::optional<int> base_index() const;
  std::vector<Aabb> part_bounds() const;
  std::vector<Vec3> all_vertices() const;

  friend bool operator==(const ArticulatedObject&, const ArticulatedObject&) = default;
};

struct Issue {
  std::string code;
  int part = -1;
  std::string message;
};

struct ValidationReport {
  std::vector<Issue> violations;
  // Conditions that are legal but worth knowing (e.g. a fixed non-root part).
  std::vector<Issue> advisories;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view code) const;
  bool has_advisory(std::string_view code) const;
};

inline constexpr double kAxisTolerance = 1e-6;

ValidationReport validate_object(const ArticulatedObject& obj);

// Throws StructuralError when the parent indices do not form a single rooted tree.
void require_tree(const ArticulatedObject& obj);

ArticulatedObject collapse_fixed_joints(const ArticulatedObject& obj);
ArticulatedObject build_depth1(const ArticulatedObject& obj);
bool is_depth1(const ArticulatedObject& obj);

}  // namespace partflow
