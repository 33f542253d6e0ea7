#include "partflow/artcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "partflow/errors.hpp"

namespace partflow {

Aabb Aabb::of(std::span<const Vec3> points) {
  Aabb box;
  if (points.empty()) return box;
  box.min = box.max = points.front();
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

double Aabb::volume() const {
  const Vec3 e = extent().cwiseMax(0.0);
  return e.x() * e.y() * e.z();
}

bool Aabb::contains(const Vec3& p, double tol) const {
  return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
}

Aabb Aabb::merged(const Aabb& other) const { return {min.cwiseMin(other.min), max.cwiseMax(other.max)}; }

std::string_view to_string(JointType t) {
  switch (t) {
    case JointType::kFixed: return "fixed";
    case JointType::kPrismatic: return "prismatic";
    case JointType::kRevolute: return "revolute";
  }
  return "fixed";
}

std::string_view to_string(Semantic s) {
  switch (s) {
    case Semantic::kBase: return "base";
    case Semantic::kDoor: return "door";
    case Semantic::kDrawer: return "drawer";
    case Semantic::kLid: return "lid";
    case Semantic::kOther: return "other";
  }
  return "other";
}

std::optional<JointType> parse_joint_type(std::string_view s) {
  if (s == "fixed") return JointType::kFixed;
  if (s == "prismatic") return JointType::kPrismatic;
  if (s == "revolute") return JointType::kRevolute;
  return std::nullopt;
}

Semantic parse_semantic(std::string_view s, const nlohmann::json& aliases) {
  std::string label(s);
  if (aliases.is_object()) {
    auto it = aliases.find(label);
    if (it != aliases.end() && it->is_string()) label = it->get<std::string>();
  }
  for (int i = 0; i < kSemanticCount; ++i) {
    if (to_string(static_cast<Semantic>(i)) == label) return static_cast<Semantic>(i);
  }
  return Semantic::kOther;
}

PartGeometry PartGeometry::points(std::vector<Vec3> pts) {
  PartGeometry g;
  g.kind = GeometryKind::kPoints;
  g.vertices = std::move(pts);
  g.recompute_bounds();
  return g;
}

PartGeometry PartGeometry::mesh(std::vector<Vec3> verts, std::vector<std::array<int, 3>> faces) {
  PartGeometry g;
  g.kind = GeometryKind::kMesh;
  g.vertices = std::move(verts);
  g.faces = std::move(faces);
  g.recompute_bounds();
  return g;
}

PartGeometry PartGeometry::voxels(std::vector<Vec3> centers, double voxel_size) {
  PartGeometry g;
  g.kind = GeometryKind::kVoxels;
  g.vertices = std::move(centers);
  g.voxel_size = voxel_size;
  g.recompute_bounds();
  return g;
}

void PartGeometry::recompute_bounds() {
  bounds = Aabb::of(vertices);
  if (kind == GeometryKind::kVoxels && !vertices.empty()) {
    const Vec3 half = Vec3::Constant(0.5 * voxel_size);
    bounds.min -= half;
    bounds.max += half;
  }
}

bool operator==(const PartGeometry& a, const PartGeometry& b) {
  return a.kind == b.kind && a.vertices == b.vertices && a.faces == b.faces && a.voxel_size == b.voxel_size &&
         a.bounds == b.bounds && a.extra == b.extra;
}

PartGeometry geometry_union(const PartGeometry& a, const PartGeometry& b) {
  std::vector<Vec3> verts = a.vertices;
  verts.insert(verts.end(), b.vertices.begin(), b.vertices.end());
  PartGeometry out;
  if (a.kind == GeometryKind::kMesh && b.kind == GeometryKind::kMesh) {
    auto faces = a.faces;
    const int offset = static_cast<int>(a.vertices.size());
    for (auto f : b.faces) faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
    out = PartGeometry::mesh(std::move(verts), std::move(faces));
  } else if (a.kind == GeometryKind::kVoxels && b.kind == GeometryKind::kVoxels && a.voxel_size == b.voxel_size) {
    out = PartGeometry::voxels(std::move(verts), a.voxel_size);
  } else {
    out = PartGeometry::points(std::move(verts));
  }
  out.extra = a.extra;
  return out;
}

std::optional<int> ArticulatedObject::base_index() const {
  std::optional<int> found;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].joint.semantic != Semantic::kBase) continue;
    if (found) return std::nullopt;
    found = static_cast<int>(i);
  }
  return found;
}

std::vector<Aabb> ArticulatedObject::part_bounds() const {
  std::vector<Aabb> out;
  out.reserve(parts.size());
  for (const auto& p : parts) out.push_back(p.geometry.bounds);
  return out;
}

std::vector<Vec3> ArticulatedObject::all_vertices() const {
  std::vector<Vec3> out;
  for (const auto& p : parts) out.insert(out.end(), p.geometry.vertices.begin(), p.geometry.vertices.end());
  return out;
}

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Issue& i) { return i.code == code; });
}

bool ValidationReport::has_advisory(std::string_view code) const {
  return std::any_of(advisories.begin(), advisories.end(), [&](const Issue& i) { return i.code == code; });
}

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

// Marks every node lying on a parent cycle. Parent links make this a
// functional graph, so walking parents from each unvisited node suffices.
std::vector<std::vector<int>> find_cycles(const ArticulatedObject& obj) {
  const int n = static_cast<int>(obj.size());
  std::vector<int> state(n, 0);  // 0 new, 1 on current walk, 2 done
  std::vector<std::vector<int>> cycles;
  for (int start = 0; start < n; ++start) {
    if (state[start] != 0) continue;
    std::vector<int> walk;
    int cur = start;
    while (cur >= 0 && cur < n && state[cur] == 0) {
      state[cur] = 1;
      walk.push_back(cur);
      cur = obj.parts[cur].joint.parent;
    }
    if (cur >= 0 && cur < n && state[cur] == 1) {
      auto it = std::find(walk.begin(), walk.end(), cur);
      cycles.emplace_back(it, walk.end());
    }
    for (int v : walk) state[v] = 2;
  }
  return cycles;
}

std::string describe(const std::vector<int>& cycle) {
  std::ostringstream os;
  for (std::size_t i = 0; i < cycle.size(); ++i) os << (i ? "->" : "") << cycle[i];
  os << "->" << cycle.front();
  return os.str();
}

}  // namespace

ValidationReport validate_object(const ArticulatedObject& obj) {
  ValidationReport r;
  const int n = static_cast<int>(obj.size());
  auto add = [&](std::string code, int part, std::string msg) { r.violations.push_back({std::move(code), part, std::move(msg)}); };

  if (n == 0) add("empty_object", -1, "object has no parts");

  int roots = 0;
  int bases = 0;
  for (int i = 0; i < n; ++i) {
    const auto& part = obj.parts[i];
    const auto& j = part.joint;
    if (!finite(j.origin) || !finite(j.axis) || !std::isfinite(j.range.lower) || !std::isfinite(j.range.upper)) {
      add("non_finite", i, "joint parameters contain non-finite values");
    }
    if (j.movable()) {
      const double norm = j.axis.norm();
      if (norm < 1e-12) {
        add("zero_axis", i, "movable joint has a zero axis");
      } else if (std::abs(norm - 1.0) > kAxisTolerance) {
        add("non_unit_axis", i, "axis norm " + std::to_string(norm) + " differs from 1");
      }
    } else if (j.range.lower != 0.0 || j.range.upper != 0.0) {
      add("fixed_range", i, "fixed joint must carry range (0,0)");
    }
    if (j.range.lower > j.range.upper) add("inverted_range", i, "range lower bound exceeds upper bound");

    if (j.parent == kRoot) {
      ++roots;
    } else if (j.parent < 0 || j.parent >= n) {
      add("parent_out_of_range", i, "parent index " + std::to_string(j.parent) + " is out of range");
    } else if (j.parent == i) {
      add("cycle", i, "part is its own parent");
    }
    if (j.semantic == Semantic::kBase) {
      ++bases;
      if (j.parent != kRoot) add("base_not_root", i, "base part must be the root");
    }
    if (j.type == JointType::kFixed && j.parent != kRoot) {
      r.advisories.push_back({"fixed_non_root", i, "fixed joint on a non-root part"});
    }

    if (part.geometry.empty()) {
      add("empty_geometry", i, "part geometry is empty");
    } else {
      const auto& g = part.geometry;
      bool inside = true;
      for (const auto& v : g.vertices) {
        if (!finite(v)) {
          add("non_finite", i, "geometry contains non-finite coordinates");
          break;
        }
        if (!g.bounds.contains(v, 1e-9)) inside = false;
      }
      if (!inside) add("bounds", i, "cached AABB does not contain every vertex");
      for (const auto& f : g.faces) {
        for (int idx : f) {
          if (idx < 0 || idx >= static_cast<int>(g.vertices.size())) {
            add("face_index", i, "mesh face references a missing vertex");
            break;
          }
        }
      }
    }
  }
  if (n > 0 && roots == 0) add("no_root", -1, "no part has parent ROOT");
  if (roots > 1) add("multiple_roots", -1, std::to_string(roots) + " parts have parent ROOT");
  if (n > 0 && bases != 1) add("base_count", -1, "expected exactly one base part, found " + std::to_string(bases));
  for (const auto& c : find_cycles(obj)) {
    if (c.size() > 1) add("cycle", c.front(), "parent cycle " + describe(c));
  }
  return r;
}

void require_tree(const ArticulatedObject& obj) {
  const auto report = validate_object(obj);
  for (const auto& v : report.violations) {
    if (v.code == "cycle" || v.code == "no_root" || v.code == "multiple_roots" || v.code == "parent_out_of_range" ||
        v.code == "empty_object") {
      throw StructuralError("invalid kinematic tree: " + v.message);
    }
  }
}

ArticulatedObject collapse_fixed_joints(const ArticulatedObject& obj) {
  require_tree(obj);
  const int n = static_cast<int>(obj.size());

  // Each part folds into its nearest ancestor that is movable or the root.
  std::vector<int> target(n, -1);
  for (int i = 0; i < n; ++i) {
    int cur = i;
    while (obj.parts[cur].joint.type == JointType::kFixed && obj.parts[cur].joint.parent != kRoot) {
      cur = obj.parts[cur].joint.parent;
    }
    target[i] = cur;
  }
  bool unchanged = true;
  for (int i = 0; i < n; ++i) unchanged = unchanged && target[i] == i;
  if (unchanged) return obj;

  std::vector<int> new_index(n, -1);
  ArticulatedObject out;
  out.extra = obj.extra;
  for (int i = 0; i < n; ++i) {
    if (target[i] != i) continue;
    new_index[i] = static_cast<int>(out.parts.size());
    out.parts.push_back(obj.parts[i]);
  }
  for (int i = 0; i < n; ++i) {
    if (target[i] == i) continue;
    auto& dst = out.parts[new_index[target[i]]];
    dst.geometry = geometry_union(dst.geometry, obj.parts[i].geometry);
  }
  for (auto& p : out.parts) {
    if (p.joint.parent != kRoot) p.joint.parent = new_index[target[p.joint.parent]];
  }
  return out;
}

bool is_depth1(const ArticulatedObject& obj) {
  const auto base = obj.base_index();
  if (!base) return false;
  for (int i = 0; i < static_cast<int>(obj.size()); ++i) {
    const int expected = i == *base ? kRoot : *base;
    if (obj.parts[i].joint.parent != expected) return false;
  }
  return true;
}

ArticulatedObject build_depth1(const ArticulatedObject& obj) {
  require_tree(obj);
  const auto base = obj.base_index();
  if (!base) {
    const auto count = std::count_if(obj.parts.begin(), obj.parts.end(),
                                     [](const Part& p) { return p.joint.semantic == Semantic::kBase; });
    throw SemanticError("depth-1 normalization needs exactly one base part, found " + std::to_string(count));
  }
  if (is_depth1(obj)) return obj;
  ArticulatedObject out = obj;
  // Joint origins and axes are world-frame at rest, so only parent indices change.
  for (int i = 0; i < static_cast<int>(out.size()); ++i) out.parts[i].joint.parent = i == *base ? kRoot : *base;
  return out;
}

}  // namespace partflow
