#include "partflow/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "partflow/artihead.hpp"
#include "partflow/errors.hpp"

namespace partflow {
namespace {

struct Box {
  int x0, x1, y0, y1, z0, z1;  // inclusive cell bounds
};

std::vector<Vec3> centers(const std::vector<Coord>& cells, int r) {
  std::vector<Vec3> out;
  for (const auto& c : cells) out.emplace_back((c[0] + 0.5) / r, (c[1] + 0.5) / r, (c[2] + 0.5) / r);
  return out;
}

std::vector<Coord> solid(const Box& b) {
  std::vector<Coord> out;
  for (int z = b.z0; z <= b.z1; ++z)
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x) out.push_back({x, y, z});
  return out;
}

// Box shell with the front face (y = y0) left open.
std::vector<Coord> open_shell(const Box& b) {
  std::vector<Coord> out;
  for (const auto& c : solid(b)) {
    const bool boundary = c[0] == b.x0 || c[0] == b.x1 || c[1] == b.y1 || c[2] == b.z0 || c[2] == b.z1;
    if (boundary) out.push_back(c);
  }
  return out;
}

Part make_part(int id, std::vector<Coord> cells, int r, JointSpec joint) {
  Part p;
  p.id = id;
  p.geometry = PartGeometry::voxels(centers(cells, r), 1.0 / r);
  p.joint = joint;
  return p;
}

}  // namespace

ArticulatedObject make_toy_object_raw(ToyKind kind, int variant, int r) {
  if (r < 8) throw RangeError("toy objects need a grid of at least 8 cells");
  // Variants shift the body size; the front face sits at y0 and a movable
  // part occupies y0 - 1.
  const Box body{1 + (variant & 1), r - 2 - ((variant >> 1) & 1), 2, r - 2 - ((variant >> 2) & 1), 1,
                 r - 3 + ((variant >> 1) & 1)};
  const double s = 1.0 / r;
  ArticulatedObject obj;

  JointSpec base;
  base.type = JointType::kFixed;
  base.semantic = Semantic::kBase;
  base.parent = kRoot;
  obj.parts.push_back(make_part(0, open_shell(body), r, base));

  const int zmid = (body.z0 + body.z1) / 2;
  JointSpec j;
  j.parent = 0;
  switch (kind) {
    case ToyKind::kDoorLeft:
    case ToyKind::kDoorRight: {
      const bool left = kind == ToyKind::kDoorLeft;
      const Box door{body.x0, body.x1, body.y0 - 1, body.y0 - 1, body.z0, body.z1};
      j.type = JointType::kRevolute;
      j.semantic = Semantic::kDoor;
      // Hinge on the door's back edge; the axis sign makes positive angles swing outwards.
      j.origin = Vec3((left ? body.x0 : body.x1 + 1) * s, body.y0 * s, 0.5);
      j.axis = left ? Vec3(0, 0, -1) : Vec3(0, 0, 1);
      j.range = {0.0, std::numbers::pi / 2};
      obj.parts.push_back(make_part(1, solid(door), r, j));
      // Handle opposite the hinge, attached to the door by a fixed joint.
      JointSpec handle;
      handle.type = JointType::kFixed;
      handle.semantic = Semantic::kOther;
      handle.parent = 1;
      const int hx = left ? body.x1 - 1 : body.x0 + 1;
      obj.parts.push_back(make_part(2, {{hx, body.y0 - 2, zmid}, {hx, body.y0 - 2, zmid + 1}}, r, handle));
      break;
    }
    case ToyKind::kDrawer: {
      const Box drawer{body.x0 + 1, body.x1 - 1, body.y0 - 1, body.y0 + 1, body.z0 + 1, zmid};
      j.type = JointType::kPrismatic;
      j.semantic = Semantic::kDrawer;
      j.axis = Vec3(0, -1, 0);
      j.range = {0.0, 0.25};
      auto cells = solid(drawer);
      j.origin = Aabb::of(centers(cells, r)).center();
      obj.parts.push_back(make_part(1, std::move(cells), r, j));
      break;
    }
    case ToyKind::kLid: {
      // The body loses its top layer; the lid replaces it.
      auto& shell = obj.parts[0];
      std::vector<Coord> kept;
      for (const auto& c : open_shell(body)) {
        if (c[2] != body.z1) kept.push_back(c);
      }
      shell.geometry = PartGeometry::voxels(centers(kept, r), s);
      const Box lid{body.x0, body.x1, body.y0, body.y1, body.z1, body.z1};
      j.type = JointType::kRevolute;
      j.semantic = Semantic::kLid;
      j.origin = Vec3(0.5, (body.y1 + 1) * s, body.z1 * s);
      j.axis = Vec3(-1, 0, 0);
      j.range = {0.0, std::numbers::pi / 2};
      obj.parts.push_back(make_part(1, solid(lid), r, j));
      break;
    }
  }
  obj.extra["toy_kind"] = static_cast<int>(kind);
  obj.extra["toy_variant"] = variant;
  return obj;
}

ArticulatedObject make_toy_object(ToyKind kind, int variant, int resolution) {
  return build_depth1(collapse_fixed_joints(make_toy_object_raw(kind, variant, resolution)));
}

std::vector<ArticulatedObject> make_toy_dataset(int count, int resolution) {
  std::vector<ArticulatedObject> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    out.push_back(make_toy_object(static_cast<ToyKind>(i % kToyKindCount), (i / kToyKindCount) % 8, resolution));
  }
  return out;
}

PartVoxelSet voxelize_object(const ArticulatedObject& obj, int resolution) {
  std::vector<SparseOccupancy> parts;
  for (const auto& p : obj.parts) parts.push_back(voxelize_points(p.geometry.vertices, resolution).occupancy);
  return make_part_voxel_set(std::move(parts));
}

Conditioning render_conditioning(const PartVoxelSet& pv, const RenderConfig& cfg) {
  const int r = pv.resolution;
  const int px = cfg.pixels_per_voxel;
  const int size = r * px;
  const int background = cfg.max_parts - 1;
  if (static_cast<int>(pv.part_count()) > background) throw RangeError("too many parts for the mask vocabulary");
  if (cfg.part_dim < 2 + background) throw ShapeError("feature map needs 2 + (T - 1) channels");

  // Front-most (smallest y) voxel per (x, z) column.
  Eigen::MatrixXi label = Eigen::MatrixXi::Constant(r, r, background);
  Eigen::MatrixXi depth = Eigen::MatrixXi::Constant(r, r, r);
  for (int part = 0; part < static_cast<int>(pv.part_count()); ++part) {
    for (const auto& c : pv.parts[part].cells()) {
      if (c[1] < depth(c[0], c[2])) {
        depth(c[0], c[2]) = c[1];
        label(c[0], c[2]) = part;
      }
    }
  }
  Conditioning cond;
  cond.grid_h = cond.grid_w = cfg.grid;
  cond.mask.resize(size, size);
  // Image row 0 is the top (largest z), column 0 is x = 0.
  for (int u = 0; u < size; ++u) {
    for (int v = 0; v < size; ++v) cond.mask(u, v) = label(v / px, r - 1 - u / px);
  }
  cond.features = Eigen::MatrixXd::Zero(cfg.grid * cfg.grid, cfg.part_dim);
  for (int a = 0; a < cfg.grid; ++a) {
    const int u0 = a * size / cfg.grid, u1 = (a + 1) * size / cfg.grid;
    for (int b = 0; b < cfg.grid; ++b) {
      const int v0 = b * size / cfg.grid, v1 = (b + 1) * size / cfg.grid;
      const double inv = 1.0 / ((u1 - u0) * (v1 - v0));
      auto row = cond.features.row(a * cfg.grid + b);
      for (int u = u0; u < u1; ++u) {
        for (int v = v0; v < v1; ++v) {
          const int l = cond.mask(u, v);
          if (l == background) continue;
          row[0] += inv;
          row[1] += inv * depth(v / px, r - 1 - u / px) / static_cast<double>(r);
          row[2 + l] += inv;
        }
      }
    }
  }
  return cond;
}

FeatureFn toy_feature_fn(const PartVoxelSet& pv) {
  std::vector<Vec3> centroid;
  for (const auto& occ : pv.parts) {
    Vec3 c = Vec3::Zero();
    for (const auto& cell : occ.cells()) c += Vec3(cell[0], cell[1], cell[2]);
    centroid.push_back(occ.empty() ? c : Vec3(c / static_cast<double>(occ.size())));
  }
  return [pv, centroid](const Coord& c, int part) {
    const double r = pv.resolution;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(kToyFeatureDim);
    for (int a = 0; a < 3; ++a) f[a] = 2.0 * (c[a] + 0.5) / r - 1.0;
    const auto& occ = pv.parts[part];
    int k = 3;
    for (int a = 0; a < 3; ++a) {
      for (int d : {-1, 1}) {
        Coord n = c;
        n[a] += d;
        f[k++] = occ.contains(n) ? 1.0 : 0.0;
      }
    }
    for (int a = 0; a < 3; ++a) f[9 + a] = 2.0 * (c[a] - centroid[part][a]) / r;
    return f;
  };
}

FlowExample make_flow_example(const ArticulatedObject& obj, int resolution, const RenderConfig& render) {
  FlowExample ex;
  const PartVoxelSet pv = voxelize_object(obj, resolution);
  ex.data = flatten_tokenize(pv, toy_feature_fn(pv), kToyFeatureDim);
  ex.cond = render_conditioning(pv, render);
  ex.joint_targets.resize(static_cast<Eigen::Index>(obj.size()), JointLayout::kSize);
  for (std::size_t i = 0; i < obj.size(); ++i) {
    ex.joint_targets.row(static_cast<Eigen::Index>(i)) = encode_joint(obj.parts[i].joint).transpose();
  }
  return ex;
}

}  // namespace partflow
