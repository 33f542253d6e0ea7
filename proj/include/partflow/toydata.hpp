#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "partflow/artcore.hpp"
#include "partflow/flowgen.hpp"
#include "partflow/netcore.hpp"
#include "partflow/sparsegrid.hpp"

namespace partflow {

// Procedural two-part cabinets on an R³ voxel grid inside the unit cube:
// a base shell plus one door (hinged left or right, with a fixed handle that
// is collapsed into it), drawer or lid. Geometry is stored as voxel centers.
enum class ToyKind { kDoorLeft = 0, kDoorRight = 1, kDrawer = 2, kLid = 3 };
inline constexpr int kToyKindCount = 4;

// The raw (uncollapsed) object: the handle is still its own fixed part.
ArticulatedObject make_toy_object_raw(ToyKind kind, int variant, int resolution);
// Collapsed and depth-1 normalized.
ArticulatedObject make_toy_object(ToyKind kind, int variant, int resolution);
std::vector<ArticulatedObject> make_toy_dataset(int count, int resolution);

// Voxelizes each part's vertices; world coordinates must lie in the unit cube.
PartVoxelSet voxelize_object(const ArticulatedObject& obj, int resolution);

struct RenderConfig {
  int max_parts = 8;  // T; label T-1 marks background
  int part_dim = 16;  // feature channels (d_p)
  int grid = 4;       // feature map is grid × grid
  int pixels_per_voxel = 2;
};

// Orthographic front view (looking along +y): the part mask labels each pixel
// with the front-most part, and the feature map carries silhouette coverage,
// mean depth and per-part coverage per cell, zero-padded to d_p channels.
Conditioning render_conditioning(const PartVoxelSet& pv, const RenderConfig& cfg = {});

inline constexpr int kToyFeatureDim = 12;

// Token features: centered coordinates, 6-neighbour same-part occupancy, and
// offset from the part centroid (12 channels).
FeatureFn toy_feature_fn(const PartVoxelSet& pv);

FlowExample make_flow_example(const ArticulatedObject& obj, int resolution, const RenderConfig& render = {});

}  // namespace partflow
