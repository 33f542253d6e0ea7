#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "partflow/artcore.hpp"

namespace partflow {

using Coord = std::array<int, 3>;

// Set of occupied cells of an R³ grid, stored in raster order (x fastest, then y, then z).
class SparseOccupancy {
 public:
  explicit SparseOccupancy(int resolution = 1);
  static SparseOccupancy from_cells(int resolution, std::span<const Coord> cells);

  int resolution() const { return resolution_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  const std::vector<Coord>& cells() const { return cells_; }

  bool in_bounds(const Coord& c) const;
  bool contains(const Coord& c) const;
  void insert(const Coord& c);
  void erase(const Coord& c);
  long long raster_key(const Coord& c) const;

  friend bool operator==(const SparseOccupancy&, const SparseOccupancy&) = default;

 private:
  int resolution_;
  std::vector<Coord> cells_;
};

struct VoxelizeResult {
  SparseOccupancy occupancy;
  std::size_t rejected = 0;
};

// Points must lie in the unit cube; cell = floor(x·R) clamped to R-1.
// Points outside are counted in `rejected`, or raise RangeError in strict mode.
VoxelizeResult voxelize_points(std::span<const Vec3> points, int resolution, bool strict = false);

// Unit-cube centers ((c + 0.5) / R) of the occupied cells.
std::vector<Vec3> cell_centers(const SparseOccupancy& occ);

struct PartVoxelSet {
  int resolution = 1;
  std::vector<SparseOccupancy> parts;

  std::size_t part_count() const { return parts.size(); }
  std::size_t total_voxels() const;
};

// Builds a part voxel set; a cell claimed by several parts stays with the
// first-listed part and a diagnostic is emitted.
PartVoxelSet make_part_voxel_set(std::vector<SparseOccupancy> parts);

// Flattened token sequence. Rows are grouped by part (part_ids ascending).
struct TokenSequence {
  Eigen::MatrixXd tokens;
  std::vector<Coord> coords;
  std::vector<int> part_ids;

  int dim() const { return static_cast<int>(tokens.cols()); }
  std::size_t length() const { return coords.size(); }
};

// Contiguous [begin, begin + count) row span of one part.
struct PartSpan {
  int part = 0;
  int begin = 0;
  int count = 0;
};

// Splits grouped part ids into spans; throws StructuralError if ids are not ascending.
std::vector<PartSpan> part_spans(std::span<const int> part_ids);

using FeatureFn = std::function<Eigen::VectorXd(const Coord& coord, int part)>;

// Axis-factored sinusoidal encoding: D/3 dims per axis, D/6 frequencies
// spaced geometrically from 1 to R/2, each giving a sin and a cos term.
Eigen::VectorXd positional_encoding(const Coord& coord, int dim, int resolution = 16);

// Tokens ordered part-major then raster order; token = feat_fn(coord, part) + PE(coord).
TokenSequence flatten_tokenize(const PartVoxelSet& pv, const FeatureFn& feat_fn, int dim);

}  // namespace partflow
