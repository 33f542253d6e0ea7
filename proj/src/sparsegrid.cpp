#include "partflow/sparsegrid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "partflow/diagnostics.hpp"
#include "partflow/errors.hpp"

namespace partflow {

SparseOccupancy::SparseOccupancy(int resolution) : resolution_(resolution) {
  if (resolution < 1) throw RangeError("grid resolution must be >= 1");
}

SparseOccupancy SparseOccupancy::from_cells(int resolution, std::span<const Coord> cells) {
  SparseOccupancy occ(resolution);
  for (const auto& c : cells) {
    if (!occ.in_bounds(c)) throw RangeError("cell outside grid bounds");
  }
  occ.cells_.assign(cells.begin(), cells.end());
  std::sort(occ.cells_.begin(), occ.cells_.end(),
            [&](const Coord& a, const Coord& b) { return occ.raster_key(a) < occ.raster_key(b); });
  occ.cells_.erase(std::unique(occ.cells_.begin(), occ.cells_.end()), occ.cells_.end());
  return occ;
}

bool SparseOccupancy::in_bounds(const Coord& c) const {
  return std::all_of(c.begin(), c.end(), [&](int v) { return v >= 0 && v < resolution_; });
}

long long SparseOccupancy::raster_key(const Coord& c) const {
  const long long r = resolution_;
  return c[0] + r * (c[1] + r * static_cast<long long>(c[2]));
}

bool SparseOccupancy::contains(const Coord& c) const {
  if (!in_bounds(c)) return false;
  auto it = std::lower_bound(cells_.begin(), cells_.end(), c,
                             [&](const Coord& a, const Coord& b) { return raster_key(a) < raster_key(b); });
  return it != cells_.end() && *it == c;
}

void SparseOccupancy::insert(const Coord& c) {
  if (!in_bounds(c)) throw RangeError("cell outside grid bounds");
  auto it = std::lower_bound(cells_.begin(), cells_.end(), c,
                             [&](const Coord& a, const Coord& b) { return raster_key(a) < raster_key(b); });
  if (it == cells_.end() || *it != c) cells_.insert(it, c);
}

void SparseOccupancy::erase(const Coord& c) {
  auto it = std::lower_bound(cells_.begin(), cells_.end(), c,
                             [&](const Coord& a, const Coord& b) { return raster_key(a) < raster_key(b); });
  if (it != cells_.end() && *it == c) cells_.erase(it);
}

VoxelizeResult voxelize_points(std::span<const Vec3> points, int resolution, bool strict) {
  VoxelizeResult result{SparseOccupancy(resolution), 0};
  std::vector<Coord> cells;
  cells.reserve(points.size());
  for (const auto& p : points) {
    if (!p.allFinite() || (p.array() < 0.0).any() || (p.array() > 1.0).any()) {
      if (strict) throw RangeError("point outside the unit cube");
      ++result.rejected;
      continue;
    }
    Coord c;
    for (int a = 0; a < 3; ++a) c[a] = std::min(static_cast<int>(std::floor(p[a] * resolution)), resolution - 1);
    cells.push_back(c);
  }
  result.occupancy = SparseOccupancy::from_cells(resolution, cells);
  if (result.rejected > 0) warn("voxelize_points rejected " + std::to_string(result.rejected) + " points");
  return result;
}

std::vector<Vec3> cell_centers(const SparseOccupancy& occ) {
  std::vector<Vec3> out;
  out.reserve(occ.size());
  const double r = occ.resolution();
  for (const auto& c : occ.cells()) out.emplace_back((c[0] + 0.5) / r, (c[1] + 0.5) / r, (c[2] + 0.5) / r);
  return out;
}

std::size_t PartVoxelSet::total_voxels() const {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  return n;
}

PartVoxelSet make_part_voxel_set(std::vector<SparseOccupancy> parts) {
  PartVoxelSet pv;
  if (parts.empty()) return pv;
  pv.resolution = parts.front().resolution();
  for (const auto& p : parts) {
    if (p.resolution() != pv.resolution) throw ShapeError("part grids must share one resolution");
  }
  std::size_t ties = 0;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    std::vector<Coord> kept;
    for (const auto& c : parts[i].cells()) {
      bool claimed = false;
      for (std::size_t j = 0; j < i && !claimed; ++j) claimed = parts[j].contains(c);
      if (claimed) {
        ++ties;
      } else {
        kept.push_back(c);
      }
    }
    parts[i] = SparseOccupancy::from_cells(pv.resolution, kept);
  }
  if (ties > 0) warn(std::to_string(ties) + " voxels claimed by several parts were kept by the first-listed part");
  pv.parts = std::move(parts);
  return pv;
}

std::vector<PartSpan> part_spans(std::span<const int> part_ids) {
  std::vector<PartSpan> spans;
  for (int row = 0; row < static_cast<int>(part_ids.size()); ++row) {
    const int id = part_ids[row];
    if (!spans.empty() && spans.back().part == id) {
      ++spans.back().count;
      continue;
    }
    if (!spans.empty() && id < spans.back().part) {
      throw StructuralError("part ids are not grouped in ascending order");
    }
    spans.push_back({id, row, 1});
  }
  return spans;
}

Eigen::VectorXd positional_encoding(const Coord& coord, int dim, int resolution) {
  if (dim <= 0 || dim % 6 != 0) {
    throw ShapeError("positional encoding dimension " + std::to_string(dim) + " is not divisible by 6");
  }
  const int freqs = dim / 6;
  const double top = std::max(1.0, resolution / 2.0);
  Eigen::VectorXd out(dim);
  for (int a = 0; a < 3; ++a) {
    for (int k = 0; k < freqs; ++k) {
      const double f = freqs == 1 ? 1.0 : std::pow(top, static_cast<double>(k) / (freqs - 1));
      const double angle = 2.0 * std::numbers::pi * f * coord[a] / resolution;
      out[a * 2 * freqs + k] = std::sin(angle);
      out[a * 2 * freqs + freqs + k] = std::cos(angle);
    }
  }
  return out;
}

TokenSequence flatten_tokenize(const PartVoxelSet& pv, const FeatureFn& feat_fn, int dim) {
  if (dim <= 0 || dim % 6 != 0) {
    throw ShapeError("token dimension " + std::to_string(dim) + " is not divisible by 6");
  }
  TokenSequence seq;
  const auto total = static_cast<Eigen::Index>(pv.total_voxels());
  seq.tokens.resize(total, dim);
  seq.coords.reserve(total);
  seq.part_ids.reserve(total);
  Eigen::Index row = 0;
  for (int part = 0; part < static_cast<int>(pv.part_count()); ++part) {
    const auto& occ = pv.parts[part];
    if (occ.empty()) throw DegenerateError("part " + std::to_string(part) + " has no voxels");
    for (const auto& c : occ.cells()) {
      Eigen::VectorXd token = positional_encoding(c, dim, pv.resolution);
      if (feat_fn) {
        const Eigen::VectorXd f = feat_fn(c, part);
        if (f.size() != dim) throw ShapeError("feature function returned the wrong dimension");
        token += f;
      }
      seq.tokens.row(row++) = token.transpose();
      seq.coords.push_back(c);
      seq.part_ids.push_back(part);
    }
  }
  return seq;
}

}  // namespace partflow
