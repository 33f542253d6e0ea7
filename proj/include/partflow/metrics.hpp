#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "partflow/artcore.hpp"
#include "partflow/kinematics.hpp"
#include "partflow/sparsegrid.hpp"

namespace partflow {

// 1 − gIoU of two axis-aligned boxes, in [0, 2]. Volumes are floored at 1e-12.
double giou_distance(const Aabb& a, const Aabb& b);
double center_distance(const Aabb& a, const Aabb& b);

// Static 3-d tree for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);
  // Squared distance to the nearest stored point.
  double nearest_squared(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct NodeRef {
    int index;  // into points_
    int axis;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<NodeRef> nodes_;
  int root_ = -1;
};

// mean_a min_b ‖a−b‖² + mean_b min_a ‖a−b‖².
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

// Mean over part pairs of |Vi ∩ Vj| / min(|Vi|, |Vj|); pairs with an empty
// part are skipped with a diagnostic. Zero when no pair qualifies.
double mean_overlap_ratio(std::span<const SparseOccupancy> parts);

// Per-part occupancy of `obj` on an R³ grid over the unit cube. Voxel parts
// are filled, meshes are surface-sampled; samples outside the cube are dropped.
std::vector<SparseOccupancy> part_occupancy(const ArticulatedObject& obj, int resolution, std::uint64_t seed = 0);

// Average overlapping ratio of a (posed) object; throws RangeError for fewer than two parts.
double aor(const ArticulatedObject& posed, int resolution, std::uint64_t seed = 0);

// Up to `budget` points: area-weighted surface samples for meshes, vertices
// otherwise, subsampled uniformly when the pool is larger than the budget.
std::vector<Vec3> sample_object_points(const ArticulatedObject& obj, std::size_t budget, std::uint64_t seed);

struct PartMatching {
  std::vector<std::pair<int, int>> pairs;  // (pred index, gt index)
  std::vector<int> unmatched_pred;
  std::vector<int> unmatched_gt;
  double cost = 0.0;  // including the penalty of 2 per unmatched part
};

inline constexpr double kUnmatchedPenalty = 2.0;

// Minimum-cost assignment for a rectangular cost matrix (rows ≤ or ≥ cols).
// Returns the column of each row, or −1 when the row stays unassigned.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

PartMatching match_parts(const ArticulatedObject& pred, const ArticulatedObject& gt);

struct DistanceSet {
  double giou = 0.0;
  double center = 0.0;
  double chamfer = 0.0;
};

struct MetricsReport {
  DistanceSet rs;
  std::optional<DistanceSet> as;
  double aor = 0.0;
  PartMatching matching;
  std::size_t state_count = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

struct EvalConfig {
  std::vector<double> fractions = kDefaultStateFractions;
  OpeningMode mode = OpeningMode::kJoint;
  std::size_t points = 4096;
  int aor_resolution = 64;
  std::uint64_t seed = 0;
  bool per_part_chamfer = false;
};

MetricsReport evaluate(const ArticulatedObject& pred, const ArticulatedObject& gt, const EvalConfig& cfg = {});

// Image-text similarity needs a pretrained vision-language model that this
// library does not ship; always throws.
[[noreturn]] double clip_similarity();

}  // namespace partflow
