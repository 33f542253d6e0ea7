#include "partflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "partflow/diagnostics.hpp"
#include "partflow/errors.hpp"

namespace partflow {
namespace {

constexpr double kVolumeFloor = 1e-12;

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

double giou_distance(const Aabb& a, const Aabb& b) {
  const double va = std::max(a.volume(), kVolumeFloor);
  const double vb = std::max(b.volume(), kVolumeFloor);
  const Vec3 lo = a.min.cwiseMax(b.min);
  const Vec3 hi = a.max.cwiseMin(b.max);
  const Vec3 overlap = (hi - lo).cwiseMax(0.0);
  const double inter = overlap.x() * overlap.y() * overlap.z();
  const double uni = va + vb - inter;
  const Vec3 hull_extent = a.max.cwiseMax(b.max) - a.min.cwiseMin(b.min);
  const double hull = std::max(hull_extent.x() * hull_extent.y() * hull_extent.z(), kVolumeFloor);
  const double giou = inter / uni - (hull - uni) / hull;
  return std::clamp(1.0 - giou, 0.0, 2.0);
}

double center_distance(const Aabb& a, const Aabb& b) { return (a.center() - b.center()).norm(); }

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = begin + (end - begin) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis});
  const int left = build(idx, begin, mid, depth + 1);
  const int right = build(idx, mid + 1, end, depth + 1);
  nodes_[node].left = left;
  nodes_[node].right = right;
  return node;
}

void KdTree::search(int node, const Vec3& q, double& best) const {
  if (node < 0) return;
  const auto& n = nodes_[node];
  const Vec3& p = points_[n.index];
  best = std::min(best, squared_distance(q, p));
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest_squared(const Vec3& q) const {
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return best;
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw DegenerateError("chamfer distance of an empty point set");
  const KdTree ta(a), tb(b);
  double sa = 0.0, sb = 0.0;
  for (const auto& p : a) sa += tb.nearest_squared(p);
  for (const auto& p : b) sb += ta.nearest_squared(p);
  return sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size());
}

double mean_overlap_ratio(std::span<const SparseOccupancy> parts) {
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      if (parts[i].empty() || parts[j].empty()) {
        warn("AOR: skipping pair (" + std::to_string(i) + ", " + std::to_string(j) + ") with an empty part");
        continue;
      }
      const auto& small = parts[i].size() <= parts[j].size() ? parts[i] : parts[j];
      const auto& large = parts[i].size() <= parts[j].size() ? parts[j] : parts[i];
      std::size_t shared = 0;
      for (const auto& c : small.cells()) shared += large.contains(c) ? 1 : 0;
      total += static_cast<double>(shared) / static_cast<double>(small.size());
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : total / pairs;
}

namespace {

// Surface samples of a triangle mesh, area-weighted.
std::vector<Vec3> sample_mesh_surface(const PartGeometry& g, std::size_t count, std::mt19937_64& rng) {
  std::vector<double> cumulative;
  double area = 0.0;
  for (const auto& f : g.faces) {
    area += 0.5 * (g.vertices[f[1]] - g.vertices[f[0]]).cross(g.vertices[f[2]] - g.vertices[f[0]]).norm();
    cumulative.push_back(area);
  }
  if (area <= 0.0) return g.vertices;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double pick = u(rng) * area;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), pick);
    const auto& f = g.faces[std::min<std::size_t>(it - cumulative.begin(), g.faces.size() - 1)];
    double r1 = u(rng), r2 = u(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    out.push_back(g.vertices[f[0]] + r1 * (g.vertices[f[1]] - g.vertices[f[0]]) +
                  r2 * (g.vertices[f[2]] - g.vertices[f[0]]));
  }
  return out;
}

std::vector<Vec3> subsample(std::vector<Vec3> pool, std::size_t budget, std::mt19937_64& rng) {
  if (pool.size() <= budget) return pool;
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  std::vector<Vec3> out;
  out.reserve(budget);
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

std::vector<Vec3> part_pool(const PartGeometry& g, std::size_t budget, std::mt19937_64& rng) {
  if (g.kind == GeometryKind::kMesh && !g.faces.empty()) return sample_mesh_surface(g, budget, rng);
  return g.vertices;
}

}  // namespace

std::vector<Vec3> sample_object_points(const ArticulatedObject& obj, std::size_t budget, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> pool;
  for (const auto& p : obj.parts) {
    auto pts = part_pool(p.geometry, budget, rng);
    pool.insert(pool.end(), pts.begin(), pts.end());
  }
  return subsample(std::move(pool), budget, rng);
}

std::vector<SparseOccupancy> part_occupancy(const ArticulatedObject& obj, int resolution, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SparseOccupancy> out;
  for (const auto& p : obj.parts) {
    const auto& g = p.geometry;
    std::vector<Vec3> pts;
    if (g.kind == GeometryKind::kVoxels && g.voxel_size > 0.0) {
      // Fill each voxel with a lattice at least twice as fine as the grid.
      const int n = std::max(1, static_cast<int>(std::ceil(g.voxel_size * resolution * 2.0)));
      for (const auto& c : g.vertices) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
              pts.push_back(c + (Vec3(i + 0.5, j + 0.5, k + 0.5) / n - Vec3::Constant(0.5)) * g.voxel_size);
            }
      }
    } else {
      pts = part_pool(g, std::max<std::size_t>(4096, g.vertices.size()), rng);
    }
    out.push_back(voxelize_points(pts, resolution).occupancy);
  }
  return out;
}

double aor(const ArticulatedObject& posed, int resolution, std::uint64_t seed) {
  if (posed.size() < 2) throw RangeError("AOR needs at least two parts");
  const auto occ = part_occupancy(posed, resolution, seed);
  return mean_overlap_ratio(occ);
}

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  if (rows > cols) {
    const auto by_col = solve_assignment(cost.transpose());
    std::vector<int> out(rows, -1);
    for (int c = 0; c < cols; ++c) {
      if (by_col[c] >= 0) out[by_col[c]] = c;
    }
    return out;
  }
  // Shortest augmenting path with potentials (rows ≤ cols), 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int> p(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(rows, -1);
  for (int j = 1; j <= cols; ++j) {
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  }
  return out;
}

PartMatching match_parts(const ArticulatedObject& pred, const ArticulatedObject& gt) {
  const int np = static_cast<int>(pred.size());
  const int ng = static_cast<int>(gt.size());
  // Square matrix; dummy rows / columns carry the unmatched penalty.
  const int n = std::max(np, ng);
  Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, n, kUnmatchedPenalty);
  for (int i = 0; i < np; ++i) {
    for (int j = 0; j < ng; ++j) cost(i, j) = giou_distance(pred.parts[i].geometry.bounds, gt.parts[j].geometry.bounds);
  }
  const auto assign = solve_assignment(cost);
  PartMatching m;
  std::vector<bool> gt_used(ng, false);
  for (int i = 0; i < n; ++i) {
    const int j = assign[i];
    m.cost += cost(i, j);
    if (i < np && j < ng) {
      m.pairs.emplace_back(i, j);
      gt_used[j] = true;
    } else if (i < np) {
      m.unmatched_pred.push_back(i);
    }
  }
  for (int j = 0; j < ng; ++j) {
    if (!gt_used[j]) m.unmatched_gt.push_back(j);
  }
  return m;
}

namespace {

DistanceSet distances(const ArticulatedObject& pred, const ArticulatedObject& gt, const PartMatching& m,
                      const EvalConfig& cfg) {
  DistanceSet d;
  const std::size_t unmatched = m.unmatched_pred.size() + m.unmatched_gt.size();
  double giou = kUnmatchedPenalty * static_cast<double>(unmatched);
  double center = 0.0;
  for (const auto& [i, j] : m.pairs) {
    const auto& a = pred.parts[i].geometry.bounds;
    const auto& b = gt.parts[j].geometry.bounds;
    giou += giou_distance(a, b);
    center += center_distance(a, b);
  }
  const std::size_t giou_terms = m.pairs.size() + unmatched;
  d.giou = giou_terms == 0 ? 0.0 : giou / static_cast<double>(giou_terms);
  d.center = m.pairs.empty() ? 0.0 : center / static_cast<double>(m.pairs.size());
  if (cfg.per_part_chamfer) {
    double total = 0.0;
    for (const auto& [i, j] : m.pairs) {
      ArticulatedObject a, b;
      a.parts.push_back(pred.parts[i]);
      b.parts.push_back(gt.parts[j]);
      total += chamfer_distance(sample_object_points(a, cfg.points, cfg.seed), sample_object_points(b, cfg.points, cfg.seed));
    }
    d.chamfer = m.pairs.empty() ? 0.0 : total / static_cast<double>(m.pairs.size());
  } else {
    d.chamfer = chamfer_distance(sample_object_points(pred, cfg.points, cfg.seed),
                                 sample_object_points(gt, cfg.points, cfg.seed));
  }
  return d;
}

}  // namespace

MetricsReport evaluate(const ArticulatedObject& pred, const ArticulatedObject& gt, const EvalConfig& cfg) {
  MetricsReport report;
  report.matching = match_parts(pred, gt);
  report.rs = distances(pred, gt, report.matching, cfg);

  std::vector<ArticulatedObject> pred_states{pred};
  if (!cfg.fractions.empty()) {
    const auto pred_q = sample_states(pred, cfg.fractions, cfg.mode);
    const auto gt_q = sample_states(gt, cfg.fractions, cfg.mode);
    if (pred_q.size() != gt_q.size()) {
      throw ShapeError("one-at-a-time opening needs the same number of movable joints on both sides");
    }
    DistanceSet mean;
    for (std::size_t s = 0; s < pred_q.size(); ++s) {
      const auto posed_pred = pose_object(pred, pred_q[s]);
      const auto posed_gt = pose_object(gt, gt_q[s]);
      const auto d = distances(posed_pred, posed_gt, report.matching, cfg);
      mean.giou += d.giou;
      mean.center += d.center;
      mean.chamfer += d.chamfer;
      pred_states.push_back(posed_pred);
    }
    const double n = static_cast<double>(pred_q.size());
    if (n > 0) report.as = DistanceSet{mean.giou / n, mean.center / n, mean.chamfer / n};
    report.state_count = pred_q.size();
  }
  if (pred.size() >= 2) {
    double total = 0.0;
    for (const auto& s : pred_states) total += aor(s, cfg.aor_resolution, cfg.seed);
    report.aor = total / static_cast<double>(pred_states.size());
  }
  return report;
}

nlohmann::json MetricsReport::to_json() const {
  auto set = [](const DistanceSet& d) { return nlohmann::json{{"d_gIoU", d.giou}, {"d_cDist", d.center}, {"d_CD", d.chamfer}}; };
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [i, j] : matching.pairs) pairs.push_back({i, j});
  nlohmann::json j{{"rs", set(rs)},
                   {"aor", aor},
                   {"states", state_count},
                   {"matching",
                    {{"pairs", pairs},
                     {"unmatched_pred", matching.unmatched_pred},
                     {"unmatched_gt", matching.unmatched_gt},
                     {"cost", matching.cost}}}};
  if (as) j["as"] = set(*as);
  return j;
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "metric" << std::right << std::setw(12) << "RS" << std::setw(12) << "AS" << '\n';
  auto row = [&](const char* name, double r, std::optional<double> a) {
    os << std::left << std::setw(10) << name << std::right << std::fixed << std::setprecision(6) << std::setw(12) << r;
    if (a) {
      os << std::setw(12) << *a;
    } else {
      os << std::setw(12) << "-";
    }
    os << '\n';
  };
  row("d_gIoU", rs.giou, as ? std::optional(as->giou) : std::nullopt);
  row("d_cDist", rs.center, as ? std::optional(as->center) : std::nullopt);
  row("d_CD", rs.chamfer, as ? std::optional(as->chamfer) : std::nullopt);
  row("AOR", aor, std::nullopt);
  return os.str();
}

double clip_similarity() {
  throw Error("CLIP similarity needs a pretrained vision-language model, which this build does not provide");
}

}  // namespace partflow
