#include <algorithm>
#include <map>
#include <tuple>

#include "partflow/diagnostics.hpp"
#include "partflow/errors.hpp"
#include "partflow/interop.hpp"

namespace partflow {
namespace {

auto sort_key(const VertexPrediction& v) {
  return std::make_tuple(v.position.x(), v.position.y(), v.position.z(), v.parent_id, static_cast<int>(v.joint_type),
                         v.axis.x(), v.axis.y(), v.axis.z(), v.pivot.x(), v.pivot.y(), v.pivot.z(), v.range.lower,
                         v.range.upper);
}

}  // namespace

int majority_vote(std::span<const int> votes, bool* tied) {
  if (votes.empty()) throw RangeError("majority vote over an empty set");
  std::map<int, int> counts;
  for (int v : votes) ++counts[v];
  int best = counts.begin()->first;
  int best_count = 0;
  int holders = 0;
  for (const auto& [value, count] : counts) {  // ascending value, so the first maximum is the smallest
    if (count > best_count) {
      best = value;
      best_count = count;
      holders = 1;
    } else if (count == best_count) {
      ++holders;
    }
  }
  if (tied) *tied = holders > 1;
  return best;
}

ArticulatedObject extract_physx_parts(std::span<const VertexPrediction> preds) {
  if (preds.empty()) throw RangeError("no vertex predictions");
  std::map<int, std::vector<VertexPrediction>> groups;
  for (const auto& v : preds) {
    if (v.part_id < 0) throw RangeError("negative part id " + std::to_string(v.part_id));
    groups[v.part_id].push_back(v);
  }
  std::map<int, int> index_of;
  for (const auto& [id, members] : groups) index_of.emplace(id, static_cast<int>(index_of.size()));

  ArticulatedObject obj;
  for (auto& [id, members] : groups) {
    // Canonical member order keeps the floating-point sums independent of input order.
    std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) { return sort_key(a) < sort_key(b); });

    std::vector<int> parent_votes, type_votes;
    Vec3 axis = Vec3::Zero(), pivot = Vec3::Zero();
    double lower = 0.0, upper = 0.0;
    std::vector<Vec3> positions;
    for (const auto& m : members) {
      parent_votes.push_back(m.parent_id);
      type_votes.push_back(static_cast<int>(m.joint_type));
      axis += m.axis;
      pivot += m.pivot;
      lower += m.range.lower;
      upper += m.range.upper;
      positions.push_back(m.position);
    }
    const double n = static_cast<double>(members.size());
    bool tied = false;
    const int parent_id = majority_vote(parent_votes, &tied);
    if (tied) warn("part " + std::to_string(id) + ": parent vote tied, using " + std::to_string(parent_id));
    const int type = majority_vote(type_votes, &tied);
    if (tied) {
      warn("part " + std::to_string(id) + ": joint type vote tied, using " +
           std::string(to_string(static_cast<JointType>(type))));
    }

    Part part;
    part.id = id;
    part.geometry = PartGeometry::points(std::move(positions));
    JointSpec& joint = part.joint;
    joint.type = static_cast<JointType>(type);
    joint.semantic = Semantic::kOther;
    if (parent_id == kRoot) {
      joint.parent = kRoot;
    } else {
      auto it = index_of.find(parent_id);
      if (it == index_of.end()) {
        throw StructuralError("part " + std::to_string(id) + " votes for missing parent " + std::to_string(parent_id));
      }
      joint.parent = it->second;
    }
    axis /= n;
    const double norm = axis.norm();
    if (joint.parent == kRoot) {
      joint.type = JointType::kFixed;
      joint.semantic = Semantic::kBase;
    } else if (joint.movable() && norm < 1e-8) {
      throw DegenerateError("part " + std::to_string(id) + " has a degenerate mean axis");
    }
    if (joint.movable()) {
      joint.axis = axis / norm;
      joint.origin = pivot / n;
      joint.range = {std::min(lower, upper) / n, std::max(lower, upper) / n};
    } else {
      joint.axis = norm >= 1e-8 ? Vec3(axis / norm) : Vec3::UnitZ();
      joint.origin = pivot / n;
    }
    obj.parts.push_back(std::move(part));
  }

  require_tree(obj);
  const auto report = validate_object(obj);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw StructuralError("extracted object is invalid: " + v.code + " (" + v.message + ")");
  }
  auto collapsed = collapse_fixed_joints(obj);
  if (collapsed.base_index()) return build_depth1(collapsed);
  warn("extracted object has no unique base; left as a general tree");
  return collapsed;
}

}  // namespace partflow
