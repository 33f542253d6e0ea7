#include "partflow/artihead.hpp"

#include <algorithm>
#include <cmath>

#include "partflow/errors.hpp"
#include "partflow/kinematics.hpp"

namespace partflow {

nlohmann::json HeadConfig::to_json() const {
  return {{"input_dim", input_dim}, {"hidden", hidden}, {"layers", layers}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  if (c.layers < 1 || c.hidden < 1 || c.input_dim < 1) throw SchemaError("head", "invalid head configuration");
  return c;
}

ArticulationHead::ArticulationHead(HeadConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.layers < 1) throw RangeError("head needs at least one layer");
  std::mt19937_64 rng(seed);
  int in = cfg_.input_dim;
  for (int l = 0; l < cfg_.layers; ++l) {
    const int out = l + 1 == cfg_.layers ? cfg_.output_dim() : cfg_.hidden;
    layers_.push_back(Linear::create(params_, "head." + std::to_string(l), in, out, rng));
    in = out;
  }
}

ad::Var ArticulationHead::forward(const ad::Var& pooled) const {
  if (pooled.cols() != cfg_.input_dim) {
    throw ShapeError("head expects " + std::to_string(cfg_.input_dim) + " inputs, got " + std::to_string(pooled.cols()));
  }
  ad::Var h = pooled;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l](h);
    if (l + 1 < layers_.size()) h = ad::silu(h);
  }
  return h;
}

void ArticulationHead::zero_weights() {
  for (const auto& entry : params_.entries()) {
    ad::Var v = entry.second;
    v.mutable_value().setZero();
  }
}

Eigen::MatrixXd aggregate_multistep(const FeatureCache& cache, int part) {
  const auto steps = cache.steps_for(part);
  if (steps.empty()) throw ShapeError("no cached features for part " + std::to_string(part));
  Eigen::MatrixXd total = cache.at(steps.front(), part);
  for (std::size_t k = 1; k < steps.size(); ++k) {
    const auto& f = cache.at(steps[k], part);
    if (f.rows() != total.rows() || f.cols() != total.cols()) {
      throw ShapeError("part " + std::to_string(part) + " has inconsistent token counts across cached steps");
    }
    total += f;
  }
  return total / static_cast<double>(steps.size());
}

Eigen::VectorXd pool_mean_max(const Eigen::MatrixXd& features) {
  if (features.rows() == 0) throw DegenerateError("cannot pool an empty part");
  Eigen::VectorXd out(2 * features.cols());
  out.head(features.cols()) = features.colwise().mean().transpose();
  out.tail(features.cols()) = features.colwise().maxCoeff().transpose();
  return out;
}

ad::Var pool_mean_max(const ad::Var& features) {
  if (features.rows() == 0) throw DegenerateError("cannot pool an empty part");
  const ad::Var parts[] = {ad::mean_rows(features), ad::max_rows(features)};
  return ad::hstack(parts);
}

Eigen::VectorXd regress_joint(const Eigen::VectorXd& pooled, const ArticulationHead& head) {
  ad::NoGradGuard guard;
  const Eigen::VectorXd raw = head.forward(ad::Var::constant(pooled.transpose())).value().row(0).transpose();
  if (!raw.allFinite()) throw InvariantError("articulation head produced non-finite output");
  return raw;
}

Eigen::VectorXd encode_joint(const JointSpec& joint) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(JointLayout::kSize);
  v[JointLayout::kType + static_cast<int>(joint.type)] = 1.0;
  v[JointLayout::kSemantic + static_cast<int>(joint.semantic)] = 1.0;
  v.segment<3>(JointLayout::kOrigin) = joint.origin;
  const bool unit = std::abs(joint.axis.norm() - 1.0) <= kAxisTolerance;
  v.segment<3>(JointLayout::kAxis) = unit || joint.movable() ? joint.axis : Vec3::UnitZ();
  v[JointLayout::kRange] = joint.range.lower;
  v[JointLayout::kRange + 1] = joint.range.upper;
  return v;
}

double articulation_loss(const Eigen::VectorXd& raw, const Eigen::VectorXd& gt) {
  if (raw.size() != gt.size()) throw ShapeError("articulation vectors differ in length");
  return (raw - gt).squaredNorm();
}

double articulation_loss(std::span<const Eigen::VectorXd> raw, std::span<const Eigen::VectorXd> gt) {
  if (raw.size() != gt.size()) throw ShapeError("part counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) total += articulation_loss(raw[i], gt[i]);
  return total;
}

ad::Var articulation_loss(const ad::Var& raw, const Eigen::MatrixXd& gt) {
  if (raw.rows() != gt.rows() || raw.cols() != gt.cols()) throw ShapeError("articulation matrices differ in shape");
  return ad::sum_square(ad::sub(raw, ad::Var::constant(gt)));
}

namespace {

template <typename Segment>
int argmax(const Segment& s) {
  Eigen::Index best = 0;
  s.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

JointSpec decode_joint(const Eigen::VectorXd& raw, const Aabb& part_box) {
  if (raw.size() != JointLayout::kSize) throw ShapeError("raw joint vector has the wrong length");
  if (!raw.allFinite()) throw InvariantError("raw joint vector is not finite");
  JointSpec j;
  j.type = static_cast<JointType>(argmax(raw.segment<kJointTypeCount>(JointLayout::kType)));
  j.semantic = static_cast<Semantic>(argmax(raw.segment<kSemanticCount>(JointLayout::kSemantic)));
  const Vec3 axis = raw.segment<3>(JointLayout::kAxis);
  const double norm = axis.norm();
  if (norm < 1e-8) throw DegenerateError("decoded joint axis has near-zero norm");
  j.axis = axis / norm;
  j.origin = raw.segment<3>(JointLayout::kOrigin);
  if (j.type == JointType::kRevolute) j.origin = project_origin_to_aabb(j.origin, part_box);
  const double a = raw[JointLayout::kRange], b = raw[JointLayout::kRange + 1];
  j.range = j.type == JointType::kFixed ? JointRange{} : JointRange{std::min(a, b), std::max(a, b)};
  j.parent = kRoot;
  return j;
}

std::vector<JointSpec> predict_articulation(const FeatureCache& cache, const ArticulationHead& head,
                                            std::span<const Aabb> part_boxes) {
  const auto parts = cache.parts();
  if (parts.size() != part_boxes.size()) throw ShapeError("one AABB per cached part required");
  std::vector<JointSpec> joints;
  std::vector<double> base_logit;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k] != static_cast<int>(k)) throw ShapeError("cached part indices must be 0..K-1");
    const Eigen::VectorXd raw = regress_joint(pool_mean_max(aggregate_multistep(cache, parts[k])), head);
    joints.push_back(decode_joint(raw, part_boxes[k]));
  }
  std::vector<int> candidates;
  for (std::size_t k = 0; k < joints.size(); ++k) {
    if (joints[k].semantic == Semantic::kBase) candidates.push_back(static_cast<int>(k));
  }
  int base = candidates.size() == 1 ? candidates.front() : -1;
  if (base < 0) {
    if (candidates.empty()) {
      for (std::size_t k = 0; k < joints.size(); ++k) candidates.push_back(static_cast<int>(k));
    }
    base = *std::max_element(candidates.begin(), candidates.end(), [&](int a, int b) {
      return part_boxes[a].volume() < part_boxes[b].volume();
    });
  }
  for (int k = 0; k < static_cast<int>(joints.size()); ++k) {
    auto& j = joints[k];
    if (k == base) {
      j.semantic = Semantic::kBase;
      j.type = JointType::kFixed;
      j.range = {};
      j.parent = kRoot;
    } else {
      if (j.semantic == Semantic::kBase) j.semantic = Semantic::kOther;
      j.parent = base;
    }
  }
  return joints;
}

}  // namespace partflow
