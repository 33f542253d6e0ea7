#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "partflow/artcore.hpp"
#include "partflow/autodiff.hpp"
#include "partflow/feature_cache.hpp"
#include "partflow/netcore.hpp"

namespace partflow {

// Raw parameter layout produced by the head and used by the ℓ2 loss:
// [type logits (3) | semantic logits (|S|) | origin (3) | axis (3) | range (2)].
struct JointLayout {
  static constexpr int kType = 0;
  static constexpr int kSemantic = kJointTypeCount;
  static constexpr int kOrigin = kSemantic + kSemanticCount;
  static constexpr int kAxis = kOrigin + 3;
  static constexpr int kRange = kAxis + 3;
  static constexpr int kSize = kRange + 2;
};
static_assert(JointLayout::kSize == 11 + kSemanticCount);

struct HeadConfig {
  int input_dim = 128;  // 2D
  int hidden = 64;
  int layers = 6;

  int output_dim() const { return JointLayout::kSize; }
  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

// MLP g_φ mapping pooled part features to raw joint parameters.
class ArticulationHead {
 public:
  explicit ArticulationHead(HeadConfig cfg, std::uint64_t seed = 0);

  ad::Var forward(const ad::Var& pooled) const;  // rows are independent parts
  const HeadConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  void zero_weights();

 private:
  HeadConfig cfg_;
  ad::ParameterStore params_;
  std::vector<Linear> layers_;
};

// Mean over the cached steps of one part; throws ShapeError on inconsistent token counts.
Eigen::MatrixXd aggregate_multistep(const FeatureCache& cache, int part);

// [mean over tokens ‖ max over tokens], length 2D.
Eigen::VectorXd pool_mean_max(const Eigen::MatrixXd& features);
ad::Var pool_mean_max(const ad::Var& features);

Eigen::VectorXd regress_joint(const Eigen::VectorXd& pooled, const ArticulationHead& head);

// One-hot type and semantic, origin, unit axis, range. Fixed joints whose
// stored axis is not unit encode +z.
Eigen::VectorXd encode_joint(const JointSpec& joint);

// Σ_i ‖raw_i − gt_i‖² over parts.
double articulation_loss(std::span<const Eigen::VectorXd> raw, std::span<const Eigen::VectorXd> gt);
double articulation_loss(const Eigen::VectorXd& raw, const Eigen::VectorXd& gt);
// Rows of `raw` and `gt` are parts.
ad::Var articulation_loss(const ad::Var& raw, const Eigen::MatrixXd& gt);

// Argmax type and semantic, unit axis, sorted range, revolute origin projected
// onto the part's AABB surface. The parent is left at ROOT.
JointSpec decode_joint(const Eigen::VectorXd& raw, const Aabb& part_box);

// Decodes every cached part and wires a depth-1 tree: the base is the part
// decoded as base (ties and absence fall back to the largest AABB volume).
std::vector<JointSpec> predict_articulation(const FeatureCache& cache, const ArticulationHead& head,
                                            std::span<const Aabb> part_boxes);

}  // namespace partflow
