#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "partflow/artihead.hpp"
#include "partflow/feature_cache.hpp"
#include "partflow/netcore.hpp"
#include "partflow/sparsegrid.hpp"

namespace partflow {

struct SamplerConfig {
  int steps = 25;
  double cfg_scale = 7.0;
  int cache_last = 20;  // S: features of the last S steps are cached
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int steps = 500;
  int batch_size = 4;
  double articulation_weight = 1.0;  // λ
  double uncond_probability = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct FlowPair {
  Eigen::MatrixXd x_t;
  Eigen::MatrixXd v_target;
};

// Rectified flow: x_t = (1 − t)·noise + t·data, v = data − noise.
FlowPair fm_pair(const Eigen::MatrixXd& x_data, const Eigen::MatrixXd& noise, double t);

// v_uncond + s·(v_cond − v_uncond); s = 1 and s = 0 return the branches exactly.
Eigen::MatrixXd cfg_velocity(const Eigen::MatrixXd& v_cond, const Eigen::MatrixXd& v_uncond, double s);

struct FieldOutput {
  Eigen::MatrixXd velocity;
  Eigen::MatrixXd features;  // last-block features, may be empty
};

// Velocity model seen by the sampler.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual FieldOutput evaluate(const Eigen::MatrixXd& x, double t, bool conditional) const = 0;
};

class DenoiserField : public VelocityField {
 public:
  DenoiserField(const Denoiser& model, std::vector<Coord> coords, std::vector<int> part_ids, Conditioning cond);
  FieldOutput evaluate(const Eigen::MatrixXd& x, double t, bool conditional) const override;

 private:
  const Denoiser& model_;
  std::vector<Coord> coords_;
  std::vector<int> part_ids_;
  Conditioning cond_;
};

struct SampleResult {
  TokenSequence tokens;
  FeatureCache cache;
};

// Layout of the state being sampled: coords and part ids per token plus channel count.
struct TokenLayout {
  std::vector<Coord> coords;
  std::vector<int> part_ids;
  int dim = 0;
};

// Uniform Euler integration from noise (t = 0) to data (t = 1). Step k
// (1-based) evaluates the field at t = (k − 1)/steps; conditional-branch
// features of steps steps − S + 1 … steps are cached per part.
SampleResult euler_sample(const VelocityField& field, const TokenLayout& layout, const SamplerConfig& cfg,
                          FeatureSource source = FeatureSource::kStage2);

// One training / evaluation example: clean tokens, conditioning, per-part
// encoded joint targets (K × JointLayout::kSize, may be empty).
struct FlowExample {
  TokenSequence data;
  Conditioning cond;
  Eigen::MatrixXd joint_targets;
};

using VelocityFn = std::function<Eigen::MatrixXd(const FlowExample& ex, const Eigen::MatrixXd& x_t, double t)>;

// Mean over the batch of the per-example MSE between predicted and target velocity.
double flow_loss(const VelocityFn& model, std::span<const FlowExample> batch, const std::function<double()>& t_sampler,
                 std::mt19937_64& rng);
double flow_loss(const Denoiser& model, std::span<const FlowExample> batch, const std::function<double()>& t_sampler,
                 std::mt19937_64& rng);

// Flow loss on a fixed grid of `t_points` timesteps with seed-fixed noise.
double evaluate_flow_loss(const Denoiser& model, std::span<const FlowExample> data, int t_points, std::uint64_t seed);

struct TrainLog {
  std::vector<double> total;
  std::vector<double> flow;
  std::vector<double> articulation;
};

// Minimizes L_fm + λ L_art with Adam. The head (optional) reads the last-block
// features of the same forward pass, i.e. single-timestep features.
TrainLog train_joint(Denoiser& model, ArticulationHead* head, std::span<const FlowExample> data,
                     const TrainConfig& cfg);

struct PipelineConfig {
  SamplerConfig stage1;
  SamplerConfig stage2;
  FeatureSource feature_source = FeatureSource::kStage2;
  bool bypass_stage1 = false;
  double threshold = 0.0;
  int stage1_resolution = 8;
  int stage2_resolution = 16;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

inline constexpr int kStage1PatchSize = 2;
inline constexpr int kStage1Channels = kStage1PatchSize * kStage1PatchSize * kStage1PatchSize;

// Stage-1 latent: per part, a grid of (R/2)³ patch tokens whose 8 channels are
// the ±1 occupancy of the patch's 2×2×2 cells (channel = dx + 2dy + 4dz).
TokenSequence encode_stage1_tokens(const PartVoxelSet& pv);
// Thresholds Stage-1 logits (> threshold ⇒ occupied) back into a part voxel set.
// Contested cells go to the part with the largest logit.
PartVoxelSet decode_stage1_tokens(const TokenSequence& tokens, int resolution, double threshold);
TokenLayout stage1_layout(int part_count, int resolution);

// Each cell becomes factor³ cells of the finer grid.
SparseOccupancy upsample(const SparseOccupancy& occ, int resolution);

struct TwoStageResult {
  PartVoxelSet voxels;       // Stage-2 resolution
  TokenSequence tokens;      // Stage-2 sampled token features
  FeatureCache cache;        // cache of the configured feature source
  FeatureCache stage1_cache; // empty when Stage 1 was bypassed
  FeatureCache stage2_cache;
};

// Number of parts named by a mask: labels 0..K-1, background = max_parts − 1.
int mask_part_count(const Eigen::MatrixXi& mask, int max_parts);

TwoStageResult run_two_stage(const Conditioning& cond, const Denoiser& stage1, const Denoiser& stage2,
                             const PipelineConfig& cfg, const PartVoxelSet* annotated = nullptr);

}  // namespace partflow
