#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "partflow/artcore.hpp"
#include "partflow/artihead.hpp"
#include "partflow/flowgen.hpp"
#include "partflow/netcore.hpp"

namespace partflow {

// End-to-end toy run: procedural dataset, joint denoiser + head training,
// and a sampled articulation check on the training set.
struct ToyTrainConfig {
  int objects = 32;
  int resolution = 8;
  DenoiserConfig denoiser;  // grid_resolution is forced to `resolution`
  HeadConfig head{128, 64, 6};
  TrainConfig train;
  SamplerConfig sampler;  // used for the articulation check
  bool train_stage1 = false;
  std::uint64_t model_seed = 1;
  std::uint64_t head_seed = 2;
  int eval_t_points = 4;
  std::uint64_t eval_seed = 7;
  bool check_articulation = true;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static ToyTrainConfig from_json(const nlohmann::json& j);
};

struct ArticulationFit {
  int type_correct = 0;
  int joints = 0;
  double max_axis_error_deg = 0.0;  // movable ground-truth joints only

  double type_accuracy() const { return joints == 0 ? 0.0 : static_cast<double>(type_correct) / joints; }
};

struct ToyTrainResult {
  std::unique_ptr<Denoiser> model;
  std::unique_ptr<Denoiser> stage1;  // null unless requested
  std::unique_ptr<ArticulationHead> head;
  TrainLog log;
  double initial_loss = 0.0;  // fixed-grid flow loss before training
  double final_loss = 0.0;
  ArticulationFit fit;

  nlohmann::json summary() const;
};

// Samples each example with `sampler` (seed offset by the example index),
// aggregates the cached features and decodes joints with the head.
ArticulationFit evaluate_articulation(const Denoiser& model, const ArticulationHead& head,
                                      const std::vector<ArticulatedObject>& objects,
                                      const std::vector<FlowExample>& data, const SamplerConfig& sampler);

ToyTrainResult train_toy(const ToyTrainConfig& cfg);

}  // namespace partflow
