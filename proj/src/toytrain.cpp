#include "partflow/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "partflow/errors.hpp"
#include "partflow/toydata.hpp"

namespace partflow {

nlohmann::json ToyTrainConfig::to_json() const {
  return {{"objects", objects},
          {"resolution", resolution},
          {"denoiser", denoiser.to_json()},
          {"head", head.to_json()},
          {"train", train.to_json()},
          {"sampler", sampler.to_json()},
          {"train_stage1", train_stage1},
          {"model_seed", model_seed},
          {"head_seed", head_seed},
          {"eval_t_points", eval_t_points},
          {"eval_seed", eval_seed},
          {"check_articulation", check_articulation}};
}

ToyTrainConfig ToyTrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("$", "toy training config must be an object");
  ToyTrainConfig c;
  c.objects = j.value("objects", c.objects);
  c.resolution = j.value("resolution", c.resolution);
  if (j.contains("denoiser")) c.denoiser = DenoiserConfig::from_json(j["denoiser"]);
  if (j.contains("head")) c.head = HeadConfig::from_json(j["head"]);
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
  if (j.contains("sampler")) c.sampler = SamplerConfig::from_json(j["sampler"]);
  c.train_stage1 = j.value("train_stage1", c.train_stage1);
  c.model_seed = j.value("model_seed", c.model_seed);
  c.head_seed = j.value("head_seed", c.head_seed);
  c.eval_t_points = j.value("eval_t_points", c.eval_t_points);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  c.check_articulation = j.value("check_articulation", c.check_articulation);
  if (c.objects < 1) throw SchemaError("objects", "must be positive");
  if (c.resolution < 8 || c.resolution % 2 != 0) throw SchemaError("resolution", "must be even and at least 8");
  if (c.eval_t_points < 1) throw SchemaError("eval_t_points", "must be positive");
  return c;
}

nlohmann::json ToyTrainResult::summary() const {
  const double reduction = initial_loss > 0.0 ? 1.0 - final_loss / initial_loss : 0.0;
  return {{"initial_flow_loss", initial_loss},
          {"final_flow_loss", final_loss},
          {"flow_loss_reduction", reduction},
          {"steps", log.total.size()},
          {"joint_type_accuracy", fit.type_accuracy()},
          {"joints", fit.joints},
          {"max_axis_error_deg", fit.max_axis_error_deg},
          {"stage1", stage1 != nullptr}};
}

ArticulationFit evaluate_articulation(const Denoiser& model, const ArticulationHead& head,
                                      const std::vector<ArticulatedObject>& objects,
                                      const std::vector<FlowExample>& data, const SamplerConfig& sampler) {
  if (objects.size() != data.size()) throw ShapeError("objects and examples differ in count");
  ArticulationFit fit;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& ex = data[k];
    const DenoiserField field(model, ex.data.coords, ex.data.part_ids, ex.cond);
    const TokenLayout layout{ex.data.coords, ex.data.part_ids, model.config().token_dim};
    SamplerConfig sc = sampler;
    sc.seed = sampler.seed + k;
    const auto sampled = euler_sample(field, layout, sc);
    const auto joints = predict_articulation(sampled.cache, head, objects[k].part_bounds());
    for (std::size_t i = 0; i < joints.size(); ++i) {
      const auto& gt = objects[k].parts[i].joint;
      ++fit.joints;
      if (joints[i].type == gt.type) ++fit.type_correct;
      if (gt.movable()) {
        const double c = std::clamp(joints[i].axis.dot(gt.axis), -1.0, 1.0);
        fit.max_axis_error_deg = std::max(fit.max_axis_error_deg, std::acos(c) * 180.0 / std::numbers::pi);
      }
    }
  }
  return fit;
}

ToyTrainResult train_toy(const ToyTrainConfig& cfg) {
  const auto objects = make_toy_dataset(cfg.objects, cfg.resolution);
  std::vector<FlowExample> data;
  data.reserve(objects.size());
  for (const auto& o : objects) data.push_back(make_flow_example(o, cfg.resolution));

  DenoiserConfig dc = cfg.denoiser;
  dc.grid_resolution = cfg.resolution;
  HeadConfig hc = cfg.head;
  hc.input_dim = 2 * dc.width;

  ToyTrainResult result;
  result.model = std::make_unique<Denoiser>(dc, cfg.model_seed);
  result.head = std::make_unique<ArticulationHead>(hc, cfg.head_seed);
  result.initial_loss = evaluate_flow_loss(*result.model, data, cfg.eval_t_points, cfg.eval_seed);
  result.log = train_joint(*result.model, result.head.get(), data, cfg.train);
  result.final_loss = evaluate_flow_loss(*result.model, data, cfg.eval_t_points, cfg.eval_seed);

  if (cfg.train_stage1) {
    DenoiserConfig s1 = dc;
    s1.stage = 1;
    s1.token_dim = kStage1Channels;
    s1.grid_resolution = cfg.resolution / kStage1PatchSize;
    std::vector<FlowExample> coarse;
    for (std::size_t k = 0; k < objects.size(); ++k) {
      FlowExample ex;
      ex.data = encode_stage1_tokens(voxelize_object(objects[k], cfg.resolution));
      ex.cond = data[k].cond;
      coarse.push_back(std::move(ex));
    }
    result.stage1 = std::make_unique<Denoiser>(s1, cfg.model_seed + 1);
    train_joint(*result.stage1, nullptr, coarse, cfg.train);
  }
  if (cfg.check_articulation) {
    result.fit = evaluate_articulation(*result.model, *result.head, objects, data, cfg.sampler);
  }
  return result;
}

}  // namespace partflow
