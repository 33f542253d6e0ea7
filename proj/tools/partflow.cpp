// Command-line front end. Every subcommand prints JSON on stdout; diagnostics
// and errors go to stderr. Exit status: 0 success, 1 failure, 2 bad usage.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "partflow/errors.hpp"
#include "partflow/interop.hpp"
#include "partflow/kinematics.hpp"
#include "partflow/metrics.hpp"
#include "partflow/toydata.hpp"
#include "partflow/toytrain.hpp"

using namespace partflow;
using nlohmann::json;

namespace {

void print(const json& j) { std::cout << dump_canonical(j); }

json issues_json(const std::vector<Issue>& issues) {
  json out = json::array();
  for (const auto& i : issues) out.push_back({{"code", i.code}, {"part", i.part}, {"message", i.message}});
  return out;
}

json load_aliases(const std::string& path) { return path.empty() ? json(nullptr) : read_json_file(path); }

void emit_object(const ArticulatedObject& obj, const std::string& out) {
  if (out.empty()) {
    print(object_to_json(obj));
  } else {
    save_object(out, obj);
    print({{"output", out}, {"parts", obj.size()}});
  }
}

ArticulatedObject object_from_sample(const TwoStageResult& result, const std::vector<JointSpec>& joints) {
  ArticulatedObject obj;
  for (std::size_t i = 0; i < result.voxels.part_count(); ++i) {
    const auto& occ = result.voxels.parts[i];
    Part part;
    part.id = static_cast<int>(i);
    part.geometry = PartGeometry::voxels(cell_centers(occ), 1.0 / occ.resolution());
    if (i < joints.size()) part.joint = joints[i];
    obj.parts.push_back(std::move(part));
  }
  return obj;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"partflow: articulated object toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "random seed"); };

  // validate
  std::string in_path, aliases_path, out_path;
  auto* validate = app.add_subcommand("validate", "check an object file against the structural rules");
  validate->add_option("object", in_path)->required();
  validate->add_option("--aliases", aliases_path, "semantic alias map (JSON)");
  add_seed(validate);

  // simplify
  auto* simplify = app.add_subcommand("simplify", "collapse fixed joints and rebuild a depth-1 tree");
  simplify->add_option("object", in_path)->required();
  simplify->add_option("-o,--output", out_path);
  simplify->add_option("--aliases", aliases_path);
  add_seed(simplify);

  // pose
  std::vector<double> state;
  double fraction = 0.0;
  auto* pose = app.add_subcommand("pose", "pose an object by joint values or a fraction of each range");
  pose->add_option("object", in_path)->required();
  auto* state_opt = pose->add_option("--state", state, "one joint value per part")->delimiter(',');
  auto* frac_opt = pose->add_option("--fraction", fraction, "fraction of every joint range");
  state_opt->excludes(frac_opt);
  pose->add_option("-o,--output", out_path);
  add_seed(pose);

  // eval
  std::string gt_path;
  EvalConfig eval_cfg;
  bool one_at_a_time = false, no_articulated = false;
  auto* eval = app.add_subcommand("eval", "RS / AS distances and AOR of a prediction against ground truth");
  eval->add_option("prediction", in_path)->required();
  eval->add_option("ground_truth", gt_path)->required();
  eval->add_option("--fractions", eval_cfg.fractions, "AS opening fractions")->delimiter(',');
  eval->add_option("--points", eval_cfg.points, "point budget for the chamfer distance");
  eval->add_option("--aor-res", eval_cfg.aor_resolution, "voxel resolution for AOR");
  eval->add_flag("--one-at-a-time", one_at_a_time, "open one joint per AS state");
  eval->add_flag("--per-part-chamfer", eval_cfg.per_part_chamfer);
  eval->add_flag("--rest-only", no_articulated, "skip the articulated states");
  add_seed(eval);

  // export-urdf
  std::string robot_name = "object";
  auto* urdf = app.add_subcommand("export-urdf", "write a depth-1 object as URDF");
  urdf->add_option("object", in_path)->required();
  urdf->add_option("-o,--output", out_path)->required();
  urdf->add_option("--name", robot_name);
  add_seed(urdf);

  // extract-physx
  auto* physx = app.add_subcommand("extract-physx", "per-vertex kinematic predictions to a part-level object");
  physx->add_option("predictions", in_path)->required();
  physx->add_option("-o,--output", out_path);
  add_seed(physx);

  // make-toy
  int toy_kind = 0, toy_variant = 0, toy_res = 8;
  std::string condition_out;
  auto* make_toy = app.add_subcommand("make-toy", "procedural two-part cabinet and its conditioning");
  make_toy->add_option("--kind", toy_kind, "0 door-left, 1 door-right, 2 drawer, 3 lid")->check(CLI::Range(0, 3));
  make_toy->add_option("--variant", toy_variant)->check(CLI::Range(0, 7));
  make_toy->add_option("--resolution", toy_res);
  make_toy->add_option("-o,--output", out_path);
  make_toy->add_option("--condition", condition_out, "write the rendered mask / features here");
  add_seed(make_toy);

  // train-toy
  std::string config_path, checkpoint_path;
  auto* train = app.add_subcommand("train-toy", "train denoiser and articulation head on the toy dataset");
  train->add_option("--config", config_path)->required();
  train->add_option("-o,--checkpoint", checkpoint_path);
  add_seed(train);

  // sample
  std::string mask_path, voxels_path, cache_out, pipeline_path;
  auto* sample = app.add_subcommand("sample", "two-stage sampling from a mask and feature map");
  sample->add_option("--checkpoint", checkpoint_path)->required();
  sample->add_option("--mask", mask_path, "conditioning file (mask, features, grid)")->required();
  sample->add_option("--voxels", voxels_path, "annotated object replacing Stage 1");
  sample->add_option("--pipeline", pipeline_path, "pipeline config (JSON)");
  sample->add_option("--cache-out", cache_out, "write the feature cache and part boxes here");
  sample->add_option("-o,--output", out_path);
  add_seed(sample);

  // regress-arti
  std::string cache_path;
  int last_steps = 0;
  auto* regress = app.add_subcommand("regress-arti", "joint parameters from a feature cache");
  regress->add_option("--cache", cache_path)->required();
  regress->add_option("--checkpoint", checkpoint_path)->required();
  regress->add_option("--steps", last_steps, "keep only the last S cached steps (0: all)");
  add_seed(regress);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*validate) {
      const auto obj = load_object(in_path, load_aliases(aliases_path));
      const auto report = validate_object(obj);
      print({{"ok", report.ok()},
             {"parts", obj.size()},
             {"violations", issues_json(report.violations)},
             {"advisories", issues_json(report.advisories)},
             {"depth1", report.ok() && is_depth1(obj)}});
      return report.ok() ? 0 : 1;
    }
    if (*simplify) {
      const auto obj = load_object(in_path, load_aliases(aliases_path));
      require_tree(obj);
      emit_object(build_depth1(collapse_fixed_joints(obj)), out_path);
      return 0;
    }
    if (*pose) {
      const auto obj = load_object(in_path);
      JointState q;
      if (*frac_opt) {
        const double f[] = {fraction};
        q = sample_states(obj, f).front();
      } else if (*state_opt) {
        q.values = state;
      } else {
        q.values.assign(obj.size(), 0.0);
      }
      emit_object(pose_object(obj, q), out_path);
      return 0;
    }
    if (*eval) {
      const auto pred = load_object(in_path);
      const auto gt = load_object(gt_path);
      eval_cfg.seed = seed;
      eval_cfg.mode = one_at_a_time ? OpeningMode::kOneAtATime : OpeningMode::kJoint;
      if (no_articulated) eval_cfg.fractions.clear();
      const auto report = evaluate(pred, gt, eval_cfg);
      print(report.to_json());
      std::cerr << report.to_table();
      return 0;
    }
    if (*urdf) {
      const auto obj = load_object(in_path);
      const std::string text = export_urdf(obj, robot_name);
      write_text_atomic(out_path, text);
      const auto model = parse_urdf(text);
      print({{"output", out_path}, {"links", model.links.size()}, {"joints", model.joints.size()}});
      return 0;
    }
    if (*physx) {
      const auto preds = vertex_predictions_from_json(read_json_file(in_path));
      emit_object(extract_physx_parts(preds), out_path);
      return 0;
    }
    if (*make_toy) {
      const auto obj = make_toy_object(static_cast<ToyKind>(toy_kind), toy_variant, toy_res);
      if (!condition_out.empty()) {
        write_json_file(condition_out, conditioning_to_json(render_conditioning(voxelize_object(obj, toy_res))), 17);
      }
      emit_object(obj, out_path);
      return 0;
    }
    if (*train) {
      auto cfg = ToyTrainConfig::from_json(read_json_file(config_path));
      if (train->count("--seed")) {
        cfg.train.seed = seed;
        cfg.model_seed = seed + 1;
        cfg.head_seed = seed + 2;
      }
      const auto result = train_toy(cfg);
      json summary = result.summary();
      if (!checkpoint_path.empty()) {
        save_checkpoint(checkpoint_path, *result.model, result.head.get(), {{"toy", cfg.to_json()}},
                        result.stage1.get());
        summary["checkpoint"] = checkpoint_path;
      }
      print(summary);
      return 0;
    }
    if (*sample) {
      const auto ck = load_checkpoint(checkpoint_path);
      const Conditioning cond = conditioning_from_json(read_json_file(mask_path));
      PipelineConfig pc;
      if (!pipeline_path.empty()) pc = PipelineConfig::from_json(read_json_file(pipeline_path));
      pc.stage1.seed = seed;
      pc.stage2.seed = seed + 1;
      pc.stage2_resolution = ck.denoiser.grid_resolution;

      const Denoiser stage2 = make_denoiser(ck.denoiser, ck.denoiser_params);
      std::unique_ptr<Denoiser> stage1;
      std::optional<PartVoxelSet> annotated;
      if (!voxels_path.empty()) {
        annotated = voxelize_object(load_object(voxels_path), pc.stage2_resolution);
        pc.bypass_stage1 = true;
        pc.feature_source = FeatureSource::kStage2;
      } else if (ck.stage1) {
        stage1 = std::make_unique<Denoiser>(make_denoiser(*ck.stage1, ck.stage1_params));
        pc.stage1_resolution = ck.stage1->grid_resolution * kStage1PatchSize;
      } else {
        throw Error("checkpoint has no Stage-1 model; pass --voxels to bypass Stage 1");
      }
      const Denoiser& s1 = stage1 ? *stage1 : stage2;
      const auto result = run_two_stage(cond, s1, stage2, pc, annotated ? &*annotated : nullptr);

      std::vector<Aabb> boxes;
      for (const auto& occ : result.voxels.parts) {
        boxes.push_back(PartGeometry::voxels(cell_centers(occ), 1.0 / occ.resolution()).bounds);
      }
      std::vector<JointSpec> joints;
      if (ck.head) joints = predict_articulation(result.cache, make_head(*ck.head, ck.head_params), boxes);
      if (!cache_out.empty()) write_json_file(cache_out, cache_file_to_json({result.cache, boxes}), 17);
      emit_object(object_from_sample(result, joints), out_path);
      return 0;
    }
    if (*regress) {
      auto file = cache_file_from_json(read_json_file(cache_path));
      const auto ck = load_checkpoint(checkpoint_path);
      if (!ck.head) throw Error("checkpoint has no articulation head");
      const FeatureCache cache = last_steps > 0 ? file.cache.last_steps(last_steps) : file.cache;
      const auto joints = predict_articulation(cache, make_head(*ck.head, ck.head_params), file.boxes);
      json out = json::array();
      for (std::size_t i = 0; i < joints.size(); ++i) {
        json j = joint_to_json(joints[i]);
        j["semantic"] = std::string(to_string(joints[i].semantic));
        j["part"] = i;
        out.push_back(std::move(j));
      }
      print({{"joints", std::move(out)}, {"steps", cache.steps()}, {"source", std::string(to_string(cache.source()))}});
      return 0;
    }
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    print({{"ok", false}, {"error", e.what()}, {"path", e.path()}});
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    print({{"ok", false}, {"error", e.what()}});
    return 1;
  }
  return 1;
}
