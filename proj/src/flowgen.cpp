#include "partflow/flowgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "partflow/errors.hpp"

namespace partflow {
namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace

void SamplerConfig::validate() const {
  if (steps < 1) throw RangeError("sampler needs at least one step");
  if (cache_last < 1 || cache_last > steps) throw RangeError("cache_last must lie in [1, steps]");
  if (!(cfg_scale >= 0.0)) throw RangeError("cfg_scale must be >= 0");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"steps", steps}, {"cfg_scale", cfg_scale}, {"cache_last", cache_last}, {"seed", seed}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.steps = j.value("steps", c.steps);
  c.cfg_scale = j.value("cfg_scale", c.cfg_scale);
  c.cache_last = j.value("cache_last", c.cache_last);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw RangeError("learning rate must be positive");
  if (steps < 0 || batch_size < 1) throw RangeError("invalid step count or batch size");
  if (!(articulation_weight >= 0.0)) throw RangeError("articulation weight must be >= 0");
  if (!(uncond_probability >= 0.0 && uncond_probability <= 1.0)) throw RangeError("uncond probability outside [0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"steps", steps},
          {"batch_size", batch_size},
          {"articulation_weight", articulation_weight},
          {"uncond_probability", uncond_probability},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.articulation_weight = j.value("articulation_weight", c.articulation_weight);
  c.uncond_probability = j.value("uncond_probability", c.uncond_probability);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

FlowPair fm_pair(const Eigen::MatrixXd& x_data, const Eigen::MatrixXd& noise, double t) {
  require_same_shape(x_data, noise, "fm_pair");
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("t must lie in [0, 1]");
  FlowPair p;
  // Endpoints are returned verbatim so that they hold bit for bit.
  if (t == 0.0) {
    p.x_t = noise;
  } else if (t == 1.0) {
    p.x_t = x_data;
  } else {
    p.x_t = (1.0 - t) * noise + t * x_data;
  }
  p.v_target = x_data - noise;
  return p;
}

Eigen::MatrixXd cfg_velocity(const Eigen::MatrixXd& v_cond, const Eigen::MatrixXd& v_uncond, double s) {
  require_same_shape(v_cond, v_uncond, "cfg_velocity");
  if (s == 1.0) return v_cond;
  if (s == 0.0) return v_uncond;
  return v_uncond + s * (v_cond - v_uncond);
}

DenoiserField::DenoiserField(const Denoiser& model, std::vector<Coord> coords, std::vector<int> part_ids,
                             Conditioning cond)
    : model_(model), coords_(std::move(coords)), part_ids_(std::move(part_ids)), cond_(std::move(cond)) {}

FieldOutput DenoiserField::evaluate(const Eigen::MatrixXd& x, double t, bool conditional) const {
  ad::NoGradGuard guard;
  const auto out = model_.forward(ad::Var::constant(x), coords_, part_ids_, t, conditional ? &cond_ : nullptr);
  return {out.velocity.value(), out.last_block.value()};
}

SampleResult euler_sample(const VelocityField& field, const TokenLayout& layout, const SamplerConfig& cfg,
                          FeatureSource source) {
  cfg.validate();
  const auto len = static_cast<Eigen::Index>(layout.coords.size());
  if (static_cast<Eigen::Index>(layout.part_ids.size()) != len) throw ShapeError("coords and part ids differ in length");
  const auto spans = part_spans(layout.part_ids);

  std::mt19937_64 rng(cfg.seed);
  Eigen::MatrixXd x = gaussian(len, layout.dim, rng);
  SampleResult result;
  result.cache = FeatureCache(source);
  const double dt = 1.0 / cfg.steps;
  const int first_cached = cfg.steps - cfg.cache_last + 1;
  for (int k = 1; k <= cfg.steps; ++k) {
    const double t = static_cast<double>(k - 1) / cfg.steps;
    FieldOutput cond = field.evaluate(x, t, true);
    require_same_shape(cond.velocity, x, "velocity field");
    Eigen::MatrixXd v;
    if (cfg.cfg_scale == 1.0) {
      v = std::move(cond.velocity);
    } else {
      const FieldOutput uncond = field.evaluate(x, t, false);
      v = cfg_velocity(cond.velocity, uncond.velocity, cfg.cfg_scale);
    }
    if (k >= first_cached && cond.features.size() > 0) {
      for (const auto& s : spans) result.cache.put(k, s.part, cond.features.middleRows(s.begin, s.count));
    }
    x += dt * v;
    if (!x.allFinite()) throw SamplerDivergence("non-finite sampler state at step " + std::to_string(k));
  }
  result.tokens.tokens = std::move(x);
  result.tokens.coords = layout.coords;
  result.tokens.part_ids = layout.part_ids;
  return result;
}

double flow_loss(const VelocityFn& model, std::span<const FlowExample> batch, const std::function<double()>& t_sampler,
                 std::mt19937_64& rng) {
  if (batch.empty()) throw ShapeError("flow loss of an empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    const double t = t_sampler();
    const Eigen::MatrixXd noise = gaussian(ex.data.tokens.rows(), ex.data.tokens.cols(), rng);
    const FlowPair pair = fm_pair(ex.data.tokens, noise, t);
    const Eigen::MatrixXd v = model(ex, pair.x_t, t);
    require_same_shape(v, pair.v_target, "flow loss");
    total += (v - pair.v_target).squaredNorm() / static_cast<double>(v.size());
  }
  const double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw TrainingError("non-finite flow loss");
  return loss;
}

double flow_loss(const Denoiser& model, std::span<const FlowExample> batch, const std::function<double()>& t_sampler,
                 std::mt19937_64& rng) {
  const VelocityFn fn = [&](const FlowExample& ex, const Eigen::MatrixXd& x_t, double t) {
    return forward_denoiser(model, TokenSequence{x_t, ex.data.coords, ex.data.part_ids}, t, &ex.cond).velocity.tokens;
  };
  return flow_loss(fn, batch, t_sampler, rng);
}

double evaluate_flow_loss(const Denoiser& model, std::span<const FlowExample> data, int t_points, std::uint64_t seed) {
  if (t_points < 1) throw RangeError("need at least one evaluation timestep");
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int k = 0; k < t_points; ++k) {
    const double t = (k + 0.5) / t_points;
    total += flow_loss(model, data, [t] { return t; }, rng);
  }
  return total / t_points;
}

TrainLog train_joint(Denoiser& model, ArticulationHead* head, std::span<const FlowExample> data,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ShapeError("training set is empty");
  std::vector<ad::Var> params = model.params().vars();
  if (head != nullptr) {
    const auto hp = head->params().vars();
    params.insert(params.end(), hp.begin(), hp.end());
  }
  ad::Adam adam(params, cfg.learning_rate);
  adam.zero_grad();

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<ad::Var> example_losses;
    double fm_sum = 0.0, art_sum = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const FlowExample& ex = data[order[cursor++]];
      const double t = uniform(rng);
      const Eigen::MatrixXd noise = gaussian(ex.data.tokens.rows(), ex.data.tokens.cols(), rng);
      const FlowPair pair = fm_pair(ex.data.tokens, noise, t);
      const bool drop_cond = uniform(rng) < cfg.uncond_probability;
      const auto out =
          model.forward(ad::Var::constant(pair.x_t), ex.data.coords, ex.data.part_ids, t, drop_cond ? nullptr : &ex.cond);
      ad::Var loss = ad::mean_square(ad::sub(out.velocity, ad::Var::constant(pair.v_target)));
      fm_sum += loss.value()(0, 0);
      if (head != nullptr && ex.joint_targets.size() > 0) {
        std::vector<ad::Var> pooled;
        for (const auto& s : part_spans(ex.data.part_ids)) {
          pooled.push_back(pool_mean_max(ad::slice_rows(out.last_block, s.begin, s.count)));
        }
        const ad::Var art = articulation_loss(head->forward(ad::vstack(pooled)), ex.joint_targets);
        art_sum += art.value()(0, 0);
        loss = ad::add(loss, ad::scale(art, cfg.articulation_weight));
      }
      example_losses.push_back(loss);
    }
    const ad::Var total = ad::scale(ad::sum(ad::vstack(example_losses)), 1.0 / cfg.batch_size);
    const double value = total.value()(0, 0);
    if (!std::isfinite(value)) throw TrainingError("non-finite training loss at step " + std::to_string(step));
    ad::backward(total);
    adam.step();
    adam.zero_grad();
    log.total.push_back(value);
    log.flow.push_back(fm_sum / cfg.batch_size);
    log.articulation.push_back(art_sum / cfg.batch_size);
  }
  return log;
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"stage1", stage1.to_json()},
          {"stage2", stage2.to_json()},
          {"feature_source", std::string(to_string(feature_source))},
          {"bypass_stage1", bypass_stage1},
          {"threshold", threshold},
          {"stage1_resolution", stage1_resolution},
          {"stage2_resolution", stage2_resolution}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("stage1")) c.stage1 = SamplerConfig::from_json(j["stage1"]);
  if (j.contains("stage2")) c.stage2 = SamplerConfig::from_json(j["stage2"]);
  if (j.contains("feature_source")) c.feature_source = parse_feature_source(j["feature_source"].get<std::string>());
  c.bypass_stage1 = j.value("bypass_stage1", c.bypass_stage1);
  c.threshold = j.value("threshold", c.threshold);
  c.stage1_resolution = j.value("stage1_resolution", c.stage1_resolution);
  c.stage2_resolution = j.value("stage2_resolution", c.stage2_resolution);
  return c;
}

TokenLayout stage1_layout(int part_count, int resolution) {
  if (resolution % kStage1PatchSize != 0) throw ShapeError("Stage-1 resolution must be even");
  const int p = resolution / kStage1PatchSize;
  TokenLayout layout;
  layout.dim = kStage1Channels;
  for (int part = 0; part < part_count; ++part) {
    for (int z = 0; z < p; ++z) {
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          layout.coords.push_back({x, y, z});
          layout.part_ids.push_back(part);
        }
      }
    }
  }
  return layout;
}

TokenSequence encode_stage1_tokens(const PartVoxelSet& pv) {
  const TokenLayout layout = stage1_layout(static_cast<int>(pv.part_count()), pv.resolution);
  TokenSequence seq{Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(layout.coords.size()), kStage1Channels, -1.0),
                    layout.coords, layout.part_ids};
  for (std::size_t row = 0; row < layout.coords.size(); ++row) {
    const auto& patch = layout.coords[row];
    const auto& occ = pv.parts[layout.part_ids[row]];
    for (int ch = 0; ch < kStage1Channels; ++ch) {
      const Coord cell{kStage1PatchSize * patch[0] + (ch & 1), kStage1PatchSize * patch[1] + ((ch >> 1) & 1),
                       kStage1PatchSize * patch[2] + ((ch >> 2) & 1)};
      if (occ.contains(cell)) seq.tokens(static_cast<Eigen::Index>(row), ch) = 1.0;
    }
  }
  return seq;
}

PartVoxelSet decode_stage1_tokens(const TokenSequence& tokens, int resolution, double threshold) {
  if (tokens.dim() != kStage1Channels) throw ShapeError("Stage-1 tokens must have 8 channels");
  const auto spans = part_spans(tokens.part_ids);
  const int parts = spans.empty() ? 0 : spans.back().part + 1;
  // a cell above threshold in several parts goes to the part with the largest logit
  std::map<Coord, std::pair<double, int>> owner;
  for (std::size_t row = 0; row < tokens.length(); ++row) {
    const auto& patch = tokens.coords[row];
    for (int ch = 0; ch < kStage1Channels; ++ch) {
      const double v = tokens.tokens(static_cast<Eigen::Index>(row), ch);
      if (!(v > threshold)) continue;
      const Coord cell{kStage1PatchSize * patch[0] + (ch & 1), kStage1PatchSize * patch[1] + ((ch >> 1) & 1),
                       kStage1PatchSize * patch[2] + ((ch >> 2) & 1)};
      const int part = tokens.part_ids[row];
      auto [it, fresh] = owner.try_emplace(cell, v, part);
      if (!fresh && (v > it->second.first || (v == it->second.first && part < it->second.second))) {
        it->second = {v, part};
      }
    }
  }
  std::vector<std::vector<Coord>> cells(parts);
  for (const auto& [cell, best] : owner) cells[best.second].push_back(cell);
  std::vector<SparseOccupancy> occ;
  for (const auto& c : cells) occ.push_back(SparseOccupancy::from_cells(resolution, c));
  return make_part_voxel_set(std::move(occ));
}

SparseOccupancy upsample(const SparseOccupancy& occ, int resolution) {
  if (resolution % occ.resolution() != 0) throw ShapeError("target resolution must be a multiple of the source");
  const int f = resolution / occ.resolution();
  std::vector<Coord> cells;
  cells.reserve(occ.size() * f * f * f);
  for (const auto& c : occ.cells()) {
    for (int dz = 0; dz < f; ++dz) {
      for (int dy = 0; dy < f; ++dy) {
        for (int dx = 0; dx < f; ++dx) cells.push_back({c[0] * f + dx, c[1] * f + dy, c[2] * f + dz});
      }
    }
  }
  return SparseOccupancy::from_cells(resolution, cells);
}

int mask_part_count(const Eigen::MatrixXi& mask, int max_parts) {
  const int background = max_parts - 1;
  int count = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const int v = mask.data()[i];
    if (v < 0 || v >= max_parts) throw RangeError("mask value outside [0, T)");
    if (v != background) count = std::max(count, v + 1);
  }
  return count;
}

TwoStageResult run_two_stage(const Conditioning& cond, const Denoiser& stage1, const Denoiser& stage2,
                             const PipelineConfig& cfg, const PartVoxelSet* annotated) {
  TwoStageResult result;
  PartVoxelSet coarse;
  if (cfg.bypass_stage1) {
    if (annotated == nullptr) throw ShapeError("Stage-1 bypass needs annotated voxels");
    coarse = *annotated;
  } else {
    if (stage1.config().stage != 1 || stage1.config().token_dim != kStage1Channels) {
      throw ShapeError("Stage-1 model must be a stage-1 denoiser with 8 token channels");
    }
    const int parts = mask_part_count(cond.mask, stage1.config().max_parts);
    if (parts == 0) throw DegenerateError("mask names no parts");
    const TokenLayout layout = stage1_layout(parts, cfg.stage1_resolution);
    const DenoiserField field(stage1, layout.coords, layout.part_ids, cond);
    auto sampled = euler_sample(field, layout, cfg.stage1, FeatureSource::kStage1);
    coarse = decode_stage1_tokens(sampled.tokens, cfg.stage1_resolution, cfg.threshold);
    result.stage1_cache = std::move(sampled.cache);
  }
  for (std::size_t i = 0; i < coarse.part_count(); ++i) {
    if (coarse.parts[i].empty()) throw DegenerateError("Stage 1 produced an empty part " + std::to_string(i));
  }

  std::vector<SparseOccupancy> fine;
  for (const auto& p : coarse.parts) {
    fine.push_back(p.resolution() == cfg.stage2_resolution ? p : upsample(p, cfg.stage2_resolution));
  }
  result.voxels = make_part_voxel_set(std::move(fine));

  TokenLayout layout;
  layout.dim = stage2.config().token_dim;
  for (int part = 0; part < static_cast<int>(result.voxels.part_count()); ++part) {
    for (const auto& c : result.voxels.parts[part].cells()) {
      layout.coords.push_back(c);
      layout.part_ids.push_back(part);
    }
  }
  const DenoiserField field(stage2, layout.coords, layout.part_ids, cond);
  auto sampled = euler_sample(field, layout, cfg.stage2, FeatureSource::kStage2);
  result.tokens = std::move(sampled.tokens);
  result.stage2_cache = std::move(sampled.cache);
  result.cache = cfg.feature_source == FeatureSource::kStage1 ? result.stage1_cache : result.stage2_cache;
  if (result.cache.empty()) throw ShapeError("requested feature source produced no cache (Stage 1 bypassed?)");
  return result;
}

}  // namespace partflow
