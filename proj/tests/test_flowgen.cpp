#include <doctest.h>

#include <random>

#include "partflow/artihead.hpp"
#include "partflow/errors.hpp"
#include "partflow/flowgen.hpp"
#include "partflow/toydata.hpp"

using namespace partflow;

namespace {

Eigen::MatrixXd randn(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// v(x, t) = c, features = rows of x scaled by t.
class ConstantField : public VelocityField {
 public:
  explicit ConstantField(Eigen::MatrixXd c) : c_(std::move(c)) {}
  FieldOutput evaluate(const Eigen::MatrixXd& x, double t, bool conditional) const override {
    ++calls;
    return {conditional ? c_ : Eigen::MatrixXd(0.5 * c_), t * x};
  }
  mutable int calls = 0;

 private:
  Eigen::MatrixXd c_;
};

TokenLayout layout_of(const std::vector<int>& sizes, int dim) {
  TokenLayout l;
  l.dim = dim;
  for (std::size_t p = 0; p < sizes.size(); ++p) {
    for (int i = 0; i < sizes[p]; ++i) {
      l.coords.push_back({i, 0, 0});
      l.part_ids.push_back(static_cast<int>(p));
    }
  }
  return l;
}

DenoiserConfig toy_denoiser(int stage, int token_dim, int resolution) {
  DenoiserConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.token_dim = token_dim;
  c.part_dim = 16;
  c.max_parts = 8;
  c.pe_dim = 12;
  c.grid_resolution = resolution;
  c.time_dim = 8;
  c.stage = stage;
  return c;
}

}  // namespace

TEST_SUITE("flowgen") {

TEST_CASE("interpolation endpoints and target velocity") {
  std::mt19937_64 rng(1);
  const auto x = randn(4, 3, rng), n = randn(4, 3, rng);
  CHECK(fm_pair(x, n, 0.0).x_t == n);
  CHECK(fm_pair(x, n, 1.0).x_t == x);
  const auto mid = fm_pair(x, n, 0.25);
  CHECK((mid.x_t - (0.75 * n + 0.25 * x)).norm() < 1e-15);
  CHECK(mid.v_target == x - n);
  CHECK_THROWS_AS(fm_pair(x, n, 1.1), RangeError);
  CHECK_THROWS_AS(fm_pair(x, randn(3, 3, rng), 0.5), ShapeError);
}

TEST_CASE("guidance combination examples") {
  Eigen::MatrixXd c(1, 2), u(1, 2);
  c << 1, 2;
  u << 0, 1;
  CHECK(cfg_velocity(c, u, 1.0) == c);
  CHECK(cfg_velocity(c, u, 0.0) == u);
  Eigen::MatrixXd expected(1, 2);
  expected << 7, 8;
  CHECK(cfg_velocity(c, u, 7.0) == expected);
}

TEST_CASE("oracle velocity gives zero loss; zero model gives about 1 + |x|^2") {
  std::mt19937_64 rng(2);
  FlowExample ex;
  ex.data.tokens = Eigen::MatrixXd::Zero(200, 6);
  for (int i = 0; i < 200; ++i) {
    ex.data.coords.push_back({i, 0, 0});
    ex.data.part_ids.push_back(0);
  }
  const std::vector<FlowExample> batch = {ex};
  std::uniform_real_distribution<double> u(0, 1);
  auto ts = [&] { return u(rng); };
  // with x = 0 the target is −noise and x_t = (1 − t) noise
  const VelocityFn oracle = [](const FlowExample&, const Eigen::MatrixXd& xt, double t) -> Eigen::MatrixXd {
    return -xt / (1.0 - t);
  };
  CHECK(flow_loss(oracle, batch, ts, rng) < 1e-20);
  const VelocityFn zero = [](const FlowExample&, const Eigen::MatrixXd& xt, double) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Zero(xt.rows(), xt.cols());
  };
  double sum = 0;
  for (int i = 0; i < 20; ++i) sum += flow_loss(zero, batch, ts, rng);
  CHECK(sum / 20 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("Euler integration of a constant field is exact") {
  Eigen::MatrixXd c(3, 2);
  c << 0.5, -1.0, 0.25, 2.0, -0.75, 1.5;
  const ConstantField field(c);
  SamplerConfig cfg;
  cfg.cfg_scale = 1.0;
  cfg.steps = 16;
  cfg.cache_last = 4;
  cfg.seed = 11;
  const auto layout = layout_of({1, 2}, 2);
  const auto out = euler_sample(field, layout, cfg);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd x0(3, 2);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index k = 0; k < 2; ++k) x0(r, k) = g(rng);  // row-major draw order
  // power-of-two step count with dyadic c: every partial sum is exact
  CHECK(out.tokens.tokens == x0 + c);
  CHECK(field.calls == 16);

  cfg.steps = 25;
  cfg.cache_last = 20;
  CHECK((euler_sample(field, layout, cfg).tokens.tokens - (x0 + c)).norm() < 1e-12);
}

TEST_CASE("guidance doubles the number of evaluations unless s = 1") {
  const ConstantField field(Eigen::MatrixXd::Ones(2, 2));
  SamplerConfig cfg;
  cfg.steps = 5;
  cfg.cache_last = 5;
  cfg.cfg_scale = 3.0;
  euler_sample(field, layout_of({2}, 2), cfg);
  CHECK(field.calls == 10);
}

TEST_CASE("the cache holds the last S steps for every part") {
  const ConstantField field(Eigen::MatrixXd::Ones(6, 3));
  SamplerConfig cfg;
  cfg.steps = 25;
  for (int s : {1, 15, 20, 25}) {
    cfg.cache_last = s;
    const auto out = euler_sample(field, layout_of({2, 3, 1}, 3), cfg);
    std::set<FeatureCache::Key> expected;
    for (int k = 25 - s + 1; k <= 25; ++k)
      for (int p = 0; p < 3; ++p) expected.insert({k, p});
    CHECK(out.cache.keys() == expected);
    CHECK(out.cache.at(25, 1).rows() == 3);
  }
  cfg.cache_last = 26;
  CHECK_THROWS_AS(euler_sample(field, layout_of({1}, 3), cfg), RangeError);
}

TEST_CASE("cached features come from the step's own evaluation time") {
  const ConstantField field(Eigen::MatrixXd::Ones(2, 1));
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.cache_last = 4;
  cfg.cfg_scale = 1.0;
  const auto out = euler_sample(field, layout_of({1, 1}, 1), cfg);
  // step 1 runs at t = 0, so its features vanish
  CHECK(out.cache.at(1, 0).isZero(0.0));
  CHECK_FALSE(out.cache.at(2, 0).isZero(0.0));
}

TEST_CASE("sampling is deterministic and guidance 1 equals the conditional branch") {
  const auto obj = make_toy_object(ToyKind::kDrawer, 0, 8);
  const auto ex = make_flow_example(obj, 8);
  const Denoiser model(toy_denoiser(2, kToyFeatureDim, 8), 4);
  const DenoiserField field(model, ex.data.coords, ex.data.part_ids, ex.cond);
  TokenLayout layout{ex.data.coords, ex.data.part_ids, kToyFeatureDim};
  SamplerConfig cfg;
  cfg.steps = 6;
  cfg.cache_last = 3;
  cfg.seed = 5;
  const auto a = euler_sample(field, layout, cfg), b = euler_sample(field, layout, cfg);
  CHECK(a.tokens.tokens == b.tokens.tokens);
  CHECK(a.cache == b.cache);

  cfg.cfg_scale = 1.0;
  const auto guided = euler_sample(field, layout, cfg);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd x(layout.coords.size(), kToyFeatureDim);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index k = 0; k < x.cols(); ++k) x(r, k) = g(rng);
  for (int k = 1; k <= 6; ++k) x += (1.0 / 6) * field.evaluate(x, (k - 1) / 6.0, true).velocity;
  CHECK(guided.tokens.tokens == x);
}

TEST_CASE("stage-1 latent encodes and decodes occupancy exactly") {
  const auto pv = voxelize_object(make_toy_object(ToyKind::kDoorLeft, 1, 8), 8);
  const auto tokens = encode_stage1_tokens(pv);
  CHECK(tokens.dim() == kStage1Channels);
  CHECK(tokens.length() == pv.part_count() * 64);
  const auto back = decode_stage1_tokens(tokens, 8, 0.0);
  REQUIRE(back.part_count() == pv.part_count());
  for (std::size_t i = 0; i < pv.part_count(); ++i) CHECK(back.parts[i] == pv.parts[i]);
}

TEST_CASE("raising the threshold never adds voxels") {
  std::mt19937_64 rng(6);
  const auto layout = stage1_layout(1, 8);
  TokenSequence t{randn(static_cast<int>(layout.coords.size()), 8, rng), layout.coords, layout.part_ids};
  std::size_t prev = SIZE_MAX;
  SparseOccupancy prev_occ(8);
  for (double th : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    const auto occ = decode_stage1_tokens(t, 8, th).parts[0];
    CHECK(occ.size() <= prev);
    if (prev != SIZE_MAX) {
      for (const auto& c : occ.cells()) CHECK(prev_occ.contains(c));
    }
    prev = occ.size();
    prev_occ = occ;
  }
}

TEST_CASE("upsampling turns each cell into a factor^3 block") {
  const auto occ = SparseOccupancy::from_cells(2, std::vector<Coord>{{1, 0, 1}});
  const auto up = upsample(occ, 8);
  CHECK(up.size() == 64);
  CHECK(up.contains({4, 0, 4}));
  CHECK(up.contains({7, 3, 7}));
  CHECK_FALSE(up.contains({3, 0, 4}));
  CHECK_THROWS_AS(upsample(occ, 5), ShapeError);
}

TEST_CASE("mask part count ignores the background label") {
  Eigen::MatrixXi m = Eigen::MatrixXi::Constant(4, 4, 7);
  CHECK(mask_part_count(m, 8) == 0);
  m(0, 0) = 0;
  m(1, 1) = 2;
  CHECK(mask_part_count(m, 8) == 3);
  m(2, 2) = 8;
  CHECK_THROWS_AS(mask_part_count(m, 8), RangeError);
}

TEST_CASE("two-stage pipeline: K parts out, both caches, bypass") {
  const auto obj = make_toy_object(ToyKind::kDoorRight, 0, 8);
  const auto pv = voxelize_object(obj, 8);
  const auto ex = make_flow_example(obj, 8);
  const Denoiser s1(toy_denoiser(1, kStage1Channels, 4), 1);
  const Denoiser s2(toy_denoiser(2, kToyFeatureDim, 8), 2);
  PipelineConfig cfg;
  cfg.stage1 = {4, 1.0, 2, 3};
  cfg.stage2 = {4, 1.0, 3, 4};
  cfg.stage1_resolution = 4;
  cfg.stage2_resolution = 8;
  cfg.threshold = -10.0;  // everything occupied so no part comes back empty

  const int k = mask_part_count(ex.cond.mask, 8);
  const auto res = run_two_stage(ex.cond, s1, s2, cfg);
  CHECK(static_cast<int>(res.voxels.part_count()) == k);
  CHECK(res.stage1_cache.steps() == std::vector<int>{3, 4});
  CHECK(res.stage2_cache.steps() == std::vector<int>{2, 3, 4});
  CHECK(res.cache == res.stage2_cache);
  cfg.feature_source = FeatureSource::kStage1;
  CHECK(run_two_stage(ex.cond, s1, s2, cfg).cache.source() == FeatureSource::kStage1);

  cfg.bypass_stage1 = true;
  cfg.feature_source = FeatureSource::kStage2;
  const auto bypass = run_two_stage(ex.cond, s1, s2, cfg, &pv);
  CHECK(bypass.voxels.total_voxels() == pv.total_voxels());
  CHECK(bypass.stage1_cache.empty());
  cfg.feature_source = FeatureSource::kStage1;
  CHECK_THROWS_AS(run_two_stage(ex.cond, s1, s2, cfg, &pv), ShapeError);
  cfg.feature_source = FeatureSource::kStage2;
  CHECK_THROWS_AS(run_two_stage(ex.cond, s1, s2, cfg), ShapeError);

  cfg.bypass_stage1 = false;
  cfg.threshold = 1e9;  // nothing occupied
  CHECK_THROWS_AS(run_two_stage(ex.cond, s1, s2, cfg), DegenerateError);
}

TEST_CASE("joint training is deterministic and reduces the loss") {
  std::vector<FlowExample> data;
  for (int i = 0; i < 4; ++i) data.push_back(make_flow_example(make_toy_object(ToyKind(i), 0, 8), 8));
  TrainConfig tc;
  tc.steps = 30;
  tc.batch_size = 2;
  tc.learning_rate = 3e-3;
  tc.seed = 9;
  auto run = [&] {
    Denoiser model(toy_denoiser(2, kToyFeatureDim, 8), 1);
    ArticulationHead head({32, 16, 2}, 2);
    return train_joint(model, &head, data, tc);
  };
  const auto a = run(), b = run();
  CHECK(a.total == b.total);
  CHECK(a.articulation == b.articulation);
  REQUIRE(a.total.size() == 30);
  CHECK(a.flow.back() < a.flow.front());
}

TEST_CASE("config validation and JSON round-trips") {
  SamplerConfig s;
  s.steps = 10;
  s.cache_last = 4;
  s.cfg_scale = 2.5;
  s.seed = 99;
  CHECK(SamplerConfig::from_json(s.to_json()).to_json() == s.to_json());
  s.cache_last = 11;
  CHECK_THROWS_AS(s.validate(), RangeError);
  TrainConfig t;
  t.uncond_probability = 0.3;
  CHECK(TrainConfig::from_json(t.to_json()).to_json() == t.to_json());
  PipelineConfig p;
  p.bypass_stage1 = true;
  p.threshold = 0.25;
  CHECK(PipelineConfig::from_json(p.to_json()).to_json() == p.to_json());
}

}  // TEST_SUITE
