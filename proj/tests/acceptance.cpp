// Property-based acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "partflow/artihead.hpp"
#include "partflow/diagnostics.hpp"
#include "partflow/flowgen.hpp"
#include "partflow/interop.hpp"
#include "partflow/kinematics.hpp"
#include "partflow/metrics.hpp"
#include "partflow/netcore.hpp"
#include "partflow/toydata.hpp"
#include "partflow/toytrain.hpp"

using namespace partflow;

namespace {

// Collects failed checks with a short description.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

Eigen::MatrixXd randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> g(0, s);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);  // same draw order as the sampler
  return m;
}

TokenSequence three_part_sequence(int dim, std::mt19937_64& rng) {
  TokenSequence s;
  const int sizes[] = {8, 12, 10};  // L = 30
  s.tokens = randn(30, dim, rng);
  for (int p = 0; p < 3; ++p) {
    for (int i = 0; i < sizes[p]; ++i) {
      s.part_ids.push_back(p);
      s.coords.push_back({i % 4, (i / 4) % 4, p});
    }
  }
  return s;
}

Conditioning random_conditioning(const DenoiserConfig& c, std::mt19937_64& rng) {
  Conditioning cond;
  cond.grid_h = cond.grid_w = 2;
  cond.features = randn(4, c.part_dim, rng, 0.5);
  cond.mask = Eigen::MatrixXi::Constant(4, 4, c.max_parts - 1);
  cond.mask.topLeftCorner(2, 2).setConstant(0);
  cond.mask.bottomRightCorner(2, 2).setConstant(1);
  return cond;
}

// ---------------------------------------------------------------------------

void isolation(Check& c) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    ad::ParameterStore store;
    const auto params = AttentionParams::create(store, "blk", 64, rng);
    const auto seq = three_part_sequence(64, rng);
    const int target = trial % 3;
    const auto spans = part_spans(seq.part_ids);
    auto perturbed = seq;
    perturbed.tokens.middleRows(spans[target].begin, spans[target].count) += randn(spans[target].count, 64, rng, 10.0);
    for (int heads : {1, 4}) {
      const auto a = within_part_attention(seq, params, heads).tokens;
      const auto b = within_part_attention(perturbed, params, heads).tokens;
      for (const auto& s : spans) {
        if (s.part == target) continue;
        c.expect(a.middleRows(s.begin, s.count) == b.middleRows(s.begin, s.count), "within-part layer leaked");
      }
    }
  }

  DenoiserConfig cfg;
  cfg.depth = 4;
  cfg.width = 64;
  cfg.heads = 4;
  const auto seq = three_part_sequence(cfg.token_dim, rng);
  const auto spans = part_spans(seq.part_ids);
  auto perturbed = seq;
  perturbed.tokens.middleRows(spans[1].begin, spans[1].count).array() += 10.0;
  auto sensitivity = [&](bool bypass) {
    auto k = cfg;
    k.bypass_global_layers = bypass;
    const Denoiser model(k, 3);
    const auto cond = random_conditioning(k, rng);
    const auto a = forward_denoiser(model, seq, 0.5, &cond).velocity.tokens;
    const auto b = forward_denoiser(model, perturbed, 0.5, &cond).velocity.tokens;
    return (a.middleRows(spans[0].begin, spans[0].count) - b.middleRows(spans[0].begin, spans[0].count)).norm() +
           (a.middleRows(spans[2].begin, spans[2].count) - b.middleRows(spans[2].begin, spans[2].count)).norm();
  };
  const double with_global = sensitivity(false), without = sensitivity(true);
  c.expect(without == 0.0, "stack without global layers leaked across parts");
  c.expect(with_global > 0.0, "global layers should mix parts");
  c.notes << "cross-part sensitivity " << with_global << " -> " << without;
}

void gradients(Check& c) {
  std::mt19937_64 rng(2);
  double worst_small = 0.0;
  {
    ad::ParameterStore store;
    const auto params = AttentionParams::create(store, "blk", 8, rng);
    const auto cross = CrossAttentionParams::create(store, "x", 8, 4, rng);
    const ad::Var cond = ad::Var::constant(randn(3, 4, rng));
    const auto seq = three_part_sequence(8, rng);
    const auto spans = part_spans(seq.part_ids);
    const ad::Var x = ad::Var::constant(seq.tokens);
    const ad::Var w = ad::Var::constant(randn(30, 8, rng));
    for (auto scope : {AttentionScope::kGlobal, AttentionScope::kWithinPart}) {
      auto loss = [&] { return ad::sum(ad::hadamard(attention_block(x, spans, scope, params, 2, &cross, &cond), w)); };
      worst_small = std::max(worst_small, ad::finite_diff_gradcheck(loss, store.entries()).max_rel_err);
    }
  }
  {
    ad::ParameterStore store;
    const auto norm = LayerNormParams::create(store, "ln", 8);
    const auto in = Linear::create(store, "in", 8, 32, rng);
    const auto out = Linear::create(store, "out", 32, 8, rng);
    const ad::Var x = ad::Var::constant(randn(6, 8, rng));
    const ad::Var w = ad::Var::constant(randn(6, 8, rng));
    auto loss = [&] { return ad::sum(ad::hadamard(ad::add(x, out(ad::silu(in(norm(x))))), w)); };
    worst_small = std::max(worst_small, ad::finite_diff_gradcheck(loss, store.entries()).max_rel_err);
  }
  {
    ArticulationHead head({12, 16, 4}, 3);
    const ad::Var f = ad::Var::constant(randn(5, 6, rng));
    const Eigen::MatrixXd gt = randn(3, JointLayout::kSize, rng);
    // pooled per-part features through the head into the joint loss
    auto loss = [&] {
      std::vector<ad::Var> rows;
      for (int p = 0; p < 3; ++p) rows.push_back(pool_mean_max(ad::slice_rows(f, p, 3)));
      return articulation_loss(head.forward(ad::vstack(rows)), gt);
    };
    worst_small = std::max(worst_small, ad::finite_diff_gradcheck(loss, head.params().entries()).max_rel_err);
  }
  c.expect(worst_small < 1e-4, "block / FFN / head gradient error " + std::to_string(worst_small));

  DenoiserConfig cfg;
  cfg.depth = 2;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.time_dim = 8;
  cfg.part_dim = 8;
  const Denoiser model(cfg, 4);
  TokenSequence seq;
  seq.tokens = randn(7, cfg.token_dim, rng);
  for (int i = 0; i < 7; ++i) {
    seq.part_ids.push_back(i < 3 ? 0 : 1);
    seq.coords.push_back({i, i % 3, 1});
  }
  const auto cond = random_conditioning(cfg, rng);
  const ad::Var x = ad::Var::constant(seq.tokens);
  const ad::Var w = ad::Var::constant(randn(7, cfg.token_dim, rng));
  const ad::Var wf = ad::Var::constant(randn(7, cfg.width, rng, 0.1));
  auto loss = [&] {
    const auto out = model.forward(x, seq.coords, seq.part_ids, 0.3, &cond);
    return ad::sum(ad::hadamard(out.velocity, w)) + ad::sum(ad::hadamard(out.last_block, wf));
  };
  const auto r = ad::finite_diff_gradcheck(loss, model.params().entries());
  c.expect(r.max_rel_err < 1e-3, "denoiser gradient error " + std::to_string(r.max_rel_err) + " at " + r.worst);
  c.notes << "max rel err: parts " << worst_small << ", denoiser " << r.max_rel_err << " over " << r.checked
          << " entries";
}

class ConstantField : public VelocityField {
 public:
  explicit ConstantField(Eigen::MatrixXd v) : v_(std::move(v)) {}
  FieldOutput evaluate(const Eigen::MatrixXd&, double, bool) const override { return {v_, {}}; }

 private:
  Eigen::MatrixXd v_;
};

void flow_identities(Check& c) {
  std::mt19937_64 rng(3);
  const auto x = randn(10, 6, rng), n = randn(10, 6, rng);
  c.expect(fm_pair(x, n, 0.0).x_t == n && fm_pair(x, n, 1.0).x_t == x, "fm_pair endpoints");
  c.expect(fm_pair(x, n, 0.37).v_target == x - n, "fm_pair target");

  TokenLayout layout;
  layout.dim = 3;
  for (int i = 0; i < 5; ++i) {
    layout.coords.push_back({i, 0, 0});
    layout.part_ids.push_back(i < 2 ? 0 : 1);
  }
  Eigen::MatrixXd v(5, 3);
  v << 0.5, -0.25, 1.0, 2.0, 0.125, -1.5, 0.75, 0.0, -0.5, 1.25, 3.0, -2.0, 0.0625, 0.5, -0.875;
  const ConstantField field(v);
  double worst = 0.0;
  for (int steps = 1; steps <= 64; ++steps) {
    SamplerConfig s{steps, 1.0, 1, 17};
    std::mt19937_64 g(17);
    const Eigen::MatrixXd x0 = randn(5, 3, g);
    const auto out = euler_sample(field, layout, s).tokens.tokens;
    const double err = (out - (x0 + v)).cwiseAbs().maxCoeff();
    worst = std::max(worst, err);
    if ((steps & (steps - 1)) == 0) c.expect(err == 0.0, "Euler not bit-exact at " + std::to_string(steps) + " steps");
  }
  c.expect(worst < 1e-12, "Euler error " + std::to_string(worst));

  const auto obj = make_toy_object(ToyKind::kLid, 0, 8);
  const auto ex = make_flow_example(obj, 8);
  DenoiserConfig dc;
  dc.depth = 2;
  dc.width = 16;
  dc.heads = 2;
  dc.grid_resolution = 8;
  const Denoiser model(dc, 5);
  const DenoiserField df(model, ex.data.coords, ex.data.part_ids, ex.cond);
  const TokenLayout tl{ex.data.coords, ex.data.part_ids, dc.token_dim};
  const auto guided = euler_sample(df, tl, {5, 1.0, 5, 9}).tokens.tokens;
  std::mt19937_64 g(9);
  Eigen::MatrixXd xs = randn(static_cast<Eigen::Index>(tl.coords.size()), dc.token_dim, g);
  for (int k = 1; k <= 5; ++k) xs += (1.0 / 5) * df.evaluate(xs, (k - 1) / 5.0, true).velocity;
  c.expect(guided == xs, "cfg_scale = 1 differs from conditional sampling");
  c.notes << "Euler max error over 1..64 steps " << worst;
}

void toy_training(Check& c) {
  ToyTrainConfig cfg;
  cfg.objects = 32;
  cfg.resolution = 8;
  cfg.train.steps = 500;
  cfg.sampler.cache_last = 20;
  const auto a = train_toy(cfg);
  const double reduction = 1.0 - a.final_loss / a.initial_loss;
  c.expect(a.log.total.size() == 500, "step count");
  c.expect(reduction >= 0.5, "flow loss reduction " + std::to_string(reduction));
  c.expect(a.fit.max_axis_error_deg < 10.0, "axis error " + std::to_string(a.fit.max_axis_error_deg));
  c.expect(a.fit.type_accuracy() == 1.0, "type accuracy " + std::to_string(a.fit.type_accuracy()));
  const auto b = train_toy(cfg);
  c.expect(a.log.total == b.log.total && a.final_loss == b.final_loss &&
               a.fit.max_axis_error_deg == b.fit.max_axis_error_deg,
           "training not deterministic");
  c.notes << "L_fm " << a.initial_loss << " -> " << a.final_loss << " (" << 100 * reduction << "% lower), types "
          << a.fit.type_correct << "/" << a.fit.joints << ", max axis error " << a.fit.max_axis_error_deg << " deg";
}

void metric_oracles(Check& c) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n : {1, 16, 100, 333, 512}) {
    std::vector<Vec3> a, b;
    for (int i = 0; i < n; ++i) a.emplace_back(u(rng), u(rng), u(rng));
    for (int i = 0; i < (n + 1) / 2; ++i) b.emplace_back(u(rng), u(rng), u(rng));
    c.expect(chamfer_distance(a, b) == oracle::brute_chamfer(a, b), "chamfer vs brute force at N=" + std::to_string(n));
  }
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const Vec3 lo1(u(rng), u(rng), u(rng)), lo2(u(rng), u(rng), u(rng));
    const Aabb a{lo1, lo1 + Vec3(0.05 + u(rng), 0.05 + u(rng), 0.05 + u(rng))};
    const Aabb b{lo2, lo2 + Vec3(0.05 + u(rng), 0.05 + u(rng), 0.05 + u(rng))};
    worst = std::max(worst, std::abs(giou_distance(a, b) - oracle::monte_carlo_giou_distance(a, b, 1'000'000, rng)));
  }
  c.expect(worst < 1e-2, "gIoU vs Monte-Carlo " + std::to_string(worst));
  const Aabb unit{Vec3::Zero(), Vec3::Ones()};
  c.expect(std::abs(giou_distance(unit, {Vec3(2, 0, 0), Vec3(3, 1, 1)}) - 4.0 / 3.0) < 1e-15, "4/3 example");
  c.expect(std::abs(giou_distance(unit, {Vec3(0.5, 0, 0), Vec3(1.5, 1, 1)}) - 2.0 / 3.0) < 1e-15, "2/3 example");

  ScopedDiagnosticSink quiet([](std::string_view) {});
  for (int t = 0; t < 200; ++t) {
    std::vector<SparseOccupancy> parts;
    std::vector<std::set<std::array<int, 3>>> sets;
    for (int p = 0; p < 2 + t % 4; ++p) {
      std::vector<Coord> cells;
      for (int i = 0; i < 1 + static_cast<int>(rng() % 40); ++i)
        cells.push_back({int(rng() % 5), int(rng() % 5), int(rng() % 5)});
      parts.push_back(SparseOccupancy::from_cells(5, cells));
      sets.emplace_back(parts.back().cells().begin(), parts.back().cells().end());
    }
    c.expect(mean_overlap_ratio(parts) == oracle::brute_overlap_ratio(sets), "AOR vs brute force");
  }
  for (int t = 0; t < 300; ++t) {
    const int k = 1 + t % 5;
    Eigen::MatrixXd cost(k, k);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = 2 * u(rng);
    const auto assign = solve_assignment(cost);
    double total = 0;
    for (int r = 0; r < k; ++r) total += cost(r, assign[r]);
    c.expect(std::abs(total - oracle::exhaustive_assignment_cost(cost)) < 1e-12, "Hungarian vs exhaustive");
  }
  c.notes << "gIoU Monte-Carlo max deviation " << worst;
}

void kinematics(Check& c) {
  using std::numbers::pi;
  JointSpec rz;
  rz.type = JointType::kRevolute;
  rz.axis = Vec3::UnitZ();
  rz.range = {-10, 10};
  c.expect((joint_transform(rz, pi / 2).apply(Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm() < 1e-12, "revolute example");
  JointSpec pz = rz;
  pz.type = JointType::kPrismatic;
  c.expect((joint_transform(pz, 0.3).apply(Vec3::Zero()) - Vec3(0, 0, 0.3)).norm() < 1e-12, "prismatic example");
  JointSpec piv = rz;
  piv.origin = Vec3(1, 0, 0);
  c.expect(joint_transform(piv, pi).apply(Vec3(2, 0, 0)).norm() < 1e-12, "pivot example");

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto obj = fixture::random_object(rng);
    JointState q;
    for (const auto& p : obj.parts) q.values.push_back(p.joint.range.lower + u(rng) * (p.joint.range.upper - p.joint.range.lower));
    const auto posed = pose_object(obj, q);
    for (std::size_t i = 0; i < obj.size(); ++i) {
      const auto& a = obj.parts[i].geometry.vertices;
      const auto& b = posed.parts[i].geometry.vertices;
      for (std::size_t m = 0; m + 1 < a.size(); m += 3) {
        const std::size_t n = (m * 7 + 5) % a.size();
        worst = std::max(worst, std::abs((a[m] - a[n]).norm() - (b[m] - b[n]).norm()));
      }
    }
  }
  c.expect(worst < 1e-9, "rigidity " + std::to_string(worst));

  std::uniform_real_distribution<double> w(-0.5, 1.5);
  for (int t = 0; t < 10; ++t) {
    const Vec3 a(w(rng), w(rng), w(rng)), b(w(rng), w(rng), w(rng));
    const Aabb box{a.cwiseMin(b), a.cwiseMax(b)};
    const Vec3 p = box.center() + Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5).cwiseProduct(box.extent());
    const Vec3 x = project_origin_to_aabb(p, box);
    bool on_face = false;
    for (int k = 0; k < 3; ++k) on_face = on_face || x[k] == box.min[k] || x[k] == box.max[k];
    c.expect(on_face && box.contains(x, 1e-12), "projection not on the surface");
    const Vec3 s = oracle::sampled_surface_nearest(box, p, 1'000'000, rng);
    c.expect((x - p).norm() <= (s - p).norm() + 1e-12, "projection beaten by a surface sample");
  }
  c.notes << "rigidity max deviation " << worst;
}

void protocol_sanity(Check& c) {
  std::mt19937_64 rng(6);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const auto obj = fixture::random_object(rng);
    const auto r = evaluate(obj, obj);
    if (!r.as) {
      c.expect(false, "AS fields missing");
      continue;
    }
    for (double d : {r.rs.giou, r.rs.center, r.rs.chamfer, r.as->giou, r.as->center, r.as->chamfer})
      worst = std::max(worst, d);
  }
  c.expect(worst < 1e-9, "evaluate(x, x) distance " + std::to_string(worst));

  const auto gt = fixture::cabinet();
  auto flipped = gt;
  flipped.parts[1].joint.axis = -flipped.parts[1].joint.axis;
  const auto r = evaluate(flipped, gt);
  c.expect(r.rs.giou == 0.0 && r.rs.center == 0.0 && r.rs.chamfer == 0.0, "flipped axis RS not zero");
  c.expect(r.as && r.as->center > 0.0, "flipped axis AS-d_cDist not positive");
  c.notes << "self distance max " << worst << ", flipped AS-d_cDist " << (r.as ? r.as->center : 0.0);
}

void interop(Check& c) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0, 0.05);
  ScopedDiagnosticSink quiet([](std::string_view) {});

  std::vector<VertexPrediction> preds;
  std::vector<int> types_part1;
  for (int i = 0; i < 40; ++i) {
    VertexPrediction v;
    v.part_id = i % 3;
    v.position = Vec3(0.5 + g(rng), 0.5 + g(rng), 0.5 + g(rng));
    v.parent_id = v.part_id == 0 ? kRoot : (i % 11 == 0 ? 2 : 0);
    if (v.part_id == 2 && v.parent_id == 2) v.parent_id = 0;
    v.joint_type = v.part_id == 0 ? JointType::kFixed : static_cast<JointType>(1 + rng() % 2);
    v.axis = Vec3(g(rng), g(rng), 1.0);
    v.pivot = Vec3(g(rng), g(rng), g(rng));
    v.range = {g(rng), 1 + g(rng)};
    if (v.part_id == 1) types_part1.push_back(static_cast<int>(v.joint_type));
    preds.push_back(v);
  }
  const auto ref = extract_physx_parts(preds);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(preds.begin(), preds.end(), rng);
    c.expect(extract_physx_parts(preds) == ref, "extraction depends on vertex order");
  }
  c.expect(static_cast<int>(ref.parts[1].joint.type) == oracle::histogram_argmax(types_part1), "type vote");
  for (int t = 0; t < 200; ++t) {
    std::vector<int> votes(1 + rng() % 9);
    for (auto& v : votes) v = static_cast<int>(rng() % 3);
    c.expect(majority_vote(votes) == oracle::histogram_argmax(votes), "majority vote vs histogram");
  }

  double worst = 0;
  for (int t = 0; t < 30; ++t) {
    const auto obj = fixture::random_object(rng);
    const auto model = parse_urdf(export_urdf(obj));
    const double fractions[] = {0.0, 0.5, 1.0};
    for (const auto& s : sample_states(obj, fractions)) {
      std::map<std::string, double> q;
      for (std::size_t i = 0; i < obj.size(); ++i) q["joint_" + std::to_string(i)] = s.values[i];
      const auto posed = urdf_link_poses(model, q), rest = urdf_link_poses(model, {});
      const auto fk = forward_kinematics(obj, s);
      for (std::size_t i = 0; i < obj.size(); ++i) {
        const std::string link = "part_" + std::to_string(i);
        const Eigen::Matrix4d rel = posed.at(link).matrix() * rest.at(link).matrix().inverse();
        worst = std::max(worst, (rel - fk[i].matrix()).cwiseAbs().maxCoeff());
      }
    }
  }
  c.expect(worst < 1e-6, "URDF FK deviation " + std::to_string(worst));

  for (int t = 0; t < 20; ++t) {
    const auto obj = fixture::random_object(rng);
    const auto text = dump_canonical(object_to_json(obj), 17);
    c.expect(object_from_json(nlohmann::json::parse(text)) == obj, "JSON round-trip");
  }
  c.notes << "URDF FK max deviation " << worst;
}

void ablation_hooks(Check& c) {
  const auto obj = make_toy_object(ToyKind::kDoorLeft, 2, 8);
  const auto ex = make_flow_example(obj, 8);
  const auto pv = voxelize_object(obj, 8);
  DenoiserConfig d1;
  d1.depth = 2;
  d1.width = 16;
  d1.heads = 2;
  d1.stage = 1;
  d1.token_dim = kStage1Channels;
  d1.grid_resolution = 4;
  DenoiserConfig d2 = d1;
  d2.stage = 2;
  d2.token_dim = kToyFeatureDim;
  d2.grid_resolution = 8;
  const Denoiser s1(d1, 1), s2(d2, 2);
  const int parts = mask_part_count(ex.cond.mask, d1.max_parts);

  std::set<std::set<FeatureCache::Key>> distinct;
  for (int s : {1, 15, 20}) {
    const auto pc = PipelineConfig::from_json(
        {{"stage1", {{"steps", 25}, {"cache_last", s}, {"cfg_scale", 1.0}}},
         {"stage2", {{"steps", 25}, {"cache_last", s}, {"cfg_scale", 1.0}}},
         {"feature_source", "stage2"},
         {"bypass_stage1", true},
         {"stage1_resolution", 8},
         {"stage2_resolution", 8}});
    const auto r = run_two_stage(ex.cond, s1, s2, pc, &pv);
    std::set<FeatureCache::Key> expected;
    for (int k = 25 - s + 1; k <= 25; ++k)
      for (int p = 0; p < parts; ++p) expected.insert({k, p});
    c.expect(r.cache.keys() == expected, "cache keys for S=" + std::to_string(s));
    c.expect(r.cache.source() == FeatureSource::kStage2, "source stage2");
    distinct.insert(r.cache.keys());
  }
  c.expect(distinct.size() == 3, "S settings should give different key sets");

  auto cfg_for = [](const char* source) {
    return PipelineConfig::from_json({{"stage1", {{"steps", 6}, {"cache_last", 2}, {"cfg_scale", 1.0}}},
                                      {"stage2", {{"steps", 5}, {"cache_last", 4}, {"cfg_scale", 1.0}}},
                                      {"feature_source", source},
                                      {"threshold", -100.0},
                                      {"stage1_resolution", 8},
                                      {"stage2_resolution", 8}});
  };
  const auto a = run_two_stage(ex.cond, s1, s2, cfg_for("stage1"));
  const auto b = run_two_stage(ex.cond, s1, s2, cfg_for("stage2"));
  c.expect(a.cache.source() == FeatureSource::kStage1 && b.cache.source() == FeatureSource::kStage2, "source tags");
  c.expect(a.cache.steps() == std::vector<int>{5, 6}, "stage1 cache steps");
  c.expect(b.cache.steps() == std::vector<int>{2, 3, 4, 5}, "stage2 cache steps");
  c.expect(a.cache.keys() != b.cache.keys(), "feature sources should give different key sets");
  c.notes << "S in {1,15,20} -> " << distinct.size() << " key sets; stage1/stage2 caches of " << a.cache.size()
          << " / " << b.cache.size() << " entries";
}

struct Criterion {
  const char* name;
  double limit_s;
  std::function<void(Check&)> fn;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"within-part attention isolation", 1, isolation},
      {"gradient correctness", 30, gradients},
      {"flow identities", 1, flow_identities},
      {"toy training", 600, toy_training},
      {"metric oracles", 60, metric_oracles},
      {"kinematics", 60, kinematics},
      {"protocol sanity", 60, protocol_sanity},
      {"interop", 30, interop},
      {"ablation hooks", 1, ablation_hooks},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.fn(check);
    } catch (const std::exception& e) {
      check.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > cr.limit_s) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "runtime %.2f s over the %.0f s limit", secs, cr.limit_s);
      check.failures.push_back(buf);
    }
    const bool ok = check.failures.empty();
    failed += !ok;
    std::printf("%s  %-34s %8.2f s (limit %4.0f s)  %s\n", ok ? "PASS" : "FAIL", cr.name, secs, cr.limit_s,
                check.notes.str().c_str());
    for (const auto& f : check.failures) std::printf("      - %s\n", f.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
