#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "partflow/errors.hpp"
#include "partflow/kinematics.hpp"

using namespace partflow;
using fixture::box_points;
using fixture::make_part;

namespace {

std::vector<Vec3> sorted(std::vector<Vec3> v) {
  std::sort(v.begin(), v.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  return v;
}

ArticulatedObject door_with_handle() {
  ArticulatedObject obj = fixture::cabinet();
  obj.parts.push_back(make_part(2, Semantic::kOther, JointType::kFixed, 1, box_points({0.7, 0.2, 0.45}, {0.75, 0.25, 0.55}, 2)));
  return obj;
}

}  // namespace

TEST_SUITE("artcore") {

TEST_CASE("valid cabinet has an empty report") {
  const auto r = validate_object(fixture::cabinet());
  CHECK(r.ok());
  CHECK(r.advisories.empty());
}

TEST_CASE("zero axis on a revolute joint is reported") {
  auto obj = fixture::cabinet();
  obj.parts[1].joint.axis = Vec3::Zero();
  const auto r = validate_object(obj);
  CHECK(r.has("zero_axis"));
}

TEST_CASE("non-unit axis and inverted range are reported") {
  auto obj = fixture::cabinet();
  obj.parts[1].joint.axis = Vec3(0, 0, 1.01);
  obj.parts[1].joint.range = {1.0, 0.5};
  const auto r = validate_object(obj);
  CHECK(r.has("non_unit_axis"));
  CHECK(r.has("inverted_range"));
}

TEST_CASE("axis within the 1e-6 tolerance passes") {
  auto obj = fixture::cabinet();
  obj.parts[1].joint.axis = Vec3(0, 0, 1.0 + 5e-7);
  CHECK(validate_object(obj).ok());
}

TEST_CASE("parent cycle 1->2->1 is reported, matching a DFS oracle") {
  auto obj = fixture::cabinet();
  obj.parts.push_back(make_part(2, Semantic::kOther, JointType::kRevolute, 1, box_points({0, 0, 0}, {0.1, 0.1, 0.1}),
                                Vec3::Zero(), Vec3::UnitX(), {0, 1}));
  obj.parts[1].joint.parent = 2;
  const auto r = validate_object(obj);
  CHECK(r.has("cycle"));
  CHECK(oracle::has_cycle({-1, 2, 1}));
  CHECK_THROWS_AS(require_tree(obj), StructuralError);
}

TEST_CASE("cycle detection agrees with DFS on random parent arrays") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 6);
    ArticulatedObject obj;
    std::vector<int> parents;
    for (int i = 0; i < n; ++i) {
      const int p = static_cast<int>(rng() % (n + 1)) - 1;
      parents.push_back(p);
      obj.parts.push_back(make_part(i, i == 0 ? Semantic::kBase : Semantic::kOther, JointType::kFixed, p,
                                    {Vec3::Zero()}));
    }
    CHECK(validate_object(obj).has("cycle") == oracle::has_cycle(parents));
  }
}

TEST_CASE("multiple roots and missing base are reported") {
  auto obj = fixture::cabinet();
  obj.parts[1].joint.parent = kRoot;
  auto r = validate_object(obj);
  CHECK(r.has("multiple_roots"));
  obj = fixture::cabinet();
  obj.parts[0].joint.semantic = Semantic::kOther;
  r = validate_object(obj);
  CHECK(r.has("base_count"));
}

TEST_CASE("fixed joint with a non-zero range is a violation") {
  auto obj = fixture::cabinet();
  obj.parts[0].joint.range = {0, 1};
  CHECK(validate_object(obj).has("fixed_range"));
}

TEST_CASE("collapse merges a fixed handle into its door") {
  const auto obj = door_with_handle();
  CHECK(validate_object(obj).has_advisory("fixed_non_root"));
  const auto c = collapse_fixed_joints(obj);
  REQUIRE(c.size() == 2);
  std::vector<Vec3> expected = obj.parts[1].geometry.vertices;
  expected.insert(expected.end(), obj.parts[2].geometry.vertices.begin(), obj.parts[2].geometry.vertices.end());
  CHECK(c.parts[1].geometry.vertices == expected);
  CHECK(c.parts[1].geometry.bounds == Aabb::of(expected));
  CHECK(c.parts[1].joint == obj.parts[1].joint);
  CHECK_FALSE(validate_object(c).has_advisory("fixed_non_root"));
}

TEST_CASE("chain base <- fixed <- fixed collapses to a single base") {
  ArticulatedObject obj;
  obj.parts.push_back(make_part(0, Semantic::kBase, JointType::kFixed, kRoot, {Vec3(0, 0, 0)}));
  obj.parts.push_back(make_part(1, Semantic::kOther, JointType::kFixed, 0, {Vec3(1, 0, 0)}));
  obj.parts.push_back(make_part(2, Semantic::kOther, JointType::kFixed, 1, {Vec3(2, 0, 0)}));
  const auto c = collapse_fixed_joints(obj);
  REQUIRE(c.size() == 1);
  CHECK(c.parts[0].geometry.vertices.size() == 3);
}

TEST_CASE("collapse leaves objects without fixed non-root joints bit-identical") {
  const auto obj = fixture::cabinet();
  CHECK(collapse_fixed_joints(obj) == obj);
}

TEST_CASE("collapse is idempotent and preserves movable joints and total geometry") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto obj = fixture::random_object(rng);
    // hang fixed parts off random existing parts
    const int extra = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < extra; ++e) {
      const int parent = static_cast<int>(rng() % obj.size());
      obj.parts.push_back(make_part(static_cast<int>(obj.size()), Semantic::kOther, JointType::kFixed, parent,
                                    {Vec3(0.1 * e, 0.2, 0.3)}));
    }
    const auto once = collapse_fixed_joints(obj);
    CHECK(collapse_fixed_joints(once) == once);

    std::vector<JointSpec> before, after;
    for (const auto& p : obj.parts)
      if (p.joint.movable()) before.push_back(p.joint);
    for (const auto& p : once.parts)
      if (p.joint.movable()) after.push_back(p.joint);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(before[i].axis == after[i].axis);
      CHECK(before[i].origin == after[i].origin);
      CHECK(before[i].range == after[i].range);
      CHECK(before[i].type == after[i].type);
    }
    CHECK(sorted(obj.all_vertices()) == sorted(once.all_vertices()));
    CHECK_FALSE(validate_object(once).has_advisory("fixed_non_root"));
  }
}

TEST_CASE("build_depth1 reparents a drawer hanging off a door") {
  auto obj = fixture::cabinet();
  obj.parts.push_back(make_part(2, Semantic::kDrawer, JointType::kPrismatic, 1, box_points({0.3, 0.4, 0.3}, {0.5, 0.5, 0.4}),
                                Vec3::Zero(), Vec3(0, -1, 0), {0, 0.2}));
  const auto d = build_depth1(obj);
  CHECK(d.parts[2].joint.parent == 0);
  CHECK(is_depth1(d));
  CHECK(build_depth1(d) == d);
}

TEST_CASE("three-level chain base <- door <- tray keeps rest-pose FK") {
  auto obj = fixture::cabinet();
  obj.parts.push_back(make_part(2, Semantic::kOther, JointType::kPrismatic, 1, box_points({0.3, 0.26, 0.3}, {0.4, 0.29, 0.4}),
                                Vec3::Zero(), Vec3::UnitX(), {0, 0.1}));
  const auto d = build_depth1(obj);
  CHECK(d.parts[1].joint.parent == 0);
  CHECK(d.parts[2].joint.parent == 0);
  const JointState rest{{0.0, 0.0, 0.0}};
  const auto fk_a = forward_kinematics(obj, rest);
  const auto fk_b = forward_kinematics(d, rest);
  for (std::size_t i = 0; i < obj.size(); ++i) {
    CHECK(fk_a[i].matrix().isApprox(fk_b[i].matrix(), 1e-15));
    CHECK(fk_b[i].matrix().isIdentity(1e-15));
  }
  CHECK(sorted(obj.all_vertices()) == sorted(d.all_vertices()));
}

TEST_CASE("build_depth1 rejects zero or several bases") {
  auto obj = fixture::cabinet();
  obj.parts[0].joint.semantic = Semantic::kOther;
  CHECK_THROWS_AS(build_depth1(obj), SemanticError);
  obj = fixture::cabinet();
  obj.parts[1].joint.semantic = Semantic::kBase;
  CHECK_THROWS_AS(build_depth1(obj), SemanticError);
}

TEST_CASE("semantic parsing maps unknown labels to other and honours aliases") {
  CHECK(parse_semantic("door") == Semantic::kDoor);
  CHECK(parse_semantic("cupboard_door") == Semantic::kOther);
  const nlohmann::json aliases = {{"cupboard_door", "door"}, {"tray", "drawer"}};
  CHECK(parse_semantic("cupboard_door", aliases) == Semantic::kDoor);
  CHECK(parse_semantic("tray", aliases) == Semantic::kDrawer);
}

TEST_CASE("geometry union keeps mesh faces consistent") {
  const auto a = PartGeometry::mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}});
  const auto b = PartGeometry::mesh({Vec3(0, 0, 1), Vec3(1, 0, 1), Vec3(0, 1, 1)}, {{0, 1, 2}});
  const auto u = geometry_union(a, b);
  CHECK(u.kind == GeometryKind::kMesh);
  REQUIRE(u.faces.size() == 2);
  CHECK(u.faces[1] == std::array<int, 3>{3, 4, 5});
  const auto mixed = geometry_union(a, PartGeometry::points({Vec3(2, 2, 2)}));
  CHECK(mixed.kind == GeometryKind::kPoints);
  CHECK(mixed.vertices.size() == 4);
}

}  // TEST_SUITE
