#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "partflow/errors.hpp"
#include "partflow/interop.hpp"

namespace partflow {
namespace {

using nlohmann::json;

std::string format_number(const json& j, int precision) {
  if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
  if (j.is_number_unsigned()) return std::to_string(j.get<std::uint64_t>());
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw InvariantError("cannot write a non-finite number to JSON");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

bool scalar_array(const json& j) {
  for (const auto& e : j) {
    if (e.is_structured()) return false;
  }
  return true;
}

void emit(std::ostringstream& os, const json& j, int precision, int indent, bool inline_mode) {
  const std::string pad(indent, ' ');
  const std::string inner(indent + 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map keeps keys sorted
        if (!first) os << ",\n";
        first = false;
        os << inner << json(it.key()).dump() << ": ";
        emit(os, it.value(), precision, indent + 2, false);
      }
      os << '\n' << pad << '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      if (inline_mode || scalar_array(j)) {
        os << '[';
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) os << ", ";
          emit(os, j[i], precision, indent, true);
        }
        os << ']';
        return;
      }
      os << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ",\n";
        os << inner;
        emit(os, j[i], precision, indent + 2, false);
      }
      os << '\n' << pad << ']';
      return;
    }
    case json::value_t::number_float:
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
      os << format_number(j, precision);
      return;
    default:
      os << j.dump();
  }
}

// ---- schema helpers ----

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw SchemaError(path, what); }

const json& require(const json& obj, const std::string& key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(path + "." + key, "missing required field");
  return *it;
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "number must be finite");
  return v;
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) fail(path, "expected an integer");
  return j.get<int>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Vec3 as_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) fail(path, "expected an array of 3 numbers");
  Vec3 v;
  for (int k = 0; k < 3; ++k) v[k] = as_number(j[k], path + "[" + std::to_string(k) + "]");
  return v;
}

JointRange as_range(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected an array of 2 numbers");
  return {as_number(j[0], path + "[0]"), as_number(j[1], path + "[1]")};
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

json collect_extra(const json& obj, const std::set<std::string>& known) {
  json extra = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) extra[it.key()] = it.value();
  }
  return extra;
}

void merge_extra(json& out, const json& extra) {
  if (!extra.is_object()) return;
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (!out.contains(it.key())) out[it.key()] = it.value();
  }
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

PartGeometry geometry_from_json(const json& j, const std::string& path) {
  require_object(j, path);
  const std::string type = as_string(require(j, "type", path), path + ".type");
  std::vector<Vec3> verts;
  const auto& jv = require(j, "vertices", path);
  if (!jv.is_array()) fail(path + ".vertices", "expected an array");
  for (std::size_t i = 0; i < jv.size(); ++i) verts.push_back(as_vec3(jv[i], path + ".vertices[" + std::to_string(i) + "]"));

  PartGeometry g;
  if (type == "points") {
    g = PartGeometry::points(std::move(verts));
    g.extra = collect_extra(j, {"type", "vertices"});
  } else if (type == "mesh") {
    std::vector<std::array<int, 3>> faces;
    const auto& jf = require(j, "faces", path);
    if (!jf.is_array()) fail(path + ".faces", "expected an array");
    for (std::size_t i = 0; i < jf.size(); ++i) {
      const std::string fp = path + ".faces[" + std::to_string(i) + "]";
      if (!jf[i].is_array() || jf[i].size() != 3) fail(fp, "expected an array of 3 indices");
      std::array<int, 3> f{};
      for (int k = 0; k < 3; ++k) {
        f[k] = as_int(jf[i][k], fp + "[" + std::to_string(k) + "]");
        if (f[k] < 0 || f[k] >= static_cast<int>(verts.size())) fail(fp, "face index out of range");
      }
      faces.push_back(f);
    }
    g = PartGeometry::mesh(std::move(verts), std::move(faces));
    g.extra = collect_extra(j, {"type", "vertices", "faces"});
  } else if (type == "voxels") {
    const double size = as_number(require(j, "voxel_size", path), path + ".voxel_size");
    if (size <= 0.0) fail(path + ".voxel_size", "must be positive");
    g = PartGeometry::voxels(std::move(verts), size);
    g.extra = collect_extra(j, {"type", "vertices", "voxel_size"});
  } else {
    fail(path + ".type", "unknown geometry type '" + type + "'");
  }
  return g;
}

json geometry_to_json(const PartGeometry& g) {
  json j;
  json verts = json::array();
  for (const auto& v : g.vertices) verts.push_back(vec3_json(v));
  j["vertices"] = std::move(verts);
  switch (g.kind) {
    case GeometryKind::kPoints: j["type"] = "points"; break;
    case GeometryKind::kMesh: {
      j["type"] = "mesh";
      json faces = json::array();
      for (const auto& f : g.faces) faces.push_back({f[0], f[1], f[2]});
      j["faces"] = std::move(faces);
      break;
    }
    case GeometryKind::kVoxels:
      j["type"] = "voxels";
      j["voxel_size"] = g.voxel_size;
      break;
  }
  merge_extra(j, g.extra);
  return j;
}

const std::set<std::string> kJointKeys = {"type", "axis", "origin", "range", "parent"};

}  // namespace

std::string dump_canonical(const nlohmann::json& j, int precision) {
  std::ostringstream os;
  emit(os, j, precision, 0, false);
  os << '\n';
  return os.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j, int precision) {
  write_text_atomic(path, dump_canonical(j, precision));
}

nlohmann::json joint_to_json(const JointSpec& joint) {
  return {{"type", std::string(to_string(joint.type))},
          {"axis", vec3_json(joint.axis)},
          {"origin", vec3_json(joint.origin)},
          {"range", {joint.range.lower, joint.range.upper}},
          {"parent", joint.parent}};
}

ArticulatedObject object_from_json(const nlohmann::json& j, const nlohmann::json& aliases) {
  require_object(j, "$");
  const int version = as_int(require(j, "version", "$"), "version");
  if (version != kObjectFormatVersion) fail("version", "unsupported version " + std::to_string(version));
  const auto& jp = require(j, "parts", "$");
  if (!jp.is_array()) fail("parts", "expected an array");

  ArticulatedObject obj;
  obj.extra = collect_extra(j, {"version", "parts"});
  for (std::size_t i = 0; i < jp.size(); ++i) {
    const std::string path = "parts[" + std::to_string(i) + "]";
    const auto& p = jp[i];
    require_object(p, path);
    Part part;
    part.id = as_int(require(p, "id", path), path + ".id");
    const std::string label = as_string(require(p, "semantic", path), path + ".semantic");
    part.geometry = geometry_from_json(require(p, "geometry", path), path + ".geometry");
    part.extra = collect_extra(p, {"id", "semantic", "geometry", "joint"});

    const std::string jpath = path + ".joint";
    const auto& jj = require(p, "joint", path);
    require_object(jj, jpath);
    JointSpec& joint = part.joint;
    const std::string type = as_string(require(jj, "type", jpath), jpath + ".type");
    const auto parsed = parse_joint_type(type);
    if (!parsed) fail(jpath + ".type", "unknown joint type '" + type + "'");
    joint.type = *parsed;
    joint.semantic = parse_semantic(label, aliases);
    if (joint.semantic == Semantic::kOther && label != "other") part.extra["semantic"] = label;
    if (joint.movable()) {
      joint.axis = as_vec3(require(jj, "axis", jpath), jpath + ".axis");
      joint.origin = as_vec3(require(jj, "origin", jpath), jpath + ".origin");
      joint.range = as_range(require(jj, "range", jpath), jpath + ".range");
    } else {
      if (jj.contains("axis")) joint.axis = as_vec3(jj["axis"], jpath + ".axis");
      if (jj.contains("origin")) joint.origin = as_vec3(jj["origin"], jpath + ".origin");
      if (jj.contains("range")) joint.range = as_range(jj["range"], jpath + ".range");
    }
    joint.parent = as_int(require(jj, "parent", jpath), jpath + ".parent");
    if (joint.parent < kRoot) fail(jpath + ".parent", "must be -1 or a part index");
    const json joint_extra = collect_extra(jj, kJointKeys);
    if (!joint_extra.empty()) part.extra["joint"] = joint_extra;
    obj.parts.push_back(std::move(part));
  }
  return obj;
}

nlohmann::json object_to_json(const ArticulatedObject& obj) {
  json parts = json::array();
  for (const auto& part : obj.parts) {
    json p;
    p["id"] = part.id;
    json extra = part.extra;
    std::string label(to_string(part.joint.semantic));
    if (part.joint.semantic == Semantic::kOther && extra.contains("semantic") && extra["semantic"].is_string()) {
      label = extra["semantic"].get<std::string>();
    }
    extra.erase("semantic");
    p["semantic"] = label;
    p["geometry"] = geometry_to_json(part.geometry);
    json joint = joint_to_json(part.joint);
    if (extra.contains("joint")) {
      merge_extra(joint, extra["joint"]);
      extra.erase("joint");
    }
    p["joint"] = std::move(joint);
    merge_extra(p, extra);
    parts.push_back(std::move(p));
  }
  json j{{"version", kObjectFormatVersion}, {"parts", std::move(parts)}};
  merge_extra(j, obj.extra);
  return j;
}

ArticulatedObject load_object(const std::filesystem::path& path, const nlohmann::json& aliases) {
  return object_from_json(read_json_file(path), aliases);
}

void save_object(const std::filesystem::path& path, const ArticulatedObject& obj, int precision) {
  write_json_file(path, object_to_json(obj), precision);
}

std::vector<VertexPrediction> vertex_predictions_from_json(const nlohmann::json& j) {
  const json* arr = &j;
  std::string base = "$";
  if (j.is_object()) {
    arr = &require(j, "vertices", "$");
    base = "vertices";
  }
  if (!arr->is_array()) fail(base, "expected an array");
  if (arr->empty()) fail(base, "no vertex predictions");
  std::vector<VertexPrediction> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const std::string path = base + "[" + std::to_string(i) + "]";
    const auto& e = (*arr)[i];
    require_object(e, path);
    VertexPrediction v;
    v.position = as_vec3(require(e, "position", path), path + ".position");
    v.part_id = as_int(require(e, "part_id", path), path + ".part_id");
    if (v.part_id < 0) fail(path + ".part_id", "must be non-negative");
    v.parent_id = as_int(require(e, "parent_id", path), path + ".parent_id");
    const std::string type = as_string(require(e, "joint_type", path), path + ".joint_type");
    const auto parsed = parse_joint_type(type);
    if (!parsed) fail(path + ".joint_type", "unknown joint type '" + type + "'");
    v.joint_type = *parsed;
    v.axis = as_vec3(require(e, "axis", path), path + ".axis");
    v.pivot = as_vec3(require(e, "pivot", path), path + ".pivot");
    v.range = as_range(require(e, "range", path), path + ".range");
    out.push_back(v);
  }
  return out;
}

nlohmann::json vertex_predictions_to_json(std::span<const VertexPrediction> preds) {
  json arr = json::array();
  for (const auto& v : preds) {
    arr.push_back({{"position", vec3_json(v.position)},
                   {"part_id", v.part_id},
                   {"parent_id", v.parent_id},
                   {"joint_type", std::string(to_string(v.joint_type))},
                   {"axis", vec3_json(v.axis)},
                   {"pivot", vec3_json(v.pivot)},
                   {"range", {v.range.lower, v.range.upper}}});
  }
  return {{"vertices", std::move(arr)}};
}

nlohmann::json checkpoint_to_json(const Denoiser& model, const ArticulationHead* head, const nlohmann::json& extra,
                                  const Denoiser* stage1) {
  json j{{"format", "partflow-checkpoint"},
         {"version", 1},
         {"denoiser", {{"config", model.config().to_json()}, {"params", params_to_json(model.params())}}}};
  if (stage1) j["stage1"] = {{"config", stage1->config().to_json()}, {"params", params_to_json(stage1->params())}};
  if (head) j["head"] = {{"config", head->config().to_json()}, {"params", params_to_json(head->params())}};
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  require_object(j, "$");
  if (j.value("format", "") != "partflow-checkpoint") fail("format", "not a checkpoint");
  Checkpoint ck;
  const auto& d = require(j, "denoiser", "$");
  ck.denoiser = DenoiserConfig::from_json(require(d, "config", "denoiser"));
  ck.denoiser_params = require(d, "params", "denoiser");
  if (j.contains("stage1")) {
    ck.stage1 = DenoiserConfig::from_json(require(j["stage1"], "config", "stage1"));
    ck.stage1_params = require(j["stage1"], "params", "stage1");
  }
  if (j.contains("head")) {
    ck.head = HeadConfig::from_json(require(j["head"], "config", "head"));
    ck.head_params = require(j["head"], "params", "head");
  }
  if (j.contains("extra")) ck.extra = j["extra"];
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model, const ArticulationHead* head,
                     const nlohmann::json& extra, const Denoiser* stage1) {
  write_json_file(path, checkpoint_to_json(model, head, extra, stage1), 17);
}

Denoiser make_denoiser(const DenoiserConfig& cfg, const nlohmann::json& params) {
  Denoiser model(cfg);
  params_from_json(model.params(), params);
  return model;
}

ArticulationHead make_head(const HeadConfig& cfg, const nlohmann::json& params) {
  ArticulationHead head(cfg);
  params_from_json(head.params(), params);
  return head;
}

nlohmann::json conditioning_to_json(const Conditioning& cond) {
  json mask = json::array();
  for (Eigen::Index r = 0; r < cond.mask.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < cond.mask.cols(); ++c) row.push_back(cond.mask(r, c));
    mask.push_back(std::move(row));
  }
  json features = json::array();
  for (Eigen::Index r = 0; r < cond.features.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < cond.features.cols(); ++c) row.push_back(cond.features(r, c));
    features.push_back(std::move(row));
  }
  return {{"mask", std::move(mask)}, {"features", std::move(features)}, {"grid", {cond.grid_h, cond.grid_w}}};
}

Conditioning conditioning_from_json(const nlohmann::json& j) {
  require_object(j, "$");
  Conditioning cond;
  const auto& grid = require(j, "grid", "$");
  if (!grid.is_array() || grid.size() != 2) fail("grid", "expected [h, w]");
  cond.grid_h = as_int(grid[0], "grid[0]");
  cond.grid_w = as_int(grid[1], "grid[1]");
  if (cond.grid_h < 1 || cond.grid_w < 1) fail("grid", "must be positive");

  const auto& mask = require(j, "mask", "$");
  if (!mask.is_array() || mask.empty() || !mask[0].is_array() || mask[0].empty()) fail("mask", "expected a 2-d array");
  cond.mask.resize(static_cast<Eigen::Index>(mask.size()), static_cast<Eigen::Index>(mask[0].size()));
  for (std::size_t r = 0; r < mask.size(); ++r) {
    const std::string path = "mask[" + std::to_string(r) + "]";
    if (!mask[r].is_array() || mask[r].size() != mask[0].size()) fail(path, "ragged mask row");
    for (std::size_t c = 0; c < mask[r].size(); ++c) {
      cond.mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          as_int(mask[r][c], path + "[" + std::to_string(c) + "]");
    }
  }

  const auto& features = require(j, "features", "$");
  const auto rows = static_cast<std::size_t>(cond.grid_h) * static_cast<std::size_t>(cond.grid_w);
  if (!features.is_array() || features.size() != rows) fail("features", "expected grid h*w rows");
  const std::size_t cols = features[0].is_array() ? features[0].size() : 0;
  if (cols == 0) fail("features[0]", "expected a non-empty row");
  cond.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string path = "features[" + std::to_string(r) + "]";
    if (!features[r].is_array() || features[r].size() != cols) fail(path, "ragged feature row");
    for (std::size_t c = 0; c < cols; ++c) {
      cond.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          as_number(features[r][c], path + "[" + std::to_string(c) + "]");
    }
  }
  return cond;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

nlohmann::json cache_file_to_json(const CacheFile& file) {
  json boxes = json::array();
  for (const auto& b : file.boxes) boxes.push_back({vec3_json(b.min), vec3_json(b.max)});
  return {{"cache", file.cache.to_json()}, {"boxes", std::move(boxes)}};
}

CacheFile cache_file_from_json(const nlohmann::json& j) {
  require_object(j, "$");
  CacheFile file;
  file.cache = FeatureCache::from_json(require(j, "cache", "$"));
  const auto& jb = require(j, "boxes", "$");
  if (!jb.is_array()) fail("boxes", "expected an array");
  for (std::size_t i = 0; i < jb.size(); ++i) {
    const std::string path = "boxes[" + std::to_string(i) + "]";
    if (!jb[i].is_array() || jb[i].size() != 2) fail(path, "expected [min, max]");
    Aabb b{as_vec3(jb[i][0], path + "[0]"), as_vec3(jb[i][1], path + "[1]")};
    if (!b.valid()) fail(path, "min exceeds max");
    file.boxes.push_back(b);
  }
  return file;
}

}  // namespace partflow
