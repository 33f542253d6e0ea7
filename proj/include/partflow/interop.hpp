#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "partflow/artcore.hpp"
#include "partflow/artihead.hpp"
#include "partflow/feature_cache.hpp"
#include "partflow/kinematics.hpp"
#include "partflow/netcore.hpp"

namespace partflow {

// ---- canonical JSON ------------------------------------------------------

inline constexpr int kJsonPrecision = 9;

// Sorted keys, two-space indent, scalar-only arrays on one line, floats with
// `precision` significant digits. Throws InvariantError on non-finite numbers.
std::string dump_canonical(const nlohmann::json& j, int precision = kJsonPrecision);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j, int precision = kJsonPrecision);

// ---- object documents ----------------------------------------------------

inline constexpr int kObjectFormatVersion = 1;

// Unknown keys at object, part, joint and geometry level land in the matching
// `extra` bag and are written back verbatim. `aliases` maps free-form semantic
// labels onto the canonical ones; unrecognized labels load as "other" and keep
// their original spelling for saving.
ArticulatedObject object_from_json(const nlohmann::json& j, const nlohmann::json& aliases = nullptr);
nlohmann::json object_to_json(const ArticulatedObject& obj);

ArticulatedObject load_object(const std::filesystem::path& path, const nlohmann::json& aliases = nullptr);
void save_object(const std::filesystem::path& path, const ArticulatedObject& obj, int precision = kJsonPrecision);

// ---- per-vertex kinematic predictions -------------------------------------

struct VertexPrediction {
  Vec3 position = Vec3::Zero();
  int part_id = 0;
  int parent_id = kRoot;
  JointType joint_type = JointType::kFixed;
  Vec3 axis = Vec3::UnitZ();
  Vec3 pivot = Vec3::Zero();
  JointRange range;
};

std::vector<VertexPrediction> vertex_predictions_from_json(const nlohmann::json& j);
nlohmann::json vertex_predictions_to_json(std::span<const VertexPrediction> preds);

// Majority vote with ties resolved towards the smallest value. `tied` is set
// when more than one value shares the top count.
int majority_vote(std::span<const int> votes, bool* tied = nullptr);

// Groups vertices by part id into parts. Parent and joint type are per-part
// majority votes, axis / pivot / range are means (axis re-normalized). Parents
// refer to part ids; the root part is labelled base. The result is collapsed
// and made depth-1 when the tree allows it.
ArticulatedObject extract_physx_parts(std::span<const VertexPrediction> preds);

// ---- URDF ----------------------------------------------------------------

// Depth-1 objects only. Links are `part_<index>`, joints `joint_<index>`; each
// movable link frame sits at its joint origin, geometry is an AABB box.
std::string export_urdf(const ArticulatedObject& obj, const std::string& robot_name = "object");

struct UrdfJoint {
  std::string name;
  std::string type;
  std::string parent;
  std::string child;
  Vec3 xyz = Vec3::Zero();
  Vec3 rpy = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double lower = 0.0;
  double upper = 0.0;
};

struct UrdfModel {
  std::string name;
  std::vector<std::string> links;
  std::vector<UrdfJoint> joints;
};

UrdfModel parse_urdf(const std::string& text);

// World transform of every link for the given joint values (missing joints are
// at zero), composing origin and joint motion from the root link outwards.
std::map<std::string, RigidTransform> urdf_link_poses(const UrdfModel& model,
                                                      const std::map<std::string, double>& q);

// ---- checkpoints and caches -----------------------------------------------

// Stage-2 denoiser, plus an optional Stage-1 denoiser and articulation head.
struct Checkpoint {
  DenoiserConfig denoiser;
  nlohmann::json denoiser_params;
  std::optional<DenoiserConfig> stage1;
  nlohmann::json stage1_params;
  std::optional<HeadConfig> head;
  nlohmann::json head_params;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Denoiser& model, const ArticulationHead* head,
                                  const nlohmann::json& extra = nlohmann::json::object(),
                                  const Denoiser* stage1 = nullptr);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
// Checkpoints keep full double precision.
void save_checkpoint(const std::filesystem::path& path, const Denoiser& model, const ArticulationHead* head,
                     const nlohmann::json& extra = nlohmann::json::object(), const Denoiser* stage1 = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the models stored in a checkpoint.
Denoiser make_denoiser(const DenoiserConfig& cfg, const nlohmann::json& params);
ArticulationHead make_head(const HeadConfig& cfg, const nlohmann::json& params);

// {"mask": [[int]], "features": [[f]], "grid": [h, w]}; features are
// (h·w) × d_p, row index a·w + b.
nlohmann::json conditioning_to_json(const Conditioning& cond);
Conditioning conditioning_from_json(const nlohmann::json& j);

// Cache file: {"cache": FeatureCache, "boxes": [[min xyz, max xyz], ...]}.
struct CacheFile {
  FeatureCache cache;
  std::vector<Aabb> boxes;
};

nlohmann::json cache_file_to_json(const CacheFile& file);
CacheFile cache_file_from_json(const nlohmann::json& j);

nlohmann::json joint_to_json(const JointSpec& joint);

}  // namespace partflow
