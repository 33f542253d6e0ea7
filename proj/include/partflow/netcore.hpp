#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "partflow/autodiff.hpp"
#include "partflow/sparsegrid.hpp"

namespace partflow {

struct Linear {
  ad::Var weight;  // in × out
  ad::Var bias;    // 1 × out, undefined when the layer has no bias

  ad::Var operator()(const ad::Var& x) const;
  static Linear create(ad::ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
                       bool with_bias = true);
};

struct LayerNormParams {
  ad::Var gamma;
  ad::Var beta;

  ad::Var operator()(const ad::Var& x) const { return ad::layer_norm(x, gamma, beta); }
  static LayerNormParams create(ad::ParameterStore& store, const std::string& name, int dim);
};

// Learnable per-part-index rows, T × d_p.
struct PartEmbeddingTable {
  ad::Var table;

  int max_parts() const { return static_cast<int>(table.rows()); }
  int dim() const { return static_cast<int>(table.cols()); }
  static PartEmbeddingTable create(ad::ParameterStore& store, const std::string& name, int max_parts, int dim,
                                   std::mt19937_64& rng);
  static PartEmbeddingTable constant(Eigen::MatrixXd rows) { return {ad::Var::constant(std::move(rows))}; }
};

// Pre-norm self-attention block followed by a residual FFN (hidden 4D).
struct AttentionParams {
  LayerNormParams norm;
  ad::Var wq, wk, wv, wo;  // D × D
  LayerNormParams ffn_norm;
  Linear ffn_in;   // D × 4D
  Linear ffn_out;  // 4D × D

  int dim() const { return static_cast<int>(wq.rows()); }
  static AttentionParams create(ad::ParameterStore& store, const std::string& prefix, int dim, std::mt19937_64& rng);
};

struct CrossAttentionParams {
  LayerNormParams norm;
  ad::Var wq;      // D × D
  ad::Var wk, wv;  // cond_dim × D
  ad::Var wo;      // D × D

  static CrossAttentionParams create(ad::ParameterStore& store, const std::string& prefix, int dim, int cond_dim,
                                     std::mt19937_64& rng);
};

// softmax(Q Kᵀ / sqrt(d)) V with d = Q.cols().
ad::Var attention(const ad::Var& q, const ad::Var& k, const ad::Var& v);
Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v);
ad::Var multi_head_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, int heads);

enum class AttentionScope { kGlobal, kWithinPart };

// x + Attn(LN(x)) restricted to `scope`, then x + FFN(LN(x)). When `cross`
// is given, a cross-attention step onto `cond_tokens` runs between the two.
ad::Var attention_block(const ad::Var& x, std::span<const PartSpan> spans, AttentionScope scope,
                        const AttentionParams& params, int heads, const CrossAttentionParams* cross = nullptr,
                        const ad::Var* cond_tokens = nullptr);

TokenSequence attention_block(const TokenSequence& seq, const AttentionParams& params, AttentionScope scope,
                              int heads = 1);
TokenSequence within_part_attention(const TokenSequence& seq, const AttentionParams& params, int heads = 1);

enum class IdentityMode {
  kConcat,  // Stage 1: [z ‖ E[i]], dim grows by d_p
  kAdd,     // Stage 2: z + E'[i], dim unchanged
};

ad::Var attach_part_identity(const ad::Var& tokens, std::span<const int> part_ids, const PartEmbeddingTable& table,
                             IdentityMode mode);
TokenSequence attach_part_identity(const TokenSequence& seq, const PartEmbeddingTable& table, IdentityMode mode);

// Row (a * out_w + b) holds the mean of E[mask(u, v)] over the pixels of cell
// (a, b); cells use floor bin edges.
ad::Var build_mask_embedding_map(const Eigen::MatrixXi& mask, const PartEmbeddingTable& table, int out_h, int out_w);

// Conditioning image: a flattened feature map (out_h·out_w × d_p) plus the part mask.
struct Conditioning {
  Eigen::MatrixXd features;
  Eigen::MatrixXi mask;
  int grid_h = 4;
  int grid_w = 4;
};

enum class AttentionSchedule {
  kInterleaved,  // even layers global, odd layers within-part
  kAllGlobal,
};

struct DenoiserConfig {
  int depth = 4;
  int width = 64;
  int heads = 4;
  int token_dim = 12;        // channels of the denoised state
  int part_dim = 16;         // d_p, also the conditioning width
  int max_parts = 8;         // T
  int pe_dim = 12;           // positional-encoding width fed to the input projection
  int grid_resolution = 16;  // R used for positional encodings
  int time_dim = 32;
  int stage = 2;             // 1: concat part identity, 2: additive part embedding
  AttentionSchedule schedule = AttentionSchedule::kInterleaved;
  bool bypass_global_layers = false;  // ablation: skip every even (global) layer

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

class Denoiser {
 public:
  struct Output {
    ad::Var velocity;    // L × token_dim
    ad::Var last_block;  // L × width, features of the last transformer block
  };

  explicit Denoiser(DenoiserConfig cfg, std::uint64_t seed = 0);

  // `cond == nullptr` selects the learned null conditioning (unconditional branch).
  Output forward(const ad::Var& x_t, std::span<const Coord> coords, std::span<const int> part_ids, double t,
                 const Conditioning* cond) const;

  ad::Var condition_tokens(const Conditioning& cond) const;
  const PartEmbeddingTable& mask_table() const { return mask_table_; }

  const DenoiserConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  void zero_weights();

 private:
  struct Block {
    AttentionParams self;
    CrossAttentionParams cross;
  };

  DenoiserConfig cfg_;
  ad::ParameterStore params_;
  PartEmbeddingTable mask_table_;  // T × d_p, shared with the Stage-1 identity concat
  PartEmbeddingTable part_table_;  // T × token_dim, Stage-2 additive embedding
  Linear in_proj_, pos_proj_, time_in_, time_out_, out_proj_;
  LayerNormParams out_norm_;
  ad::Var null_cond_;
  std::vector<Block> blocks_;
};

struct DenoiserOutput {
  TokenSequence velocity;
  Eigen::MatrixXd last_block;
};

DenoiserOutput forward_denoiser(const Denoiser& model, const TokenSequence& seq, double t, const Conditioning* cond);

Eigen::VectorXd timestep_embedding(double t, int dim);

// Checkpoint payload: {"config": {...}, "params": [{"name", "rows", "cols", "data"}, ...]}
// in registration order.
nlohmann::json params_to_json(const ad::ParameterStore& store);
void params_from_json(ad::ParameterStore& store, const nlohmann::json& j);

}  // namespace partflow
