#include "partflow/netcore.hpp"

#include <cmath>

#include "partflow/errors.hpp"

namespace partflow {
namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = normal(rng);
  }
  return m;
}

ad::Var projection(ad::ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
  return store.add(name, random_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

}  // namespace

ad::Var Linear::operator()(const ad::Var& x) const {
  ad::Var y = ad::matmul(x, weight);
  return bias.defined() ? ad::add_row(y, bias) : y;
}

Linear Linear::create(ad::ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
                      bool with_bias) {
  Linear l;
  l.weight = projection(store, name + ".weight", in, out, rng);
  if (with_bias) l.bias = store.add(name + ".bias", Eigen::MatrixXd::Zero(1, out));
  return l;
}

LayerNormParams LayerNormParams::create(ad::ParameterStore& store, const std::string& name, int dim) {
  return {store.add(name + ".gamma", Eigen::MatrixXd::Ones(1, dim)),
          store.add(name + ".beta", Eigen::MatrixXd::Zero(1, dim))};
}

PartEmbeddingTable PartEmbeddingTable::create(ad::ParameterStore& store, const std::string& name, int max_parts,
                                              int dim, std::mt19937_64& rng) {
  return {store.add(name, random_matrix(max_parts, dim, 0.5, rng))};
}

AttentionParams AttentionParams::create(ad::ParameterStore& store, const std::string& prefix, int dim,
                                        std::mt19937_64& rng) {
  AttentionParams p;
  p.norm = LayerNormParams::create(store, prefix + ".norm", dim);
  p.wq = projection(store, prefix + ".wq", dim, dim, rng);
  p.wk = projection(store, prefix + ".wk", dim, dim, rng);
  p.wv = projection(store, prefix + ".wv", dim, dim, rng);
  p.wo = projection(store, prefix + ".wo", dim, dim, rng);
  p.ffn_norm = LayerNormParams::create(store, prefix + ".ffn_norm", dim);
  p.ffn_in = Linear::create(store, prefix + ".ffn_in", dim, 4 * dim, rng);
  p.ffn_out = Linear::create(store, prefix + ".ffn_out", 4 * dim, dim, rng);
  return p;
}

CrossAttentionParams CrossAttentionParams::create(ad::ParameterStore& store, const std::string& prefix, int dim,
                                                  int cond_dim, std::mt19937_64& rng) {
  CrossAttentionParams p;
  p.norm = LayerNormParams::create(store, prefix + ".norm", dim);
  p.wq = projection(store, prefix + ".wq", dim, dim, rng);
  p.wk = projection(store, prefix + ".wk", cond_dim, dim, rng);
  p.wv = projection(store, prefix + ".wv", cond_dim, dim, rng);
  p.wo = projection(store, prefix + ".wo", dim, dim, rng);
  return p;
}

ad::Var attention(const ad::Var& q, const ad::Var& k, const ad::Var& v) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query and key widths differ");
  if (k.rows() != v.rows()) throw ShapeError("attention: key and value counts differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul_transposed(q, k), inv_sqrt_d));
  return ad::matmul(weights, v);
}

Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v) {
  ad::NoGradGuard guard;
  return attention(ad::Var::constant(q), ad::Var::constant(k), ad::Var::constant(v)).value();
}

ad::Var multi_head_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, int heads) {
  if (heads <= 1) return attention(q, k, v);
  if (q.cols() % heads != 0 || v.cols() % heads != 0) throw ShapeError("width not divisible by head count");
  const Eigen::Index hq = q.cols() / heads;
  const Eigen::Index hv = v.cols() / heads;
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    outs.push_back(attention(ad::slice_cols(q, h * hq, hq), ad::slice_cols(k, h * hq, hq), ad::slice_cols(v, h * hv, hv)));
  }
  return ad::hstack(outs);
}

ad::Var attention_block(const ad::Var& x, std::span<const PartSpan> spans, AttentionScope scope,
                        const AttentionParams& params, int heads, const CrossAttentionParams* cross,
                        const ad::Var* cond_tokens) {
  const ad::Var normed = params.norm(x);
  const ad::Var q = ad::matmul(normed, params.wq);
  const ad::Var k = ad::matmul(normed, params.wk);
  const ad::Var v = ad::matmul(normed, params.wv);
  ad::Var attended;
  if (scope == AttentionScope::kGlobal || spans.size() <= 1) {
    attended = multi_head_attention(q, k, v, heads);
  } else {
    // Each part attends only to itself; no row of another part enters its softmax.
    std::vector<ad::Var> per_part;
    per_part.reserve(spans.size());
    for (const auto& s : spans) {
      per_part.push_back(multi_head_attention(ad::slice_rows(q, s.begin, s.count), ad::slice_rows(k, s.begin, s.count),
                                              ad::slice_rows(v, s.begin, s.count), heads));
    }
    attended = ad::vstack(per_part);
  }
  ad::Var h = ad::add(x, ad::matmul(attended, params.wo));

  if (cross != nullptr && cond_tokens != nullptr) {
    const ad::Var cn = cross->norm(h);
    const ad::Var cq = ad::matmul(cn, cross->wq);
    const ad::Var ck = ad::matmul(*cond_tokens, cross->wk);
    const ad::Var cv = ad::matmul(*cond_tokens, cross->wv);
    h = ad::add(h, ad::matmul(multi_head_attention(cq, ck, cv, heads), cross->wo));
  }

  const ad::Var ffn = params.ffn_out(ad::silu(params.ffn_in(params.ffn_norm(h))));
  return ad::add(h, ffn);
}

TokenSequence attention_block(const TokenSequence& seq, const AttentionParams& params, AttentionScope scope,
                              int heads) {
  if (seq.dim() != params.dim()) throw ShapeError("token width does not match attention parameters");
  const auto spans = part_spans(seq.part_ids);
  ad::NoGradGuard guard;
  TokenSequence out = seq;
  out.tokens = attention_block(ad::Var::constant(seq.tokens), spans, scope, params, heads).value();
  return out;
}

TokenSequence within_part_attention(const TokenSequence& seq, const AttentionParams& params, int heads) {
  return attention_block(seq, params, AttentionScope::kWithinPart, heads);
}

ad::Var attach_part_identity(const ad::Var& tokens, std::span<const int> part_ids, const PartEmbeddingTable& table,
                             IdentityMode mode) {
  if (static_cast<Eigen::Index>(part_ids.size()) != tokens.rows()) throw ShapeError("one part id per token required");
  for (int id : part_ids) {
    if (id < 0 || id >= table.max_parts()) {
      throw RangeError("part index " + std::to_string(id) + " exceeds embedding table size " +
                       std::to_string(table.max_parts()));
    }
  }
  const ad::Var rows = ad::gather_rows(table.table, part_ids);
  if (mode == IdentityMode::kConcat) {
    const ad::Var parts[] = {tokens, rows};
    return ad::hstack(parts);
  }
  if (rows.cols() != tokens.cols()) throw ShapeError("additive part embedding width differs from token width");
  return ad::add(tokens, rows);
}

TokenSequence attach_part_identity(const TokenSequence& seq, const PartEmbeddingTable& table, IdentityMode mode) {
  ad::NoGradGuard guard;
  TokenSequence out = seq;
  out.tokens = attach_part_identity(ad::Var::constant(seq.tokens), seq.part_ids, table, mode).value();
  return out;
}

ad::Var build_mask_embedding_map(const Eigen::MatrixXi& mask, const PartEmbeddingTable& table, int out_h, int out_w) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw ShapeError("mask map target must be between 1x1 and the mask size");
  }
  const int parts = table.max_parts();
  Eigen::MatrixXd pool = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out_h) * out_w, parts);
  for (int a = 0; a < out_h; ++a) {
    const int r0 = a * h / out_h, r1 = (a + 1) * h / out_h;
    for (int b = 0; b < out_w; ++b) {
      const int c0 = b * w / out_w, c1 = (b + 1) * w / out_w;
      const double inv = 1.0 / ((r1 - r0) * (c1 - c0));
      for (int u = r0; u < r1; ++u) {
        for (int v = c0; v < c1; ++v) {
          const int label = mask(u, v);
          if (label < 0 || label >= parts) {
            throw RangeError("mask value " + std::to_string(label) + " outside [0, " + std::to_string(parts) + ")");
          }
          pool(a * out_w + b, label) += inv;
        }
      }
    }
  }
  return ad::matmul(ad::Var::constant(std::move(pool)), table.table);
}

void DenoiserConfig::validate() const {
  if (depth < 2) throw RangeError("denoiser depth must be >= 2");
  if (width <= 0 || heads <= 0 || width % heads != 0) throw ShapeError("width must be divisible by heads");
  if (token_dim <= 0 || part_dim <= 0 || max_parts <= 0 || time_dim <= 0 || time_dim % 2 != 0) {
    throw ShapeError("invalid denoiser dimensions");
  }
  if (pe_dim % 6 != 0 || pe_dim <= 0) throw ShapeError("positional encoding width must be divisible by 6");
  if (stage != 1 && stage != 2) throw RangeError("stage must be 1 or 2");
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"depth", depth},
          {"width", width},
          {"heads", heads},
          {"token_dim", token_dim},
          {"part_dim", part_dim},
          {"max_parts", max_parts},
          {"pe_dim", pe_dim},
          {"grid_resolution", grid_resolution},
          {"time_dim", time_dim},
          {"stage", stage},
          {"schedule", schedule == AttentionSchedule::kInterleaved ? "interleaved" : "global"},
          {"bypass_global_layers", bypass_global_layers}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.part_dim = j.value("part_dim", c.part_dim);
  c.max_parts = j.value("max_parts", c.max_parts);
  c.pe_dim = j.value("pe_dim", c.pe_dim);
  c.grid_resolution = j.value("grid_resolution", c.grid_resolution);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.stage = j.value("stage", c.stage);
  c.schedule = j.value("schedule", std::string("interleaved")) == "global" ? AttentionSchedule::kAllGlobal
                                                                          : AttentionSchedule::kInterleaved;
  c.bypass_global_layers = j.value("bypass_global_layers", c.bypass_global_layers);
  c.validate();
  return c;
}

Eigen::VectorXd timestep_embedding(double t, int dim) {
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e[k] = std::sin(1000.0 * t * freq);
    e[half + k] = std::cos(1000.0 * t * freq);
  }
  return e;
}

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg_.width;
  mask_table_ = PartEmbeddingTable::create(params_, "mask_table", cfg_.max_parts, cfg_.part_dim, rng);
  if (cfg_.stage == 2) {
    part_table_ = PartEmbeddingTable::create(params_, "part_table", cfg_.max_parts, cfg_.token_dim, rng);
  }
  const int in_dim = cfg_.token_dim + (cfg_.stage == 1 ? cfg_.part_dim : 0);
  in_proj_ = Linear::create(params_, "in_proj", in_dim, d, rng);
  pos_proj_ = Linear::create(params_, "pos_proj", cfg_.pe_dim, d, rng, false);
  time_in_ = Linear::create(params_, "time_in", cfg_.time_dim, d, rng);
  time_out_ = Linear::create(params_, "time_out", d, d, rng);
  null_cond_ = params_.add("null_cond", random_matrix(1, cfg_.part_dim, 0.5, rng));
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string prefix = "blocks." + std::to_string(l);
    blocks_.push_back({AttentionParams::create(params_, prefix + ".self", d, rng),
                       CrossAttentionParams::create(params_, prefix + ".cross", d, cfg_.part_dim, rng)});
  }
  out_norm_ = LayerNormParams::create(params_, "out_norm", d);
  out_proj_ = Linear::create(params_, "out_proj", d, cfg_.token_dim, rng);
}

ad::Var Denoiser::condition_tokens(const Conditioning& cond) const {
  if (cond.features.cols() != cfg_.part_dim) throw ShapeError("conditioning features must have d_p channels");
  if (cond.features.rows() != static_cast<Eigen::Index>(cond.grid_h) * cond.grid_w) {
    throw ShapeError("conditioning feature map does not match its grid size");
  }
  const ad::Var mask_map = build_mask_embedding_map(cond.mask, mask_table_, cond.grid_h, cond.grid_w);
  return ad::add(ad::Var::constant(cond.features), mask_map);
}

Denoiser::Output Denoiser::forward(const ad::Var& x_t, std::span<const Coord> coords, std::span<const int> part_ids,
                                   double t, const Conditioning* cond) const {
  const auto len = static_cast<Eigen::Index>(coords.size());
  if (x_t.rows() != len || static_cast<Eigen::Index>(part_ids.size()) != len) {
    throw ShapeError("token, coord and part-id counts differ");
  }
  if (x_t.cols() != cfg_.token_dim) throw ShapeError("token width differs from the configured token_dim");
  const auto spans = part_spans(part_ids);

  ad::Var tokens = cfg_.stage == 1 ? attach_part_identity(x_t, part_ids, mask_table_, IdentityMode::kConcat)
                                   : attach_part_identity(x_t, part_ids, part_table_, IdentityMode::kAdd);
  Eigen::MatrixXd pe(len, cfg_.pe_dim);
  for (Eigen::Index i = 0; i < len; ++i) pe.row(i) = positional_encoding(coords[i], cfg_.pe_dim, cfg_.grid_resolution);
  ad::Var h = ad::add(in_proj_(tokens), pos_proj_(ad::Var::constant(std::move(pe))));

  const ad::Var temb = ad::Var::constant(timestep_embedding(t, cfg_.time_dim).transpose());
  h = ad::add_row(h, time_out_(ad::silu(time_in_(temb))));

  const ad::Var cond_tokens = cond != nullptr ? condition_tokens(*cond) : null_cond_;
  for (int l = 0; l < cfg_.depth; ++l) {
    const bool global_layer = cfg_.schedule == AttentionSchedule::kAllGlobal || l % 2 == 0;
    if (global_layer && cfg_.bypass_global_layers) continue;
    const auto scope = global_layer ? AttentionScope::kGlobal : AttentionScope::kWithinPart;
    h = attention_block(h, spans, scope, blocks_[l].self, cfg_.heads, &blocks_[l].cross, &cond_tokens);
  }
  return {out_proj_(out_norm_(h)), h};
}

void Denoiser::zero_weights() {
  for (auto& entry : params_.entries()) {
    ad::Var v = entry.second;
    v.mutable_value().setZero();
  }
}

DenoiserOutput forward_denoiser(const Denoiser& model, const TokenSequence& seq, double t, const Conditioning* cond) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("timestep must lie in [0, 1]");
  ad::NoGradGuard guard;
  const auto out = model.forward(ad::Var::constant(seq.tokens), seq.coords, seq.part_ids, t, cond);
  DenoiserOutput result;
  result.velocity = seq;
  result.velocity.tokens = out.velocity.value();
  result.last_block = out.last_block.value();
  return result;
}

nlohmann::json params_to_json(const ad::ParameterStore& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, v] : store.entries()) {
    const auto& m = v.value();
    std::vector<double> data(m.data(), m.data() + m.size());  // column-major
    arr.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  }
  return arr;
}

void params_from_json(ad::ParameterStore& store, const nlohmann::json& j) {
  if (!j.is_array()) throw SchemaError("params", "expected an array of tensors");
  if (j.size() != store.entries().size()) throw SchemaError("params", "tensor count differs from the model");
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = "params[" + std::to_string(i) + "]";
    const auto& e = j[i];
    const auto name = e.at("name").get<std::string>();
    ad::Var v = store.at(name);
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    if (rows != v.rows() || cols != v.cols()) throw SchemaError(path, "shape differs from the model for " + name);
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw SchemaError(path + ".data", "wrong length");
    v.mutable_value() = Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
  }
}

}  // namespace partflow
