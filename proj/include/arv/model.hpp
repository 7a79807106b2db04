#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "arv/common.hpp"
#include "arv/layout.hpp"
#include "arv/rng.hpp"
#include "arv/svd.hpp"
#include "arv/tensorad.hpp"
#include "arv/tokenizer.hpp"

namespace arv {

struct ModelConfig {
  int32_t embed_dim = 96;
  int32_t num_heads = 4;
  int32_t enc_depth = 4;
  int32_t dec_width = 512;
  int32_t dec_depth = 4;
  double mlp_ratio = 4.0;
  int32_t cube_dim = 128;
  bool decoder_self_attention = false;
  bool positional_embedding = true;
  int32_t num_classes = 0;  // 0: no classifier head
  double pos_base = 10000.0;
  double ln_eps = 1e-6;
  double rank_tol_factor = 1e3;

  int32_t mlp_hidden(int32_t width) const {
    return static_cast<int32_t>(width * mlp_ratio);
  }
};

void validate(const ModelConfig& cfg);

// Named parameter tensors in a fixed canonical order. The order defines the
// checkpoint layout and the gradient accumulation order.
template <typename T>
struct ModelParams {
  std::vector<std::string> names;
  std::vector<TensorData<T>> tensors;
  std::map<std::string, size_t> index;

  size_t add(std::string name, std::vector<int64_t> shape) {
    index[name] = names.size();
    names.push_back(std::move(name));
    tensors.push_back({std::move(shape), {}});
    tensors.back().data.assign(static_cast<size_t>(tensors.back().numel()), T(0));
    return names.size() - 1;
  }
  TensorData<T>& at(const std::string& name) { return tensors[index.at(name)]; }
  const TensorData<T>& at(const std::string& name) const { return tensors[index.at(name)]; }
  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }
};

// Closed-form parameter count for a config; regression-tested against the
// actual registry.
int64_t parameter_count(const ModelConfig& cfg);

// Fixed separable sinusoidal embedding of a token-grid coordinate. dim is
// split into three equal even-sized groups (t, h, w); leftover dims are zero.
std::vector<double> positional_embedding(int32_t t, int32_t h, int32_t w, int32_t dim,
                                         double base = 10000.0);

// Post-softmax attention maps captured during a forward pass.
// layer -> flat [heads, q, kv] matrices.
template <typename T>
struct AttentionRecord {
  struct LayerMaps {
    int64_t heads = 0, q = 0, kv = 0;
    std::vector<T> probs;  // heads x q x kv
  };
  std::vector<LayerMaps> layers;
};

// ---------------------------------------------------------------------------

template <typename T>
struct ParamsOnTape {
  std::vector<ValueId> ids;  // aligned with ModelParams order
  ValueId id(const ModelParams<T>& p, const std::string& name) const {
    return ids[p.index.at(name)];
  }
};

template <typename T>
ParamsOnTape<T> put_params_on_tape(Tape<T>& tape, const ModelParams<T>& params,
                                   bool needs_grad) {
  ParamsOnTape<T> out;
  out.ids.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.ids.push_back(tape.leaf(t.shape, t.data, needs_grad));
  return out;
}

ModelConfig desk_model_config();

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng);

// Encoder over the visible tokens of a layout plan. grid_values must be a
// [n_tokens, cube_dim] tape node holding the raw cube vectors. Returns the
// [enc_len, embed_dim] output node.
template <typename T>
ValueId encode(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
               const ModelConfig& cfg, const LayoutPlan& plan, ValueId grid_values,
               AttentionRecord<T>* record = nullptr);

// Cross-attention-only decoder: one positional query per target token.
// Returns [dec_len, cube_dim] predictions.
template <typename T>
ValueId decode_predict(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                       const ModelConfig& cfg, const LayoutPlan& plan, ValueId encoder_out);

// Mean over all target tokens and cube dims of the squared prediction error.
template <typename T>
ValueId pretrain_loss(Tape<T>& tape, ValueId predictions, const CubeTargets<T>& targets,
                      const LayoutPlan& plan);

// Per-target-cluster loss term (rows of one target cluster only).
template <typename T>
ValueId pretrain_loss_for_cluster(Tape<T>& tape, ValueId predictions,
                                  const CubeTargets<T>& targets, const LayoutPlan& plan,
                                  int64_t target_index);

// Full-visibility encoder + mean pool + linear classifier; [1, num_classes].
template <typename T>
ValueId downstream_forward(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                           const ModelConfig& cfg, const TokenGridDims& grid, ValueId grid_values,
                           AttentionRecord<T>* record = nullptr);

// Encoder output for the full token grid with an all-true mask (the
// downstream path before pooling); [n_tokens, embed_dim].
template <typename T>
ValueId encode_full_visibility(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                               const ModelConfig& cfg, const TokenGridDims& grid,
                               ValueId grid_values, AttentionRecord<T>* record = nullptr);

// Per-layer numerical-rank summary over heads and samples.
struct RankSummary {
  int32_t layer = 0;
  double mean_rank = 0.0;
  int64_t min_rank = 0;
  int64_t max_rank = 0;
  int64_t count = 0;
};

template <typename T>
std::vector<RankSummary> attention_rank_report(
    const std::vector<AttentionRecord<T>>& records, double rel_tol_factor = 1e3);

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

inline void validate(const ModelConfig& cfg) {
  if (cfg.embed_dim < 1 || cfg.num_heads < 1 || cfg.enc_depth < 1 || cfg.dec_width < 1 ||
      cfg.dec_depth < 1 || cfg.cube_dim < 1)
    throw config_error("ModelConfig: dimensions must be >= 1");
  if (cfg.embed_dim % cfg.num_heads != 0)
    throw config_error("ModelConfig: embed_dim must be divisible by num_heads");
  if (cfg.dec_width % cfg.num_heads != 0)
    throw config_error("ModelConfig: dec_width must be divisible by num_heads");
  if (cfg.mlp_ratio <= 0.0) throw config_error("ModelConfig: mlp_ratio must be > 0");
}

inline ModelConfig desk_model_config() {
  ModelConfig cfg;
  cfg.embed_dim = 96;
  cfg.num_heads = 4;
  cfg.enc_depth = 4;
  cfg.dec_width = 64;
  cfg.dec_depth = 2;
  cfg.mlp_ratio = 4.0;
  cfg.cube_dim = 128;
  return cfg;
}

inline std::vector<double> positional_embedding(int32_t t, int32_t h, int32_t w, int32_t dim,
                                                double base) {
  std::vector<double> out(static_cast<size_t>(dim), 0.0);
  const int32_t pairs_per_axis = dim / 6;      // sin/cos pairs per axis group
  const int32_t group = 2 * pairs_per_axis;    // dims per axis group
  const int32_t coords[3] = {t, h, w};
  for (int32_t axis = 0; axis < 3; ++axis) {
    const int32_t off = axis * group;
    for (int32_t i = 0; i < pairs_per_axis; ++i) {
      const double freq =
          std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(group));
      const double arg = coords[axis] * freq;
      out[static_cast<size_t>(off + 2 * i)] = std::sin(arg);
      out[static_cast<size_t>(off + 2 * i + 1)] = std::cos(arg);
    }
  }
  return out;
}

namespace model_detail {

template <typename T>
std::vector<T> positional_rows(const std::vector<int32_t>& tokens, const TokenGridDims& grid,
                               int32_t dim, double base, bool enabled) {
  std::vector<T> rows(tokens.size() * static_cast<size_t>(dim), T(0));
  if (!enabled) return rows;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const int32_t tok = tokens[i];
    const int32_t w = tok % grid.n_w;
    const int32_t h = (tok / grid.n_w) % grid.n_h;
    const int32_t t = tok / (grid.n_w * grid.n_h);
    const auto e = positional_embedding(t, h, w, dim, base);
    for (int32_t j = 0; j < dim; ++j)
      rows[i * static_cast<size_t>(dim) + static_cast<size_t>(j)] = static_cast<T>(e[j]);
  }
  return rows;
}

template <typename T>
ValueId linear(Tape<T>& tape, ValueId x, ValueId w, ValueId b) {
  return add(tape, matmul(tape, x, w), b);
}

// Multi-head attention: queries [nq, dim] attend keys/values [nk, dim]
// under mask [nq, nk]. Shared for encoder self-attention (q == kv source)
// and decoder cross-attention.
template <typename T>
ValueId multihead_attention(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                            const std::string& prefix, int32_t dim, int32_t heads, ValueId q_in,
                            ValueId kv_in, const std::shared_ptr<const BoolMatrix>& mask,
                            typename AttentionRecord<T>::LayerMaps* record) {
  const int64_t nq = tape.shape(q_in)[0];
  const int64_t nk = tape.shape(kv_in)[0];
  const int64_t dh = dim / heads;

  ValueId q = linear(tape, q_in, w.id(p, prefix + ".wq"), w.id(p, prefix + ".bq"));
  ValueId k = linear(tape, kv_in, w.id(p, prefix + ".wk"), w.id(p, prefix + ".bk"));
  ValueId v = linear(tape, kv_in, w.id(p, prefix + ".wv"), w.id(p, prefix + ".bv"));

  // [n, dim] -> [heads, n, dh]
  auto split = [&](ValueId x, int64_t n) {
    return transpose(tape, reshape(tape, x, {n, heads, dh}), {1, 0, 2});
  };
  q = split(q, nq);
  k = split(k, nk);
  v = split(v, nk);

  ValueId scores = matmul(tape, q, transpose(tape, k, {0, 2, 1}));
  scores = scalar_scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(dh)));
  ValueId probs = masked_softmax(tape, scores, mask);
  if (record) {
    record->heads = heads;
    record->q = nq;
    record->kv = nk;
    record->probs = tape.value(probs);
  }
  ValueId ctx = matmul(tape, probs, v);                       // [heads, nq, dh]
  ctx = reshape(tape, transpose(tape, ctx, {1, 0, 2}), {nq, int64_t(dim)});
  return linear(tape, ctx, w.id(p, prefix + ".wo"), w.id(p, prefix + ".bo"));
}

template <typename T>
ValueId mlp_block(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                  const std::string& prefix, ValueId x) {
  ValueId h = linear(tape, x, w.id(p, prefix + ".w1"), w.id(p, prefix + ".b1"));
  h = gelu(tape, h);
  return linear(tape, h, w.id(p, prefix + ".w2"), w.id(p, prefix + ".b2"));
}

template <typename T>
ValueId layernorm_named(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                        const std::string& prefix, ValueId x, double eps) {
  return layernorm(tape, x, w.id(p, prefix + ".g"), w.id(p, prefix + ".b"), eps);
}

// Pre-norm encoder stack over an arbitrary token list and self-attention
// mask. Used by both the masked pretraining path and the full-visibility
// downstream path.
template <typename T>
ValueId encoder_stack(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                      const ModelConfig& cfg, const std::vector<int32_t>& tokens,
                      const TokenGridDims& grid, ValueId grid_values,
                      const std::shared_ptr<const BoolMatrix>& mask, AttentionRecord<T>* record) {
  ValueId x = gather_rows(tape, grid_values, tokens);
  x = linear(tape, x, w.id(p, "embed.w"), w.id(p, "embed.b"));
  {
    auto pos = positional_rows<T>(tokens, grid, cfg.embed_dim, cfg.pos_base,
                                  cfg.positional_embedding);
    ValueId pos_id = tape.constant({static_cast<int64_t>(tokens.size()), cfg.embed_dim},
                                   std::move(pos));
    x = add(tape, x, pos_id);
  }
  if (record) record->layers.resize(static_cast<size_t>(cfg.enc_depth));
  for (int32_t l = 0; l < cfg.enc_depth; ++l) {
    const std::string lp = "enc.l" + std::to_string(l);
    ValueId h = layernorm_named(tape, w, p, lp + ".ln1", x, cfg.ln_eps);
    ValueId attn = multihead_attention(
        tape, w, p, lp + ".attn", cfg.embed_dim, cfg.num_heads, h, h, mask,
        record ? &record->layers[static_cast<size_t>(l)] : nullptr);
    x = add(tape, x, attn);
    ValueId h2 = layernorm_named(tape, w, p, lp + ".ln2", x, cfg.ln_eps);
    x = add(tape, x, mlp_block(tape, w, p, lp + ".mlp", h2));
  }
  return x;
}

}  // namespace model_detail

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
  validate(cfg);
  ModelParams<T> p;
  const int64_t d = cfg.embed_dim;
  const int64_t dw = cfg.dec_width;
  const int64_t hm = cfg.mlp_hidden(cfg.embed_dim);
  const int64_t hd = cfg.mlp_hidden(cfg.dec_width);

  auto add_ln = [&](const std::string& prefix, int64_t width) {
    p.add(prefix + ".g", {width});
    p.add(prefix + ".b", {width});
    auto& g = p.at(prefix + ".g").data;
    std::fill(g.begin(), g.end(), T(1));
  };
  auto add_attn = [&](const std::string& prefix, int64_t width) {
    p.add(prefix + ".wq", {width, width});
    p.add(prefix + ".bq", {width});
    p.add(prefix + ".wk", {width, width});
    p.add(prefix + ".bk", {width});
    p.add(prefix + ".wv", {width, width});
    p.add(prefix + ".bv", {width});
    p.add(prefix + ".wo", {width, width});
    p.add(prefix + ".bo", {width});
  };
  auto add_mlp = [&](const std::string& prefix, int64_t width, int64_t hidden) {
    p.add(prefix + ".w1", {width, hidden});
    p.add(prefix + ".b1", {hidden});
    p.add(prefix + ".w2", {hidden, width});
    p.add(prefix + ".b2", {width});
  };

  p.add("embed.w", {cfg.cube_dim, d});
  p.add("embed.b", {d});
  for (int32_t l = 0; l < cfg.enc_depth; ++l) {
    const std::string lp = "enc.l" + std::to_string(l);
    add_ln(lp + ".ln1", d);
    add_attn(lp + ".attn", d);
    add_ln(lp + ".ln2", d);
    add_mlp(lp + ".mlp", d, hm);
  }
  p.add("dec.inproj.w", {d, dw});
  p.add("dec.inproj.b", {dw});
  p.add("dec.query", {dw});
  for (int32_t l = 0; l < cfg.dec_depth; ++l) {
    const std::string lp = "dec.l" + std::to_string(l);
    if (cfg.decoder_self_attention) {
      add_ln(lp + ".lns", dw);
      add_attn(lp + ".self", dw);
    }
    add_ln(lp + ".lnq", dw);
    add_attn(lp + ".cross", dw);
    add_ln(lp + ".ln2", dw);
    add_mlp(lp + ".mlp", dw, hd);
  }
  p.add("head.w", {dw, cfg.cube_dim});
  p.add("head.b", {cfg.cube_dim});
  if (cfg.num_classes > 0) {
    p.add("cls.w", {d, cfg.num_classes});
    p.add("cls.b", {cfg.num_classes});
  }

  // Weight matrices: truncated normal, std 0.02. Biases stay zero, layernorm
  // gains stay one. The decoder query is plain normal, std 0.02.
  const double std = 0.02;
  for (size_t i = 0; i < p.names.size(); ++i) {
    const std::string& name = p.names[i];
    auto& t = p.tensors[i];
    if (t.shape.size() == 2) {
      for (T& x : t.data) x = static_cast<T>(rng.truncated_normal() * std);
    } else if (name == "dec.query") {
      for (T& x : t.data) x = static_cast<T>(rng.normal() * std);
    }
  }
  return p;
}

inline int64_t parameter_count(const ModelConfig& cfg) {
  const int64_t d = cfg.embed_dim;
  const int64_t dw = cfg.dec_width;
  const int64_t hm = cfg.mlp_hidden(cfg.embed_dim);
  const int64_t hd = cfg.mlp_hidden(cfg.dec_width);
  auto attn = [](int64_t w) { return 4 * (w * w + w); };
  auto mlp = [](int64_t w, int64_t h) { return w * h + h + h * w + w; };
  auto ln = [](int64_t w) { return 2 * w; };

  int64_t n = cfg.cube_dim * d + d;                                       // embed
  n += cfg.enc_depth * (ln(d) + attn(d) + ln(d) + mlp(d, hm));            // encoder
  n += d * dw + dw;                                                       // dec.inproj
  n += dw;                                                                // dec.query
  int64_t dec_layer = ln(dw) + attn(dw) + ln(dw) + mlp(dw, hd);
  if (cfg.decoder_self_attention) dec_layer += ln(dw) + attn(dw);
  n += cfg.dec_depth * dec_layer;
  n += dw * cfg.cube_dim + cfg.cube_dim;                                  // head
  if (cfg.num_classes > 0) n += d * cfg.num_classes + cfg.num_classes;    // cls
  return n;
}

template <typename T>
ValueId encode(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
               const ModelConfig& cfg, const LayoutPlan& plan, ValueId grid_values,
               AttentionRecord<T>* record) {
  auto mask = std::make_shared<const BoolMatrix>(plan.enc_mask);
  return model_detail::encoder_stack(tape, w, p, cfg, plan.encoder_tokens, plan.grid, grid_values,
                                     mask, record);
}

template <typename T>
ValueId encode_full_visibility(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                               const ModelConfig& cfg, const TokenGridDims& grid,
                               ValueId grid_values, AttentionRecord<T>* record) {
  std::vector<int32_t> all(static_cast<size_t>(grid.n_tokens()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int32_t>(i);
  auto mask =
      std::make_shared<const BoolMatrix>(BoolMatrix::all_true(grid.n_tokens(), grid.n_tokens()));
  return model_detail::encoder_stack(tape, w, p, cfg, all, grid, grid_values, mask, record);
}

template <typename T>
ValueId decode_predict(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                       const ModelConfig& cfg, const LayoutPlan& plan, ValueId encoder_out) {
  const int64_t dec_len = plan.dec_len();
  if (tape.shape(encoder_out)[0] != plan.enc_len())
    throw contract_error("decode_predict: encoder output rows do not match plan");

  ValueId memory =
      model_detail::linear(tape, encoder_out, w.id(p, "dec.inproj.w"), w.id(p, "dec.inproj.b"));

  // Queries: shared learned query + positional embedding of each target id.
  auto pos = model_detail::positional_rows<T>(plan.target_tokens, plan.grid, cfg.dec_width,
                                              cfg.pos_base, cfg.positional_embedding);
  ValueId x = tape.constant({dec_len, cfg.dec_width}, std::move(pos));
  x = add(tape, x, w.id(p, "dec.query"));

  auto cross = std::make_shared<const BoolMatrix>(plan.cross_mask);
  std::shared_ptr<const BoolMatrix> self;
  if (cfg.decoder_self_attention) {
    // Block-causal over target clusters: query blocks attend their own and
    // earlier blocks; context there is strictly earlier either way.
    BoolMatrix m(dec_len, dec_len);
    for (int64_t i = 0; i < dec_len; ++i)
      for (int64_t j = 0; j < dec_len; ++j)
        if (plan.target_order_pos[static_cast<size_t>(i)] >=
            plan.target_order_pos[static_cast<size_t>(j)])
          m.set(i, j, true);
    self = std::make_shared<const BoolMatrix>(std::move(m));
  }

  for (int32_t l = 0; l < cfg.dec_depth; ++l) {
    const std::string lp = "dec.l" + std::to_string(l);
    if (cfg.decoder_self_attention) {
      ValueId hs = model_detail::layernorm_named(tape, w, p, lp + ".lns", x, cfg.ln_eps);
      x = add(tape, x,
              model_detail::multihead_attention(tape, w, p, lp + ".self", cfg.dec_width,
                                                cfg.num_heads, hs, hs, self, nullptr));
    }
    ValueId hq = model_detail::layernorm_named(tape, w, p, lp + ".lnq", x, cfg.ln_eps);
    x = add(tape, x,
            model_detail::multihead_attention(tape, w, p, lp + ".cross", cfg.dec_width,
                                              cfg.num_heads, hq, memory, cross, nullptr));
    ValueId h2 = model_detail::layernorm_named(tape, w, p, lp + ".ln2", x, cfg.ln_eps);
    x = add(tape, x, model_detail::mlp_block(tape, w, p, lp + ".mlp", h2));
  }
  return model_detail::linear(tape, x, w.id(p, "head.w"), w.id(p, "head.b"));
}

namespace model_detail {
template <typename T>
std::vector<T> target_rows(const CubeTargets<T>& targets, const std::vector<int32_t>& tokens) {
  std::vector<T> rows(tokens.size() * static_cast<size_t>(targets.cube_dim));
  for (size_t i = 0; i < tokens.size(); ++i)
    std::copy_n(targets.row(tokens[i]), targets.cube_dim,
                rows.data() + i * static_cast<size_t>(targets.cube_dim));
  return rows;
}
}  // namespace model_detail

template <typename T>
ValueId pretrain_loss(Tape<T>& tape, ValueId predictions, const CubeTargets<T>& targets,
                      const LayoutPlan& plan) {
  auto rows = model_detail::target_rows(targets, plan.target_tokens);
  ValueId tgt = tape.constant({plan.dec_len(), targets.cube_dim}, std::move(rows));
  return mse(tape, predictions, tgt);
}

template <typename T>
ValueId pretrain_loss_for_cluster(Tape<T>& tape, ValueId predictions,
                                  const CubeTargets<T>& targets, const LayoutPlan& plan,
                                  int64_t target_index) {
  const int64_t begin = plan.target_begin(target_index);
  const int64_t end = plan.target_end(target_index);
  std::vector<int32_t> rows_idx;
  std::vector<int32_t> toks;
  for (int64_t r = begin; r < end; ++r) {
    rows_idx.push_back(static_cast<int32_t>(r));
    toks.push_back(plan.target_tokens[static_cast<size_t>(r)]);
  }
  ValueId pred_rows = gather_rows(tape, predictions, rows_idx);
  auto rows = model_detail::target_rows(targets, toks);
  ValueId tgt = tape.constant({end - begin, targets.cube_dim}, std::move(rows));
  return mse(tape, pred_rows, tgt);
}

template <typename T>
ValueId downstream_forward(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                           const ModelConfig& cfg, const TokenGridDims& grid, ValueId grid_values,
                           AttentionRecord<T>* record) {
  if (cfg.num_classes <= 0) throw contract_error("downstream_forward: classifier head missing");
  ValueId enc = encode_full_visibility(tape, w, p, cfg, grid, grid_values, record);
  const int64_t n = grid.n_tokens();
  // Mean pool over tokens as a constant [1, n] matmul.
  std::vector<T> pool(static_cast<size_t>(n), static_cast<T>(1.0 / static_cast<double>(n)));
  ValueId pool_id = tape.constant({1, n}, std::move(pool));
  ValueId pooled = matmul(tape, pool_id, enc);  // [1, embed_dim]
  return model_detail::linear(tape, pooled, w.id(p, "cls.w"), w.id(p, "cls.b"));
}

template <typename T>
std::vector<RankSummary> attention_rank_report(const std::vector<AttentionRecord<T>>& records,
                                               double rel_tol_factor) {
  if (records.empty()) throw contract_error("attention_rank_report: no records");
  const size_t num_layers = records.front().layers.size();
  std::vector<RankSummary> out(num_layers);
  const double eps = static_cast<double>(std::numeric_limits<T>::epsilon());
  for (size_t l = 0; l < num_layers; ++l) {
    RankSummary& s = out[l];
    s.layer = static_cast<int32_t>(l);
    s.min_rank = std::numeric_limits<int64_t>::max();
    double total = 0.0;
    for (const auto& rec : records) {
      const auto& maps = rec.layers.at(l);
      std::vector<double> buf(static_cast<size_t>(maps.q * maps.kv));
      for (int64_t hh = 0; hh < maps.heads; ++hh) {
        const T* src = maps.probs.data() + hh * maps.q * maps.kv;
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<double>(src[i]);
        const auto sigma = singular_values(buf.data(), maps.q, maps.kv);
        const int64_t r =
            numerical_rank(sigma, rank_rel_tol(maps.q, maps.kv, eps, rel_tol_factor));
        total += static_cast<double>(r);
        s.min_rank = std::min(s.min_rank, r);
        s.max_rank = std::max(s.max_rank, r);
        ++s.count;
      }
    }
    s.mean_rank = s.count ? total / static_cast<double>(s.count) : 0.0;
  }
  return out;
}

}  // namespace arv
