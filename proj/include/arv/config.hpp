#pragma once

#include <cstdint>
#include <string>

#include "arv/costmodel.hpp"
#include "arv/layout.hpp"
#include "arv/model.hpp"
#include "arv/tokenizer.hpp"
#include "arv/videodata.hpp"

namespace arv {

enum class Precision { F32, F64 };

// One flat configuration covering data synthesis, tokenization, layout,
// model and optimization. File format: UTF-8 lines of `key = value`; blank
// lines and lines starting with '#' are ignored; unknown keys are rejected.
struct TrainConfig {
  // data
  int32_t frames = 8;
  int32_t height = 32;
  int32_t width = 32;
  int32_t channels = 1;
  int32_t num_directions = 8;
  int32_t shape_size = 20;
  double speed = 2.0;
  double noise = 0.0;
  uint64_t data_seed = 1234;
  int64_t data_count = 4;
  std::string data_dir;  // optional: read .arvv files instead of synthesizing

  // tokenization
  int32_t cube_t = 2, cube_h = 8, cube_w = 8;
  bool normalize_targets = true;
  double target_eps = 1e-6;
  TargetScope target_scope = TargetScope::Full;

  // clustering and order
  int32_t cluster_t = 2, cluster_h = 2, cluster_w = 2;
  OrderKind order_policy = OrderKind::RandomRaster;
  double mask_ratio = 0.8;
  bool mae_style = false;  // cost-model only

  // model
  int32_t embed_dim = 96;
  int32_t num_heads = 4;
  int32_t enc_depth = 4;
  int32_t dec_width = 64;
  int32_t dec_depth = 2;
  double mlp_ratio = 4.0;
  bool decoder_self_attention = false;
  bool positional_embedding = true;

  // optimization
  int64_t steps = 200;
  int32_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  int64_t warmup_steps = 5;
  bool cosine_decay = false;
  uint64_t seed = 0;
  Precision precision = Precision::F32;

  // probing
  int64_t probe_count = 800;
  uint64_t probe_seed = 7;
  int64_t probe_steps = 400;
  double probe_lr = 0.05;
  int64_t finetune_steps = 100;
  double finetune_lr = 1e-4;

  // Derived views.
  MotionTaskSpec motion_spec() const;
  CubeSpec cube_spec() const { return {cube_t, cube_h, cube_w}; }
  ClusterScheme cluster_scheme() const { return {cluster_t, cluster_h, cluster_w}; }
  TokenGridDims token_grid_dims() const;
  int32_t cube_dim() const { return cube_t * cube_h * cube_w * channels; }
  ModelConfig model_config() const;
  CostConfig cost_config(const std::string& name) const;

  void validate_all() const;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

// Canonical serialization: fixed key order, shortest round-trip float text.
// serialize(parse(serialize(c))) == serialize(c).
std::string serialize_config(const TrainConfig& cfg);

std::string precision_name(Precision p);
std::string order_kind_name(OrderKind k);

}  // namespace arv
