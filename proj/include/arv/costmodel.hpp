#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arv/layout.hpp"
#include "arv/tokenizer.hpp"

namespace arv {

// Analytical cost accounting for an autoregressive-cluster configuration or
// a masked-autoencoder-style one (mae_style). No wall-clock or resident-GPU
// modeling: sequence lengths, FLOPs and attention-map sizes only.
struct CostConfig {
  std::string name;
  int32_t t_frames = 0, height = 0, width = 0, channels = 0;
  CubeSpec cube;
  ClusterScheme cluster;
  double mask_ratio = 0.8;
  bool mae_style = false;

  int32_t embed_dim = 0;
  int32_t num_heads = 0;
  int32_t enc_depth = 0;
  int32_t dec_width = 0;
  int32_t dec_depth = 0;
  double mlp_ratio = 4.0;
};

struct SequenceLengths {
  int64_t enc_q = 0, enc_kv = 0, dec_q = 0, dec_kv = 0;
};

// Cluster mode: enc_q = enc_kv = (M-1) * ceil((1-rho) * cluster_size),
// dec_q = (M-2) * cluster_size, dec_kv = enc_q (the final permuted cluster
// is dropped). MAE-style mode: enc = round((1-rho) * N), dec_q = dec_kv = N.
SequenceLengths sequence_lengths(const CostConfig& cfg);

struct CostReport {
  std::string name;
  SequenceLengths lengths;

  // Per attention layer:
  //   self  FLOPs = 8*Q*d^2 (q,k,v,out projections) + 4*Q*KV*d (scores + mix)
  //   cross FLOPs = (4*Q + 4*KV)*d^2 (projections)  + 4*Q*KV*d (scores + mix)
  //   MLP   FLOPs = 4*Q*d^2*mlp_ratio (two matmuls)
  // Attention-map memory = Q*KV*heads entries per layer.
  uint64_t enc_attn_flops_per_layer = 0;
  uint64_t enc_mlp_flops_per_layer = 0;
  uint64_t dec_attn_flops_per_layer = 0;
  uint64_t dec_mlp_flops_per_layer = 0;
  uint64_t total_flops = 0;

  uint64_t enc_attn_entries_per_layer = 0;  // Q*KV*heads
  uint64_t dec_attn_entries_per_layer = 0;
  uint64_t total_attn_entries = 0;          // summed over depth
};

// Cost algebra on explicit lengths (model dims taken from cfg).
CostReport attention_cost(const SequenceLengths& lengths, const CostConfig& cfg);

// Convenience: derive the lengths from the config first.
CostReport attention_cost(const CostConfig& cfg);

// CSV with one metric per row and one column per config.
std::string cost_report_csv(const std::vector<CostReport>& reports);

}  // namespace arv
