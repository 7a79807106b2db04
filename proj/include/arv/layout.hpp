#pragma once

#include <cstdint>
#include <vector>

#include "arv/common.hpp"
#include "arv/rng.hpp"

namespace arv {

// Token-grid extents (tokens, not pixels).
struct TokenGridDims {
  int32_t n_t = 0, n_h = 0, n_w = 0;
  int64_t n_tokens() const { return int64_t(n_t) * n_h * n_w; }
};

// Tokens per cluster along each axis.
struct ClusterScheme {
  int32_t k_t = 1, k_h = 1, k_w = 1;
};

// Cluster-grid extents derived from a token grid and a scheme.
struct ClusterGrid {
  int32_t c_t = 0, c_h = 0, c_w = 0;
  int64_t cluster_size = 0;  // k_t * k_h * k_w
  int64_t num_clusters() const { return int64_t(c_t) * c_h * c_w; }
};

ClusterGrid cluster_grid(const TokenGridDims& grid, const ClusterScheme& scheme);

struct ClusterId {
  int32_t ct = 0, ch = 0, cw = 0;
  bool operator==(const ClusterId& o) const { return ct == o.ct && ch == o.ch && cw == o.cw; }
};

enum class OrderKind { SpatialFirst, TemporalFirst, RandomRaster };

struct OrderPolicy {
  OrderKind kind = OrderKind::RandomRaster;
  uint64_t seed = 0;  // used by RandomRaster only
};

// A bijective prediction order over all clusters.
struct OrderPlan {
  std::vector<ClusterId> permutation;
};

// Token (t, h, w) belongs to cluster (t / k_t, h / k_h, w / k_w). Returns
// token-id lists indexed by linear cluster id ((ct*c_h + ch)*c_w + cw);
// each list is sorted ascending, i.e. (t, h, w) row-major.
std::vector<std::vector<int32_t>> build_cluster_partition(const TokenGridDims& grid,
                                                          const ClusterScheme& scheme);

OrderPlan make_order(const TokenGridDims& grid, const ClusterScheme& scheme,
                     const OrderPolicy& policy);

// Retains ceil((1 - mask_ratio) * |cluster|) token ids, drawn uniformly
// without replacement, returned sorted ascending.
std::vector<int32_t> subsample_visible(const std::vector<int32_t>& cluster_tokens,
                                       double mask_ratio, Rng& rng);

int64_t visible_count(int64_t cluster_size, double mask_ratio);

enum class TargetScope { Full, VisibleOnly };

// Per-sample materialization of the autoregressive layout. Order positions
// are 1-based over the kept clusters (position 1 = pure context). The final
// cluster of the permutation is dropped from both encoding and targets.
struct LayoutPlan {
  TokenGridDims grid;
  int64_t num_clusters = 0;   // M, before dropping
  int64_t cluster_size = 0;

  // Kept clusters in order-position order (positions 1..M-1).
  std::vector<int32_t> kept_cluster_ids;               // linear cluster ids
  std::vector<std::vector<int32_t>> visible_tokens;    // per kept cluster, sorted

  std::vector<int32_t> encoder_tokens;  // concatenated visible ids, kept order
  std::vector<int32_t> enc_order_pos;   // order position of each encoder slot

  // Targets are the kept clusters at order positions 2..M-1, each with its
  // token list (full cluster, or the visible subset under VisibleOnly).
  std::vector<int32_t> target_tokens;      // concatenated token ids
  std::vector<int32_t> target_order_pos;   // order position per target row
  std::vector<int64_t> target_offsets;     // per target cluster, start row; size M-1
  std::vector<int32_t> target_cluster_ids; // linear cluster ids, size M-2

  BoolMatrix enc_mask;    // enc_len x enc_len
  BoolMatrix cross_mask;  // dec_len x enc_len

  int64_t enc_len() const { return static_cast<int64_t>(encoder_tokens.size()); }
  int64_t dec_len() const { return static_cast<int64_t>(target_tokens.size()); }
  int64_t num_targets() const { return static_cast<int64_t>(target_cluster_ids.size()); }

  // Rows [target_offsets[k], target_offsets[k+1]) belong to target cluster k.
  int64_t target_begin(int64_t k) const { return target_offsets[static_cast<size_t>(k)]; }
  int64_t target_end(int64_t k) const { return target_offsets[static_cast<size_t>(k) + 1]; }
};

// Drops the last cluster of the order, subsamples visible tokens per kept
// cluster (one rng substream per kept position), and builds both masks:
//   enc_mask[i][j]   = pos(cluster(i)) >= pos(cluster(j))
//   cross_mask[q][j] = pos(target(q))  >  pos(cluster(j))
LayoutPlan assemble_layout(const TokenGridDims& grid, const ClusterScheme& scheme,
                           const OrderPlan& order, double mask_ratio, Rng& rng,
                           TargetScope scope = TargetScope::Full);

}  // namespace arv
