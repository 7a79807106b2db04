#include "arv/layout.hpp"

#include <algorithm>
#include <cmath>

namespace arv {

ClusterGrid cluster_grid(const TokenGridDims& grid, const ClusterScheme& scheme) {
  if (scheme.k_t < 1 || scheme.k_h < 1 || scheme.k_w < 1)
    throw config_error("ClusterScheme extents must be >= 1");
  if (grid.n_t % scheme.k_t != 0)
    throw config_error(cat("cluster scheme: n_t ", grid.n_t, " not divisible by k_t ", scheme.k_t));
  if (grid.n_h % scheme.k_h != 0)
    throw config_error(cat("cluster scheme: n_h ", grid.n_h, " not divisible by k_h ", scheme.k_h));
  if (grid.n_w % scheme.k_w != 0)
    throw config_error(cat("cluster scheme: n_w ", grid.n_w, " not divisible by k_w ", scheme.k_w));
  ClusterGrid cg;
  cg.c_t = grid.n_t / scheme.k_t;
  cg.c_h = grid.n_h / scheme.k_h;
  cg.c_w = grid.n_w / scheme.k_w;
  cg.cluster_size = int64_t(scheme.k_t) * scheme.k_h * scheme.k_w;
  return cg;
}

namespace {
inline int32_t linear_cluster_id(const ClusterGrid& cg, const ClusterId& c) {
  return static_cast<int32_t>((int64_t(c.ct) * cg.c_h + c.ch) * cg.c_w + c.cw);
}
}  // namespace

std::vector<std::vector<int32_t>> build_cluster_partition(const TokenGridDims& grid,
                                                          const ClusterScheme& scheme) {
  const ClusterGrid cg = cluster_grid(grid, scheme);
  std::vector<std::vector<int32_t>> clusters(static_cast<size_t>(cg.num_clusters()));
  for (auto& c : clusters) c.reserve(static_cast<size_t>(cg.cluster_size));

  for (int32_t t = 0; t < grid.n_t; ++t)
    for (int32_t h = 0; h < grid.n_h; ++h)
      for (int32_t w = 0; w < grid.n_w; ++w) {
        const ClusterId cid{t / scheme.k_t, h / scheme.k_h, w / scheme.k_w};
        const int32_t token = static_cast<int32_t>((int64_t(t) * grid.n_h + h) * grid.n_w + w);
        clusters[static_cast<size_t>(linear_cluster_id(cg, cid))].push_back(token);
      }
  // Token scan above is (t, h, w) row-major, so each list is already sorted.
  return clusters;
}

OrderPlan make_order(const TokenGridDims& grid, const ClusterScheme& scheme,
                     const OrderPolicy& policy) {
  const ClusterGrid cg = cluster_grid(grid, scheme);
  OrderPlan plan;
  plan.permutation.reserve(static_cast<size_t>(cg.num_clusters()));

  switch (policy.kind) {
    case OrderKind::SpatialFirst:
      for (int32_t ct = 0; ct < cg.c_t; ++ct)
        for (int32_t ch = 0; ch < cg.c_h; ++ch)
          for (int32_t cw = 0; cw < cg.c_w; ++cw) plan.permutation.push_back({ct, ch, cw});
      break;
    case OrderKind::TemporalFirst:
      for (int32_t ch = 0; ch < cg.c_h; ++ch)
        for (int32_t cw = 0; cw < cg.c_w; ++cw)
          for (int32_t ct = 0; ct < cg.c_t; ++ct) plan.permutation.push_back({ct, ch, cw});
      break;
    case OrderKind::RandomRaster: {
      for (int32_t ct = 0; ct < cg.c_t; ++ct)
        for (int32_t ch = 0; ch < cg.c_h; ++ch)
          for (int32_t cw = 0; cw < cg.c_w; ++cw) plan.permutation.push_back({ct, ch, cw});
      Rng rng(policy.seed);
      rng.shuffle(plan.permutation);
      break;
    }
  }
  return plan;
}

int64_t visible_count(int64_t cluster_size, double mask_ratio) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
    throw config_error("mask_ratio must be in [0, 1)");
  return static_cast<int64_t>(std::ceil((1.0 - mask_ratio) * static_cast<double>(cluster_size)));
}

std::vector<int32_t> subsample_visible(const std::vector<int32_t>& cluster_tokens,
                                       double mask_ratio, Rng& rng) {
  const int64_t n = static_cast<int64_t>(cluster_tokens.size());
  const int64_t keep = visible_count(n, mask_ratio);
  std::vector<int64_t> picks = rng.sample_without_replacement(n, keep);
  std::vector<int32_t> out;
  out.reserve(static_cast<size_t>(keep));
  for (int64_t p : picks) out.push_back(cluster_tokens[static_cast<size_t>(p)]);
  std::sort(out.begin(), out.end());
  return out;
}

LayoutPlan assemble_layout(const TokenGridDims& grid, const ClusterScheme& scheme,
                           const OrderPlan& order, double mask_ratio, Rng& rng,
                           TargetScope scope) {
  const ClusterGrid cg = cluster_grid(grid, scheme);
  const int64_t m = cg.num_clusters();
  if (static_cast<int64_t>(order.permutation.size()) != m)
    throw contract_error("assemble_layout: order does not cover the cluster grid");
  if (m < 3)
    throw config_error("need at least one context and one target cluster (M >= 3)");

  const auto partition = build_cluster_partition(grid, scheme);

  LayoutPlan plan;
  plan.grid = grid;
  plan.num_clusters = m;
  plan.cluster_size = cg.cluster_size;

  const int64_t kept = m - 1;  // drop the last cluster of the permutation
  plan.kept_cluster_ids.reserve(static_cast<size_t>(kept));
  plan.visible_tokens.reserve(static_cast<size_t>(kept));

  for (int64_t k = 0; k < kept; ++k) {
    const ClusterId& cid = order.permutation[static_cast<size_t>(k)];
    const int32_t lin = linear_cluster_id(cg, cid);
    plan.kept_cluster_ids.push_back(lin);
    Rng sub = rng.fork(static_cast<uint64_t>(k));  // one substream per kept position
    plan.visible_tokens.push_back(
        subsample_visible(partition[static_cast<size_t>(lin)], mask_ratio, sub));
  }

  for (int64_t k = 0; k < kept; ++k) {
    const int32_t pos = static_cast<int32_t>(k + 1);  // 1-based order position
    for (int32_t tok : plan.visible_tokens[static_cast<size_t>(k)]) {
      plan.encoder_tokens.push_back(tok);
      plan.enc_order_pos.push_back(pos);
    }
  }

  plan.target_offsets.push_back(0);
  for (int64_t k = 1; k < kept; ++k) {  // order positions 2..M-1
    const int32_t lin = plan.kept_cluster_ids[static_cast<size_t>(k)];
    plan.target_cluster_ids.push_back(lin);
    const std::vector<int32_t>& toks = scope == TargetScope::Full
                                           ? partition[static_cast<size_t>(lin)]
                                           : plan.visible_tokens[static_cast<size_t>(k)];
    for (int32_t tok : toks) {
      plan.target_tokens.push_back(tok);
      plan.target_order_pos.push_back(static_cast<int32_t>(k + 1));
    }
    plan.target_offsets.push_back(static_cast<int64_t>(plan.target_tokens.size()));
  }

  const int64_t enc_len = plan.enc_len();
  const int64_t dec_len = plan.dec_len();

  plan.enc_mask = BoolMatrix(enc_len, enc_len);
  for (int64_t i = 0; i < enc_len; ++i) {
    const int32_t pi = plan.enc_order_pos[static_cast<size_t>(i)];
    for (int64_t j = 0; j < enc_len; ++j)
      if (pi >= plan.enc_order_pos[static_cast<size_t>(j)]) plan.enc_mask.set(i, j, true);
  }

  plan.cross_mask = BoolMatrix(dec_len, enc_len);
  for (int64_t q = 0; q < dec_len; ++q) {
    const int32_t pq = plan.target_order_pos[static_cast<size_t>(q)];
    for (int64_t j = 0; j < enc_len; ++j)
      if (pq > plan.enc_order_pos[static_cast<size_t>(j)]) plan.cross_mask.set(q, j, true);
  }

  return plan;
}

}  // namespace arv
