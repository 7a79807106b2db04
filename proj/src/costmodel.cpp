#include "arv/costmodel.hpp"

#include <cmath>
#include <sstream>

namespace arv {

namespace {
TokenGridDims token_grid_of(const CostConfig& cfg) {
  if (cfg.cube.p_t < 1 || cfg.cube.p_h < 1 || cfg.cube.p_w < 1)
    throw config_error("cost config: cube extents must be >= 1");
  if (cfg.t_frames % cfg.cube.p_t != 0 || cfg.height % cfg.cube.p_h != 0 ||
      cfg.width % cfg.cube.p_w != 0)
    throw config_error("cost config: video dims not divisible by cube extents");
  return {cfg.t_frames / cfg.cube.p_t, cfg.height / cfg.cube.p_h, cfg.width / cfg.cube.p_w};
}
}  // namespace

SequenceLengths sequence_lengths(const CostConfig& cfg) {
  const TokenGridDims grid = token_grid_of(cfg);
  SequenceLengths out;
  if (cfg.mae_style) {
    const int64_t n = grid.n_tokens();
    const int64_t visible = std::llround((1.0 - cfg.mask_ratio) * static_cast<double>(n));
    out.enc_q = out.enc_kv = visible;
    out.dec_q = out.dec_kv = n;
  } else {
    const ClusterGrid cg = cluster_grid(grid, cfg.cluster);
    const int64_t m = cg.num_clusters();
    if (m < 3) throw config_error("cost config: need M >= 3 clusters");
    const int64_t vis = visible_count(cg.cluster_size, cfg.mask_ratio);
    out.enc_q = out.enc_kv = (m - 1) * vis;
    out.dec_q = (m - 2) * cg.cluster_size;
    out.dec_kv = out.enc_q;
  }
  return out;
}

CostReport attention_cost(const SequenceLengths& len, const CostConfig& cfg) {
  CostReport r;
  r.name = cfg.name;
  r.lengths = len;

  const uint64_t d = static_cast<uint64_t>(cfg.embed_dim);
  const uint64_t dw = static_cast<uint64_t>(cfg.dec_width);
  const uint64_t heads = static_cast<uint64_t>(cfg.num_heads);
  const uint64_t eq = static_cast<uint64_t>(len.enc_q);
  const uint64_t ekv = static_cast<uint64_t>(len.enc_kv);
  const uint64_t dq = static_cast<uint64_t>(len.dec_q);
  const uint64_t dkv = static_cast<uint64_t>(len.dec_kv);
  const uint64_t ratio_e = static_cast<uint64_t>(cfg.mlp_ratio * cfg.embed_dim);
  const uint64_t ratio_d = static_cast<uint64_t>(cfg.mlp_ratio * cfg.dec_width);

  r.enc_attn_flops_per_layer = 8 * eq * d * d + 4 * eq * ekv * d;
  r.enc_mlp_flops_per_layer = 4 * eq * d * ratio_e;
  r.dec_attn_flops_per_layer = (4 * dq + 4 * dkv) * dw * dw + 4 * dq * dkv * dw;
  r.dec_mlp_flops_per_layer = 4 * dq * dw * ratio_d;

  r.enc_attn_entries_per_layer = eq * ekv * heads;
  r.dec_attn_entries_per_layer = dq * dkv * heads;

  const uint64_t enc_depth = static_cast<uint64_t>(cfg.enc_depth);
  const uint64_t dec_depth = static_cast<uint64_t>(cfg.dec_depth);
  r.total_flops = enc_depth * (r.enc_attn_flops_per_layer + r.enc_mlp_flops_per_layer) +
                  dec_depth * (r.dec_attn_flops_per_layer + r.dec_mlp_flops_per_layer);
  r.total_attn_entries =
      enc_depth * r.enc_attn_entries_per_layer + dec_depth * r.dec_attn_entries_per_layer;
  return r;
}

CostReport attention_cost(const CostConfig& cfg) {
  return attention_cost(sequence_lengths(cfg), cfg);
}

std::string cost_report_csv(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  os << "metric";
  for (const auto& r : reports) os << "," << r.name;
  os << "\n";
  auto row = [&](const char* metric, auto get) {
    os << metric;
    for (const auto& r : reports) os << "," << get(r);
    os << "\n";
  };
  row("enc_q", [](const CostReport& r) { return r.lengths.enc_q; });
  row("enc_kv", [](const CostReport& r) { return r.lengths.enc_kv; });
  row("dec_q", [](const CostReport& r) { return r.lengths.dec_q; });
  row("dec_kv", [](const CostReport& r) { return r.lengths.dec_kv; });
  row("enc_attn_flops_per_layer", [](const CostReport& r) { return r.enc_attn_flops_per_layer; });
  row("enc_mlp_flops_per_layer", [](const CostReport& r) { return r.enc_mlp_flops_per_layer; });
  row("dec_attn_flops_per_layer", [](const CostReport& r) { return r.dec_attn_flops_per_layer; });
  row("dec_mlp_flops_per_layer", [](const CostReport& r) { return r.dec_mlp_flops_per_layer; });
  row("total_flops", [](const CostReport& r) { return r.total_flops; });
  row("enc_attn_entries_per_layer",
      [](const CostReport& r) { return r.enc_attn_entries_per_layer; });
  row("dec_attn_entries_per_layer",
      [](const CostReport& r) { return r.dec_attn_entries_per_layer; });
  row("total_attn_entries", [](const CostReport& r) { return r.total_attn_entries; });
  return os.str();
}

}  // namespace arv
