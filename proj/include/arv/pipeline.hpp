#pragma once

#include <cstdint>

#include "arv/config.hpp"
#include "arv/layout.hpp"
#include "arv/model.hpp"
#include "arv/tokenizer.hpp"
#include "arv/videodata.hpp"

namespace arv {

// Everything derived from one video for one training step: cube grid,
// regression targets, and the permuted/masked layout.
template <typename T>
struct SamplePipeline {
  TokenGrid<T> grid;
  CubeTargets<T> targets;
  OrderPlan order;
  LayoutPlan plan;
};

// Deterministic function of (cfg, video, layout_seed). The seed drives the
// RandomRaster permutation and the per-cluster visible-token subsampling.
template <typename T>
SamplePipeline<T> build_sample_pipeline(const TrainConfig& cfg, const VideoTensor& video,
                                        uint64_t layout_seed) {
  SamplePipeline<T> s;
  s.grid = cubify<T>(video, cfg.cube_spec());
  s.targets = cfg.normalize_targets ? normalize_targets(s.grid, cfg.target_eps)
                                    : raw_targets(s.grid);
  const TokenGridDims dims{s.grid.n_t, s.grid.n_h, s.grid.n_w};
  Rng base(layout_seed);
  OrderPolicy policy{cfg.order_policy, base.fork(1).seed()};
  s.order = make_order(dims, cfg.cluster_scheme(), policy);
  Rng sub = base.fork(2);
  s.plan = assemble_layout(dims, cfg.cluster_scheme(), s.order, cfg.mask_ratio, sub,
                           cfg.target_scope);
  return s;
}

// Layout seed stream: one substream per (run seed, step, batch slot).
inline uint64_t layout_seed_for(uint64_t run_seed, int64_t step, int64_t slot) {
  return Rng(run_seed).fork(0xA110C).fork(static_cast<uint64_t>(step))
      .fork(static_cast<uint64_t>(slot))
      .seed();
}

template <typename T>
ValueId put_grid_on_tape(Tape<T>& tape, const TokenGrid<T>& grid, bool needs_grad = false) {
  return tape.leaf({grid.n_tokens(), grid.cube_dim}, grid.cubes, needs_grad);
}

// Full pretraining objective for one sample.
template <typename T>
ValueId build_pretrain_loss(Tape<T>& tape, const ParamsOnTape<T>& w, const ModelParams<T>& p,
                            const ModelConfig& mcfg, const SamplePipeline<T>& s,
                            ValueId grid_leaf, AttentionRecord<T>* record = nullptr) {
  ValueId enc = encode(tape, w, p, mcfg, s.plan, grid_leaf, record);
  ValueId pred = decode_predict(tape, w, p, mcfg, s.plan, enc);
  return pretrain_loss(tape, pred, s.targets, s.plan);
}

}  // namespace arv
