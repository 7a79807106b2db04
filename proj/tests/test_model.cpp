#include <doctest.h>

#include <cmath>

#include "arv/model.hpp"
#include "arv/pipeline.hpp"
#include "support.hpp"

using namespace arv;

namespace {

template <typename T>
ModelParams<T> desk_params(uint64_t seed, int32_t num_classes = 0,
                           bool decoder_self_attention = false) {
  ModelConfig cfg = desk_model_config();
  cfg.num_classes = num_classes;
  cfg.decoder_self_attention = decoder_self_attention;
  Rng rng(seed);
  return init_params<T>(cfg, rng);
}

template <typename T>
SamplePipeline<T> desk_pipe(uint64_t layout_seed, uint64_t video_index = 0) {
  const TrainConfig cfg = arvtest::desk_config();
  const LabeledVideo lv = generate_moving_shape(cfg.motion_spec(), video_index);
  return build_sample_pipeline<T>(cfg, lv.video, layout_seed);
}

}  // namespace

TEST_CASE("positional embedding of the origin is alternating zeros and ones") {
  const auto e = positional_embedding(0, 0, 0, 96);
  for (size_t i = 0; i < e.size(); i += 2) {
    CHECK(e[i] == 0.0);      // sin(0)
    CHECK(e[i + 1] == 1.0);  // cos(0)
  }
}

TEST_CASE("positional embedding is separable across axis groups") {
  const int32_t dim = 96;
  const auto a = positional_embedding(3, 5, 2, dim);
  const auto b = positional_embedding(3, 5, 4, dim);
  const int32_t group = dim / 3;
  for (int32_t i = 0; i < 2 * group; ++i) CHECK(a[static_cast<size_t>(i)] == b[static_cast<size_t>(i)]);
  bool w_differs = false;
  for (int32_t i = 2 * group; i < dim; ++i)
    w_differs = w_differs || a[static_cast<size_t>(i)] != b[static_cast<size_t>(i)];
  CHECK(w_differs);
}

TEST_CASE("positional similarity decays monotonically along one axis") {
  const int32_t dim = 96;
  const auto base = positional_embedding(0, 0, 0, dim);
  double prev = 1e300;
  for (int32_t k = 0; k <= 4; ++k) {
    const auto e = positional_embedding(0, 0, k, dim);
    double dot = 0.0;
    for (size_t i = 0; i < e.size(); ++i) dot += base[i] * e[i];
    CHECK(dot < prev);
    prev = dot;
  }
}

TEST_CASE("remainder dims beyond the three groups stay zero") {
  // dec_width 64: 3 groups of 20 dims, last 4 dims zero
  const auto e = positional_embedding(2, 3, 4, 64);
  for (size_t i = 60; i < 64; ++i) CHECK(e[i] == 0.0);
}

TEST_CASE("parameter count closed form matches the registry") {
  for (bool self_attn : {false, true})
    for (int32_t classes : {0, 8}) {
      ModelConfig cfg = desk_model_config();
      cfg.decoder_self_attention = self_attn;
      cfg.num_classes = classes;
      Rng rng(3);
      const ModelParams<double> p = init_params<double>(cfg, rng);
      CHECK(p.total_count() == parameter_count(cfg));
    }
}

TEST_CASE("embed_dim must divide num_heads and widths validated") {
  ModelConfig cfg = desk_model_config();
  cfg.embed_dim = 97;
  CHECK_THROWS_AS(validate(cfg), config_error);
  cfg = desk_model_config();
  cfg.dec_width = 66;
  CHECK_THROWS_AS(validate(cfg), config_error);
}

TEST_CASE("zeroed residual branches make the encoder an identity over embeddings") {
  ModelConfig cfg = desk_model_config();
  ModelParams<double> params = desk_params<double>(11);
  for (size_t i = 0; i < params.names.size(); ++i) {
    const std::string& n = params.names[i];
    if (n.find(".attn.") != std::string::npos || n.find(".mlp.") != std::string::npos)
      std::fill(params.tensors[i].data.begin(), params.tensors[i].data.end(), 0.0);
  }
  const auto pipe = desk_pipe<double>(5);
  Tape<double> tape;
  ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
  ValueId enc = encode(tape, w, params, cfg, pipe.plan, grid_leaf);

  // expected: gather -> linear embed -> + positional rows
  ValueId x = gather_rows(tape, grid_leaf, pipe.plan.encoder_tokens);
  x = add(tape, matmul(tape, x, w.id(params, "embed.w")), w.id(params, "embed.b"));
  auto pos = model_detail::positional_rows<double>(pipe.plan.encoder_tokens, pipe.plan.grid,
                                                   cfg.embed_dim, cfg.pos_base, true);
  x = add(tape, x, tape.constant({pipe.plan.enc_len(), cfg.embed_dim}, std::move(pos)));
  CHECK(tape.value(enc) == tape.value(x));
}

TEST_CASE("a single kept cluster behaves as an unmasked transformer") {
  // Hand-build the degenerate one-cluster layout (assemble_layout requires
  // M >= 3, but encode() accepts any consistent plan).
  const TrainConfig tc = arvtest::desk_config();
  const auto full = desk_pipe<double>(9);
  LayoutPlan plan;
  plan.grid = full.plan.grid;
  plan.num_clusters = 2;
  plan.cluster_size = full.plan.cluster_size;
  plan.kept_cluster_ids = {full.plan.kept_cluster_ids[0]};
  plan.visible_tokens = {full.plan.visible_tokens[0]};
  plan.encoder_tokens = full.plan.visible_tokens[0];
  plan.enc_order_pos.assign(plan.encoder_tokens.size(), 1);
  plan.enc_mask = BoolMatrix::all_true(static_cast<int64_t>(plan.encoder_tokens.size()),
                                       static_cast<int64_t>(plan.encoder_tokens.size()));
  plan.target_offsets = {0};

  const ModelConfig cfg = desk_model_config();
  const ModelParams<double> params = desk_params<double>(13);
  Tape<double> tape;
  ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, full.grid);
  ValueId enc = encode(tape, w, params, cfg, plan, grid_leaf);

  // the sequential reference never builds masks at all
  const auto oracle = arvtest::ref::sequential_encode(params, cfg, plan, full.grid.cubes);
  CHECK(arvtest::max_rel_diff(tape.value(enc), oracle) < 1e-12);
}

TEST_CASE("token outputs are invariant to cluster storage order") {
  const ModelConfig cfg = desk_model_config();
  const ModelParams<double> params = desk_params<double>(17);
  const auto pipe = desk_pipe<double>(21);
  const LayoutPlan& a = pipe.plan;

  // plan B: same order positions, segments stored swapped (kept 1 <-> 3)
  LayoutPlan b = a;
  std::vector<size_t> storage = {0, 3, 2, 1, 4, 5, 6};
  b.encoder_tokens.clear();
  b.enc_order_pos.clear();
  for (size_t s : storage) {
    for (int32_t tok : a.visible_tokens[s]) {
      b.encoder_tokens.push_back(tok);
      b.enc_order_pos.push_back(static_cast<int32_t>(s + 1));
    }
  }
  const int64_t n = b.enc_len();
  b.enc_mask = BoolMatrix(n, n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (b.enc_order_pos[static_cast<size_t>(i)] >= b.enc_order_pos[static_cast<size_t>(j)])
        b.enc_mask.set(i, j, true);

  auto run = [&](const LayoutPlan& plan) {
    Tape<double> tape;
    ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
    ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
    ValueId enc = encode(tape, w, params, cfg, plan, grid_leaf);
    return tape.value(enc);
  };
  const auto va = run(a);
  const auto vb = run(b);

  // match rows by token id
  const int64_t d = cfg.embed_dim;
  for (size_t ia = 0; ia < a.encoder_tokens.size(); ++ia) {
    const int32_t tok = a.encoder_tokens[ia];
    size_t ib = 0;
    while (b.encoder_tokens[ib] != tok) ++ib;
    for (int64_t j = 0; j < d; ++j) {
      const double x = va[ia * static_cast<size_t>(d) + static_cast<size_t>(j)];
      const double y = vb[ib * static_cast<size_t>(d) + static_cast<size_t>(j)];
      CHECK(std::fabs(x - y) <= 1e-6 * std::max({std::fabs(x), std::fabs(y), 1.0}));
    }
  }
}

TEST_CASE("zero prediction head yields all-zero predicted cubes") {
  const ModelConfig cfg = desk_model_config();
  ModelParams<double> params = desk_params<double>(23);
  std::fill(params.at("head.w").data.begin(), params.at("head.w").data.end(), 0.0);
  std::fill(params.at("head.b").data.begin(), params.at("head.b").data.end(), 0.0);
  const auto pipe = desk_pipe<double>(25);
  Tape<double> tape;
  ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
  ValueId enc = encode(tape, w, params, cfg, pipe.plan, grid_leaf);
  ValueId pred = decode_predict(tape, w, params, cfg, pipe.plan, enc);
  for (double x : tape.value(pred)) CHECK(x == 0.0);
}

TEST_CASE("without positional queries, same-cluster predictions coincide") {
  ModelConfig cfg = desk_model_config();
  cfg.positional_embedding = false;
  TrainConfig tc = arvtest::desk_config();
  tc.positional_embedding = false;
  const LabeledVideo lv = generate_moving_shape(tc.motion_spec(), 0);
  const auto pipe = build_sample_pipeline<double>(tc, lv.video, 33);
  const ModelParams<double> params = desk_params<double>(27);
  Tape<double> tape;
  ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
  ValueId enc = encode(tape, w, params, cfg, pipe.plan, grid_leaf);
  ValueId pred = decode_predict(tape, w, params, cfg, pipe.plan, enc);
  const auto& v = tape.value(pred);
  const int64_t cd = cfg.cube_dim;
  for (int64_t k = 0; k < pipe.plan.num_targets(); ++k) {
    const int64_t first = pipe.plan.target_begin(k);
    for (int64_t r = first + 1; r < pipe.plan.target_end(k); ++r)
      for (int64_t j = 0; j < cd; ++j)
        CHECK(v[static_cast<size_t>(r * cd + j)] == v[static_cast<size_t>(first * cd + j)]);
  }
}

TEST_CASE("predictions ignore perturbations of same-or-later clusters bit-exactly") {
  const TrainConfig tc = arvtest::desk_config();
  const ModelConfig cfg = desk_model_config();
  const ModelParams<float> params = desk_params<float>(29);
  const LabeledVideo lv = generate_moving_shape(tc.motion_spec(), 1);
  const auto pipe = build_sample_pipeline<float>(tc, lv.video, 37);
  const auto partition = build_cluster_partition(pipe.plan.grid, tc.cluster_scheme());

  auto predict = [&](const std::vector<float>& grid_values) {
    Tape<float> tape;
    ParamsOnTape<float> w = put_params_on_tape(tape, params, false);
    ValueId grid_leaf = tape.leaf({pipe.grid.n_tokens(), pipe.grid.cube_dim}, grid_values, false);
    ValueId enc = encode(tape, w, params, cfg, pipe.plan, grid_leaf);
    ValueId pred = decode_predict(tape, w, params, cfg, pipe.plan, enc);
    return tape.value(pred);
  };
  const auto base = predict(pipe.grid.cubes);

  for (int64_t k = 0; k < pipe.plan.num_targets(); ++k) {
    const int32_t pos =
        pipe.plan.target_order_pos[static_cast<size_t>(pipe.plan.target_begin(k))];
    std::vector<float> perturbed = pipe.grid.cubes;
    // scramble every cube of every cluster at order position >= pos
    for (size_t ki = 0; ki < pipe.plan.kept_cluster_ids.size(); ++ki) {
      if (static_cast<int32_t>(ki + 1) < pos) continue;
      for (int32_t tok : partition[static_cast<size_t>(pipe.plan.kept_cluster_ids[ki])])
        for (int64_t j = 0; j < pipe.grid.cube_dim; ++j)
          perturbed[static_cast<size_t>(int64_t(tok) * pipe.grid.cube_dim + j)] =
              0.31f + 0.37f * static_cast<float>(j % 3);
    }
    const auto got = predict(perturbed);
    const int64_t cd = cfg.cube_dim;
    for (int64_t r = pipe.plan.target_begin(k); r < pipe.plan.target_end(k); ++r)
      for (int64_t j = 0; j < cd; ++j)
        CHECK(got[static_cast<size_t>(r * cd + j)] == base[static_cast<size_t>(r * cd + j)]);
  }
}

TEST_CASE("loss is zero for exact predictions and matches the closed form for zeros") {
  const TrainConfig tc = arvtest::desk_config();
  const auto pipe = desk_pipe<double>(41);
  Tape<double> tape;

  // exact fit
  std::vector<double> exact;
  for (int32_t tok : pipe.plan.target_tokens) {
    const double* row = pipe.targets.row(tok);
    exact.insert(exact.end(), row, row + pipe.targets.cube_dim);
  }
  ValueId pred = tape.leaf({pipe.plan.dec_len(), pipe.targets.cube_dim}, exact, false);
  CHECK(tape.value(pretrain_loss(tape, pred, pipe.targets, pipe.plan))[0] == 0.0);

  // zero predictions: mean over rows of var/(var + eps), from the raw cubes
  double expect = 0.0;
  for (int32_t tok : pipe.plan.target_tokens) {
    const double* raw = pipe.grid.cube(tok);
    double mean = 0.0, var = 0.0;
    for (int32_t j = 0; j < pipe.grid.cube_dim; ++j) mean += raw[j];
    mean /= pipe.grid.cube_dim;
    for (int32_t j = 0; j < pipe.grid.cube_dim; ++j) var += (raw[j] - mean) * (raw[j] - mean);
    var /= pipe.grid.cube_dim;
    expect += var / (var + tc.target_eps);
  }
  expect /= static_cast<double>(pipe.plan.dec_len());
  ValueId zeros = tape.leaf({pipe.plan.dec_len(), pipe.targets.cube_dim},
                            std::vector<double>(static_cast<size_t>(pipe.plan.dec_len() *
                                                                    pipe.targets.cube_dim),
                                                0.0),
                            false);
  const double loss = tape.value(pretrain_loss(tape, zeros, pipe.targets, pipe.plan))[0];
  CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("zero-predictor loss on a fully random video is about one") {
  TrainConfig tc = arvtest::desk_config();
  VideoTensor v;
  v.t_frames = tc.frames;
  v.height = tc.height;
  v.width = tc.width;
  v.channels = tc.channels;
  v.data.resize(static_cast<size_t>(v.numel()));
  Rng rng(55);
  for (float& x : v.data) x = static_cast<float>(rng.uniform01());
  const auto pipe = build_sample_pipeline<double>(tc, v, 3);
  Tape<double> tape;
  ValueId zeros = tape.leaf({pipe.plan.dec_len(), pipe.targets.cube_dim},
                            std::vector<double>(static_cast<size_t>(pipe.plan.dec_len() *
                                                                    pipe.targets.cube_dim),
                                                0.0),
                            false);
  const double loss = tape.value(pretrain_loss(tape, zeros, pipe.targets, pipe.plan))[0];
  CHECK(loss == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("loss is invariant to target storage order") {
  const auto pipe = desk_pipe<double>(47);
  Rng rng(1);
  std::vector<double> pred(static_cast<size_t>(pipe.plan.dec_len() * pipe.targets.cube_dim));
  for (double& x : pred) x = rng.uniform01();

  Tape<double> tape;
  ValueId p1 = tape.leaf({pipe.plan.dec_len(), pipe.targets.cube_dim}, pred, false);
  const double a = tape.value(pretrain_loss(tape, p1, pipe.targets, pipe.plan))[0];

  // permute whole target-cluster blocks along with their predictions
  LayoutPlan shuffled = pipe.plan;
  std::vector<int64_t> order(static_cast<size_t>(pipe.plan.num_targets()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(order.size() - 1 - i);
  shuffled.target_tokens.clear();
  std::vector<double> pred2;
  for (int64_t k : order) {
    for (int64_t r = pipe.plan.target_begin(k); r < pipe.plan.target_end(k); ++r) {
      shuffled.target_tokens.push_back(pipe.plan.target_tokens[static_cast<size_t>(r)]);
      const double* row = pred.data() + r * pipe.targets.cube_dim;
      pred2.insert(pred2.end(), row, row + pipe.targets.cube_dim);
    }
  }
  ValueId p2 = tape.leaf({pipe.plan.dec_len(), pipe.targets.cube_dim}, pred2, false);
  const double b = tape.value(pretrain_loss(tape, p2, pipe.targets, shuffled))[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("zero classifier head gives identical logits (uniform scores)") {
  ModelConfig cfg = desk_model_config();
  cfg.num_classes = 8;
  Rng rng(61);
  ModelParams<double> params = init_params<double>(cfg, rng);
  std::fill(params.at("cls.w").data.begin(), params.at("cls.w").data.end(), 0.0);
  const auto pipe = desk_pipe<double>(49);
  Tape<double> tape;
  ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
  const TokenGridDims dims{pipe.grid.n_t, pipe.grid.n_h, pipe.grid.n_w};
  ValueId logits = downstream_forward(tape, w, params, cfg, dims, grid_leaf);
  for (double x : tape.value(logits)) CHECK(x == 0.0);
}

TEST_CASE("downstream logits do not depend on other samples in the run") {
  ModelConfig cfg = desk_model_config();
  cfg.num_classes = 8;
  Rng rng(91);
  const ModelParams<float> params = init_params<float>(cfg, rng);
  const TrainConfig tc = arvtest::desk_config();
  auto logits_of = [&](int64_t index) {
    const LabeledVideo lv = generate_moving_shape(tc.motion_spec(), index);
    const TokenGrid<float> grid = cubify<float>(lv.video, tc.cube_spec());
    Tape<float> tape;
    ParamsOnTape<float> w = put_params_on_tape(tape, params, false);
    ValueId gl = put_grid_on_tape(tape, grid);
    const TokenGridDims dims{grid.n_t, grid.n_h, grid.n_w};
    return tape.value(downstream_forward(tape, w, params, cfg, dims, gl));
  };
  const auto alone = logits_of(2);
  logits_of(0);  // a different sample in between
  logits_of(1);
  const auto again = logits_of(2);
  CHECK(alone == again);
}

TEST_CASE("attention records have stochastic rows with masked zeros") {
  const ModelConfig cfg = desk_model_config();
  const ModelParams<float> params = desk_params<float>(71);
  const auto pipe = desk_pipe<float>(53);
  Tape<float> tape;
  ParamsOnTape<float> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
  AttentionRecord<float> rec;
  encode(tape, w, params, cfg, pipe.plan, grid_leaf, &rec);
  REQUIRE(rec.layers.size() == static_cast<size_t>(cfg.enc_depth));
  for (const auto& layer : rec.layers) {
    REQUIRE(layer.heads == cfg.num_heads);
    for (int64_t h = 0; h < layer.heads; ++h)
      for (int64_t r = 0; r < layer.q; ++r) {
        double sum = 0.0;
        for (int64_t c = 0; c < layer.kv; ++c) {
          const float p = layer.probs[static_cast<size_t>((h * layer.q + r) * layer.kv + c)];
          if (!pipe.plan.enc_mask.at(r, c)) CHECK(p == 0.0f);
          sum += p;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-5);
      }
  }
}

TEST_CASE("rank report: identity layers rank n, uniform layers rank 1") {
  AttentionRecord<double> rec;
  rec.layers.resize(2);
  const int64_t n = 8;
  rec.layers[0].heads = 2;
  rec.layers[0].q = n;
  rec.layers[0].kv = n;
  rec.layers[0].probs.assign(static_cast<size_t>(2 * n * n), 0.0);
  for (int64_t h = 0; h < 2; ++h)
    for (int64_t i = 0; i < n; ++i)
      rec.layers[0].probs[static_cast<size_t>((h * n + i) * n + i)] = 1.0;
  rec.layers[1].heads = 2;
  rec.layers[1].q = n;
  rec.layers[1].kv = n;
  rec.layers[1].probs.assign(static_cast<size_t>(2 * n * n), 1.0 / n);

  const auto report = attention_rank_report(std::vector<AttentionRecord<double>>{rec}, 1e3);
  REQUIRE(report.size() == 2);
  CHECK(report[0].mean_rank == doctest::Approx(8.0));
  CHECK(report[0].min_rank == 8);
  CHECK(report[1].mean_rank == doctest::Approx(1.0));
  CHECK(report[1].max_rank == 1);
}

TEST_CASE("parallel masked pass equals the sequential no-mask reference") {
  const TrainConfig tc = arvtest::desk_config();
  const ModelConfig cfg = desk_model_config();
  const ModelParams<double> params = desk_params<double>(83);
  const LabeledVideo lv = generate_moving_shape(tc.motion_spec(), 2);
  const auto pipe = build_sample_pipeline<double>(tc, lv.video, 59);

  Tape<double> tape;
  ParamsOnTape<double> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid);
  ValueId enc = encode(tape, w, params, cfg, pipe.plan, grid_leaf);
  ValueId pred = decode_predict(tape, w, params, cfg, pipe.plan, enc);

  const auto enc_oracle = arvtest::ref::sequential_encode(params, cfg, pipe.plan, pipe.grid.cubes);
  CHECK(arvtest::max_rel_diff(tape.value(enc), enc_oracle) < 1e-10);

  const auto& pv = tape.value(pred);
  const int64_t cd = cfg.cube_dim;
  for (int64_t k = 0; k < pipe.plan.num_targets(); ++k) {
    const auto target = arvtest::ref::sequential_decode_target(params, cfg, pipe.plan, enc_oracle, k);
    std::vector<double> parallel(pv.begin() + pipe.plan.target_begin(k) * cd,
                                 pv.begin() + pipe.plan.target_end(k) * cd);
    CHECK(arvtest::max_rel_diff(parallel, target) < 1e-10);
  }
}
