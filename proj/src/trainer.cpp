#include "arv/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "arv/pipeline.hpp"

namespace arv {

double lr_at_step(const TrainConfig& cfg, int64_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  if (!cfg.cosine_decay) return cfg.lr;
  const int64_t span = cfg.steps - cfg.warmup_steps;
  if (span <= 0) return cfg.lr;
  const double t = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, t)));
}

VideoCorpus build_corpus(const MotionTaskSpec& spec, int64_t count) {
  VideoCorpus c;
  c.items.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) c.items.push_back(generate_moving_shape(spec, i));
  return c;
}

VideoCorpus load_corpus_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  VideoCorpus c;
  const fs::path labels = fs::path(dir) / "labels.csv";
  if (fs::exists(labels)) {
    std::ifstream f(labels);
    if (!f) throw io_error(cat("cannot open ", labels.string()));
    std::string line;
    std::getline(f, line);  // header: index,label,file
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string idx, label, file;
      if (!std::getline(row, idx, ',') || !std::getline(row, label, ',') ||
          !std::getline(row, file))
        throw parse_error(cat("labels.csv: malformed row '", line, "'"));
      LabeledVideo item;
      item.video = read_video_file((fs::path(dir) / file).string());
      item.label = static_cast<int32_t>(std::stol(label));
      c.items.push_back(std::move(item));
    }
  } else {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".arvv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) c.items.push_back({read_video_file(p.string()), -1});
  }
  if (c.items.empty()) throw io_error(cat("no videos found in ", dir));
  return c;
}

std::string metrics_csv(const std::vector<StepRow>& rows) {
  std::ostringstream os;
  os << "step,loss,lr,seconds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.6f\n", static_cast<long long>(r.step),
                  r.loss, r.lr, r.seconds);
    os << buf;
  }
  return os.str();
}

std::string strip_seconds_column(const std::string& csv) {
  std::ostringstream os;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    const size_t last = line.rfind(',');
    os << (last == std::string::npos ? line : line.substr(0, last)) << "\n";
  }
  return os.str();
}

namespace {

constexpr uint64_t kInitTag = 0x1217;

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  int64_t t = 0;
};

template <typename T>
class Pretrainer {
 public:
  explicit Pretrainer(const TrainConfig& cfg, const Checkpoint* resume, int threads)
      : cfg_(cfg), threads_(std::max(1, threads)) {
    cfg_.validate_all();
    mcfg_ = cfg_.model_config();
    if (resume) {
      params_ = decode_params_blob<T>(resume->params_blob);
      ModelParams<T> m = decode_params_blob<T>(resume->adam_m_blob);
      ModelParams<T> v = decode_params_blob<T>(resume->adam_v_blob);
      for (auto& t : m.tensors) opt_.m.push_back(std::move(t.data));
      for (auto& t : v.tensors) opt_.v.push_back(std::move(t.data));
      opt_.t = static_cast<int64_t>(resume->opt_step);
      step_ = static_cast<int64_t>(resume->step);
    } else {
      Rng init_rng = Rng(cfg_.seed).fork(kInitTag);
      params_ = init_params<T>(mcfg_, init_rng);
      for (const auto& t : params_.tensors) {
        opt_.m.emplace_back(t.data.size(), T(0));
        opt_.v.emplace_back(t.data.size(), T(0));
      }
    }
    corpus_ = cfg_.data_dir.empty() ? build_corpus(cfg_.motion_spec(), cfg_.data_count)
                                    : load_corpus_dir(cfg_.data_dir);
  }

  int64_t current_step() const { return step_; }

  StepRow step() {
    const auto t0 = std::chrono::steady_clock::now();
    const int64_t b = cfg_.batch_size;
    const size_t np = params_.tensors.size();

    struct SlotResult {
      double loss = 0.0;
      std::vector<std::vector<T>> grads;
    };
    std::vector<SlotResult> slots(static_cast<size_t>(b));

    auto run_slot = [&](int64_t slot) {
      const int64_t idx =
          (step_ * b + slot) % static_cast<int64_t>(corpus_.items.size());
      const uint64_t lseed = layout_seed_for(cfg_.seed, step_, slot);
      try {
        auto pipe = build_sample_pipeline<T>(cfg_, corpus_.items[static_cast<size_t>(idx)].video,
                                             lseed);
        Tape<T> tape;
        ParamsOnTape<T> w = put_params_on_tape(tape, params_, true);
        ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid, false);
        ValueId loss = build_pretrain_loss(tape, w, params_, mcfg_, pipe, grid_leaf);
        tape.backward(loss);
        SlotResult& r = slots[static_cast<size_t>(slot)];
        r.loss = static_cast<double>(tape.value(loss)[0]);
        r.grads.reserve(np);
        for (size_t pi = 0; pi < np; ++pi) r.grads.push_back(tape.grad(w.ids[pi]));
      } catch (const numeric_error& e) {
        throw numeric_error(cat(e.what(), " (step ", step_, ", sample index ", idx,
                                ", layout seed ", lseed, ")"));
      }
    };

    if (threads_ <= 1 || b == 1) {
      for (int64_t slot = 0; slot < b; ++slot) run_slot(slot);
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr first_error;
      std::mutex err_mu;
      const int nt = std::min<int64_t>(threads_, b);
      for (int ti = 0; ti < nt; ++ti)
        pool.emplace_back([&, ti] {
          for (int64_t slot = ti; slot < b; slot += nt) {
            try {
              run_slot(slot);
            } catch (...) {
              std::lock_guard<std::mutex> lk(err_mu);
              if (!first_error) first_error = std::current_exception();
              return;
            }
          }
        });
      for (auto& th : pool) th.join();
      if (first_error) std::rethrow_exception(first_error);
    }

    // Ordered reduction keeps results identical for any thread count.
    double batch_loss = 0.0;
    std::vector<std::vector<T>> grads(np);
    for (size_t pi = 0; pi < np; ++pi)
      grads[pi].assign(params_.tensors[pi].data.size(), T(0));
    for (int64_t slot = 0; slot < b; ++slot) {
      batch_loss += slots[static_cast<size_t>(slot)].loss;
      for (size_t pi = 0; pi < np; ++pi) {
        const auto& g = slots[static_cast<size_t>(slot)].grads[pi];
        auto& acc = grads[pi];
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
      }
    }
    batch_loss /= static_cast<double>(b);
    const T inv_b = static_cast<T>(1.0 / static_cast<double>(b));
    for (auto& g : grads)
      for (T& x : g) x *= inv_b;

    AdamHyper h;
    h.lr = lr_at_step(cfg_, step_);
    h.beta1 = cfg_.beta1;
    h.beta2 = cfg_.beta2;
    h.eps = cfg_.adam_eps;
    ++opt_.t;
    for (size_t pi = 0; pi < np; ++pi) {
      // Weight decay applies to matrices only, not biases/gains/query.
      h.weight_decay = params_.tensors[pi].shape.size() >= 2 ? cfg_.weight_decay : 0.0;
      adamw_step(params_.tensors[pi].data, grads[pi], opt_.m[pi], opt_.v[pi], opt_.t, h);
    }

    StepRow row;
    row.step = step_;
    row.loss = batch_loss;
    row.lr = h.lr;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++step_;
    return row;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.step = static_cast<uint64_t>(step_);
    c.opt_step = static_cast<uint64_t>(opt_.t);
    c.rng_seed = cfg_.seed;
    c.params_blob = encode_tensor_blob(params_.names, params_.tensors);
    std::vector<TensorData<T>> mt, vt;
    for (size_t i = 0; i < params_.tensors.size(); ++i) {
      mt.push_back({params_.tensors[i].shape, opt_.m[i]});
      vt.push_back({params_.tensors[i].shape, opt_.v[i]});
    }
    c.adam_m_blob = encode_tensor_blob(params_.names, mt);
    c.adam_v_blob = encode_tensor_blob(params_.names, vt);
    return c;
  }

  const ModelParams<T>& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  ModelConfig mcfg_;
  ModelParams<T> params_;
  AdamState<T> opt_;
  VideoCorpus corpus_;
  int64_t step_ = 0;
  int threads_ = 1;
};

template <typename T>
PretrainOutcome run_pretrain_impl(const TrainConfig& cfg, int64_t halt_step,
                                  const Checkpoint* resume, int threads) {
  Pretrainer<T> trainer(cfg, resume, threads);
  const int64_t stop = halt_step >= 0 ? std::min(halt_step, cfg.steps) : cfg.steps;
  PretrainOutcome out;
  while (trainer.current_step() < stop) out.metrics.push_back(trainer.step());
  out.checkpoint = trainer.to_checkpoint();
  if (!out.metrics.empty()) {
    out.initial_loss = out.metrics.front().loss;
    out.final_loss = out.metrics.back().loss;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probe
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> pooled_features(const TrainConfig& cfg, const ModelConfig& mcfg,
                               const ModelParams<T>& params, const VideoTensor& video) {
  TokenGrid<T> grid = cubify<T>(video, cfg.cube_spec());
  Tape<T> tape;
  ParamsOnTape<T> w = put_params_on_tape(tape, params, false);
  ValueId grid_leaf = put_grid_on_tape(tape, grid, false);
  const TokenGridDims dims{grid.n_t, grid.n_h, grid.n_w};
  ValueId enc = encode_full_visibility(tape, w, params, mcfg, dims, grid_leaf);
  const auto& val = tape.value(enc);
  const int64_t n = dims.n_tokens();
  const int64_t d = mcfg.embed_dim;
  std::vector<T> pooled(static_cast<size_t>(d), T(0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) pooled[static_cast<size_t>(j)] += val[i * d + j];
  for (T& x : pooled) x = static_cast<T>(static_cast<double>(x) / static_cast<double>(n));
  return pooled;
}

template <typename T>
int32_t argmax_row(const std::vector<T>& v) {
  int32_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int32_t>(i);
  return best;
}

template <typename T>
ProbeResult probe_impl(const TrainConfig& cfg, ModelParams<T> params, ProbeMode mode) {
  MotionTaskSpec task = cfg.motion_spec();
  task.seed = cfg.probe_seed;
  const VideoCorpus corpus = build_corpus(task, cfg.probe_count);
  ModelConfig mcfg = cfg.model_config();
  const int64_t d = mcfg.embed_dim;
  const int64_t k = cfg.num_directions;

  std::vector<int64_t> train_ids, test_ids;
  for (int64_t i = 0; i < static_cast<int64_t>(corpus.items.size()); ++i)
    (is_heldout(i) ? test_ids : train_ids).push_back(i);

  // Frozen-encoder features for the linear phase.
  std::vector<std::vector<T>> feats(corpus.items.size());
  for (size_t i = 0; i < corpus.items.size(); ++i)
    feats[i] = pooled_features(cfg, mcfg, params, corpus.items[i].video);

  // Standardize by train-split statistics; the trained head is folded back
  // to raw-feature coordinates afterwards.
  std::vector<double> mu(static_cast<size_t>(d), 0.0), sd(static_cast<size_t>(d), 0.0);
  for (int64_t i : train_ids)
    for (int64_t j = 0; j < d; ++j)
      mu[static_cast<size_t>(j)] += static_cast<double>(feats[static_cast<size_t>(i)][static_cast<size_t>(j)]);
  for (double& x : mu) x /= static_cast<double>(train_ids.size());
  for (int64_t i : train_ids)
    for (int64_t j = 0; j < d; ++j) {
      const double dv =
          static_cast<double>(feats[static_cast<size_t>(i)][static_cast<size_t>(j)]) -
          mu[static_cast<size_t>(j)];
      sd[static_cast<size_t>(j)] += dv * dv;
    }
  for (double& x : sd) x = std::sqrt(x / static_cast<double>(train_ids.size()) + 1e-8);

  const int64_t n_train = static_cast<int64_t>(train_ids.size());
  std::vector<T> xhat(static_cast<size_t>(n_train * d));
  std::vector<T> onehot(static_cast<size_t>(n_train * k), T(0));
  for (int64_t r = 0; r < n_train; ++r) {
    const int64_t i = train_ids[static_cast<size_t>(r)];
    for (int64_t j = 0; j < d; ++j)
      xhat[static_cast<size_t>(r * d + j)] = static_cast<T>(
          (static_cast<double>(feats[static_cast<size_t>(i)][static_cast<size_t>(j)]) -
           mu[static_cast<size_t>(j)]) /
          sd[static_cast<size_t>(j)]);
    onehot[static_cast<size_t>(r * k + corpus.items[static_cast<size_t>(i)].label)] = T(1);
  }

  // Linear head, full-batch AdamW on squared error to one-hot targets. The
  // head starts from a small random init (an untrained head then scores at
  // chance level rather than collapsing onto one class).
  std::vector<T> hw(static_cast<size_t>(d * k), T(0));
  std::vector<T> hb(static_cast<size_t>(k), T(0));
  {
    Rng head_rng = Rng(cfg.probe_seed).fork(0xBEAD);
    for (T& x : hw) x = static_cast<T>(head_rng.truncated_normal() * 0.02);
  }
  std::vector<T> mw(hw.size(), T(0)), vw(hw.size(), T(0));
  std::vector<T> mb(hb.size(), T(0)), vb(hb.size(), T(0));
  AdamHyper h;
  h.lr = cfg.probe_lr;
  h.beta1 = cfg.beta1;
  h.beta2 = cfg.beta2;
  h.eps = cfg.adam_eps;
  h.weight_decay = 0.0;
  for (int64_t s = 0; s < cfg.probe_steps; ++s) {
    Tape<T> tape;
    ValueId x = tape.constant({n_train, d}, xhat);
    ValueId wid = tape.leaf({d, k}, hw, true);
    ValueId bid = tape.leaf({k}, hb, true);
    ValueId logits = add(tape, matmul(tape, x, wid), bid);
    ValueId loss = mse(tape, logits, tape.constant({n_train, k}, onehot));
    tape.backward(loss);
    adamw_step(hw, tape.grad(wid), mw, vw, s + 1, h);
    adamw_step(hb, tape.grad(bid), mb, vb, s + 1, h);
  }

  // Fold the standardization into raw-feature head coordinates.
  auto& cls_w = params.at("cls.w").data;
  auto& cls_b = params.at("cls.b").data;
  for (int64_t j = 0; j < k; ++j) {
    double bj = static_cast<double>(hb[static_cast<size_t>(j)]);
    for (int64_t i = 0; i < d; ++i) {
      const double wij = static_cast<double>(hw[static_cast<size_t>(i * k + j)]) /
                         sd[static_cast<size_t>(i)];
      cls_w[static_cast<size_t>(i * k + j)] = static_cast<T>(wij);
      bj -= mu[static_cast<size_t>(i)] * wij;
    }
    cls_b[static_cast<size_t>(j)] = static_cast<T>(bj);
  }

  if (mode == ProbeMode::Full) {
    // Continue end-to-end from the linear solution.
    AdamState<T> opt;
    for (const auto& t : params.tensors) {
      opt.m.emplace_back(t.data.size(), T(0));
      opt.v.emplace_back(t.data.size(), T(0));
    }
    AdamHyper fh = h;
    fh.lr = cfg.finetune_lr;
    const int64_t batch = std::min<int64_t>(16, n_train);
    for (int64_t s = 0; s < cfg.finetune_steps; ++s) {
      std::vector<std::vector<T>> grads(params.tensors.size());
      for (size_t pi = 0; pi < params.tensors.size(); ++pi)
        grads[pi].assign(params.tensors[pi].data.size(), T(0));
      for (int64_t bi = 0; bi < batch; ++bi) {
        const int64_t i = train_ids[static_cast<size_t>((s * batch + bi) % n_train)];
        TokenGrid<T> grid = cubify<T>(corpus.items[static_cast<size_t>(i)].video, cfg.cube_spec());
        Tape<T> tape;
        ParamsOnTape<T> w = put_params_on_tape(tape, params, true);
        ValueId grid_leaf = put_grid_on_tape(tape, grid, false);
        const TokenGridDims dims{grid.n_t, grid.n_h, grid.n_w};
        ValueId logits = downstream_forward(tape, w, params, mcfg, dims, grid_leaf);
        std::vector<T> target(static_cast<size_t>(k), T(0));
        target[static_cast<size_t>(corpus.items[static_cast<size_t>(i)].label)] = T(1);
        ValueId loss = mse(tape, logits, tape.constant({1, k}, target));
        tape.backward(loss);
        for (size_t pi = 0; pi < params.tensors.size(); ++pi) {
          const auto& g = tape.grad(w.ids[pi]);
          for (size_t x = 0; x < g.size(); ++x) grads[pi][x] += g[x];
        }
      }
      const T inv = static_cast<T>(1.0 / static_cast<double>(batch));
      ++opt.t;
      for (size_t pi = 0; pi < params.tensors.size(); ++pi) {
        for (T& x : grads[pi]) x *= inv;
        fh.weight_decay = 0.0;
        adamw_step(params.tensors[pi].data, grads[pi], opt.m[pi], opt.v[pi], opt.t, fh);
      }
    }
  }

  // Held-out evaluation with the folded (or fine-tuned) head.
  ProbeResult res;
  for (int64_t i : test_ids) {
    std::vector<T> f;
    if (mode == ProbeMode::Full)
      f = pooled_features(cfg, mcfg, params, corpus.items[static_cast<size_t>(i)].video);
    else
      f = feats[static_cast<size_t>(i)];
    std::vector<T> logits(static_cast<size_t>(k), T(0));
    for (int64_t j = 0; j < k; ++j) {
      double acc = static_cast<double>(cls_b[static_cast<size_t>(j)]);
      for (int64_t di = 0; di < d; ++di)
        acc += static_cast<double>(f[static_cast<size_t>(di)]) *
               static_cast<double>(cls_w[static_cast<size_t>(di * k + j)]);
      logits[static_cast<size_t>(j)] = static_cast<T>(acc);
    }
    if (argmax_row(logits) == corpus.items[static_cast<size_t>(i)].label) ++res.correct;
    ++res.total;
  }
  res.accuracy = res.total ? static_cast<double>(res.correct) / static_cast<double>(res.total)
                           : 0.0;
  return res;
}

template <typename T>
ModelParams<T> fresh_params(const TrainConfig& cfg) {
  Rng init_rng = Rng(cfg.seed).fork(kInitTag);
  return init_params<T>(cfg.model_config(), init_rng);
}

}  // namespace

PretrainOutcome run_pretrain(const TrainConfig& cfg, int64_t halt_step, const Checkpoint* resume,
                             int threads) {
  if (resume && serialize_config(resume->config) != serialize_config(cfg))
    throw config_error("resume: checkpoint config does not match the requested config");
  return cfg.precision == Precision::F64
             ? run_pretrain_impl<double>(cfg, halt_step, resume, threads)
             : run_pretrain_impl<float>(cfg, halt_step, resume, threads);
}

ProbeResult run_probe(const TrainConfig& cfg, const Checkpoint& ckpt, ProbeMode mode) {
  if (ckpt.config.precision == Precision::F64)
    return probe_impl<double>(cfg, decode_params_blob<double>(ckpt.params_blob), mode);
  return probe_impl<float>(cfg, decode_params_blob<float>(ckpt.params_blob), mode);
}

ProbeResult run_probe_random_init(const TrainConfig& cfg, ProbeMode mode) {
  if (cfg.precision == Precision::F64)
    return probe_impl<double>(cfg, fresh_params<double>(cfg), mode);
  return probe_impl<float>(cfg, fresh_params<float>(cfg), mode);
}

GradcheckResult run_gradcheck(const TrainConfig& cfg, int64_t coords, uint64_t seed, double h,
                              double tol) {
  TrainConfig c = cfg;
  c.precision = Precision::F64;
  c.validate_all();
  const ModelConfig mcfg = c.model_config();
  const LabeledVideo sample = generate_moving_shape(c.motion_spec(), 0);
  const auto pipe = build_sample_pipeline<double>(c, sample.video, layout_seed_for(c.seed, 0, 0));
  ModelParams<double> params = fresh_params<double>(c);

  auto build = [&](Tape<double>& tape, const std::vector<ValueId>& ids) -> ValueId {
    ParamsOnTape<double> w;
    w.ids = ids;
    ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid, false);
    return build_pretrain_loss(tape, w, params, mcfg, pipe, grid_leaf);
  };

  FdOptions opt;
  opt.h = h;
  opt.tol = tol;
  opt.max_coords = coords;
  opt.seed = seed;
  const FdReport rep = finite_diff_check<double>(build, params.tensors, opt);
  return {rep.coords_checked, rep.max_rel_err, rep.pass};
}

}  // namespace arv
