#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arv/checkpoint.hpp"
#include "arv/config.hpp"
#include "arv/layout.hpp"
#include "arv/model.hpp"
#include "arv/rng.hpp"
#include "arv/tokenizer.hpp"
#include "arv/videodata.hpp"

namespace arv {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam with bias correction, one tensor at a time.
// `t` is the 1-based step count.
template <typename T>
void adamw_step(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
                std::vector<T>& v, int64_t t, const AdamHyper& h) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    throw contract_error("adamw_step: size mismatch");
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    double p = static_cast<double>(param[i]);
    p -= h.lr * (mhat / (std::sqrt(vhat) + h.eps) + h.weight_decay * p);
    param[i] = static_cast<T>(p);
  }
}

// Linear warmup to lr, then cosine decay to zero (when enabled). `step` is
// 0-based; the returned rate applies to that step's update.
double lr_at_step(const TrainConfig& cfg, int64_t step);

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

struct VideoCorpus {
  std::vector<LabeledVideo> items;
};

VideoCorpus build_corpus(const MotionTaskSpec& spec, int64_t count);
VideoCorpus load_corpus_dir(const std::string& dir);

// Held-out split rule: index mod 10 == 0 is test.
inline bool is_heldout(int64_t index) { return index % 10 == 0; }

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

struct StepRow {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

std::string metrics_csv(const std::vector<StepRow>& rows);
// Same CSV with the timing column removed (run-to-run comparisons).
std::string strip_seconds_column(const std::string& csv);

struct PretrainOutcome {
  std::vector<StepRow> metrics;
  Checkpoint checkpoint;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Runs cfg.steps optimization steps (or up to halt_step when >= 0), resuming
// from `resume` when given. Deterministic in (cfg, seed, threads-independent).
PretrainOutcome run_pretrain(const TrainConfig& cfg, int64_t halt_step = -1,
                             const Checkpoint* resume = nullptr, int threads = 1);

// ---------------------------------------------------------------------------
// Probing
// ---------------------------------------------------------------------------

enum class ProbeMode { Linear, Full };

struct ProbeResult {
  double accuracy = 0.0;
  int64_t correct = 0;
  int64_t total = 0;
};

// Trains a classifier head on mean-pooled encoder features of the probe
// corpus train split and reports top-1 accuracy on the held-out split.
// Linear mode freezes the encoder (features cached); Full mode first runs
// the linear protocol, folds the head, then fine-tunes everything.
ProbeResult run_probe(const TrainConfig& cfg, const Checkpoint& ckpt, ProbeMode mode);

// Same protocol on a freshly initialized encoder (the random-init baseline).
ProbeResult run_probe_random_init(const TrainConfig& cfg, ProbeMode mode);

// ---------------------------------------------------------------------------
// Gradient checking of the full pretraining loss
// ---------------------------------------------------------------------------

struct GradcheckResult {
  int64_t coords = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Finite-difference check of the full pretraining loss on one fixed sample,
// at 64-bit precision, over `coords` randomly chosen parameters.
GradcheckResult run_gradcheck(const TrainConfig& cfg, int64_t coords, uint64_t seed,
                              double h = 1e-5, double tol = 1e-5);

}  // namespace arv
