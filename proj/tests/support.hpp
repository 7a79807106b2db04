#pragma once

// Test-only reference implementations. The sequential encoder/decoder below
// re-derives per-prefix predictions with physical slicing and no masks
// anywhere, using raw loops rather than the tape. It is the independent
// route against which the parallel masked pass is checked.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "arv/config.hpp"
#include "arv/model.hpp"
#include "arv/pipeline.hpp"

namespace arvtest {

inline arv::TrainConfig desk_config() {
  arv::TrainConfig cfg;  // struct defaults are the desk reference values
  cfg.seed = 42;
  return cfg;
}

namespace ref {

using arv::ModelConfig;
using arv::ModelParams;

// y[i] = x[i] . W + b, accumulating in T with the same loop order as the
// production gemm (k-major inner accumulation).
template <typename T>
std::vector<T> linear_rows(const std::vector<T>& x, int64_t rows, int64_t in_dim,
                           const std::vector<T>& w, const std::vector<T>& b, int64_t out_dim) {
  std::vector<T> y(static_cast<size_t>(rows * out_dim), T(0));
  for (int64_t i = 0; i < rows; ++i) {
    T* yr = y.data() + i * out_dim;
    const T* xr = x.data() + i * in_dim;
    for (int64_t p = 0; p < in_dim; ++p) {
      const T xv = xr[p];
      const T* wr = w.data() + p * out_dim;
      for (int64_t j = 0; j < out_dim; ++j) yr[j] += xv * wr[j];
    }
    for (int64_t j = 0; j < out_dim; ++j) yr[j] += b[static_cast<size_t>(j)];
  }
  return y;
}

template <typename T>
std::vector<T> layernorm_rows(const std::vector<T>& x, int64_t rows, int64_t d,
                              const std::vector<T>& gamma, const std::vector<T>& beta,
                              double eps) {
  std::vector<T> y(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double dj = static_cast<double>(row[j]) - mean;
      var += dj * dj;
    }
    var /= static_cast<double>(d);
    const double isd = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) {
      const T xh = static_cast<T>((static_cast<double>(row[j]) - mean) * isd);
      y[static_cast<size_t>(r * d + j)] =
          gamma[static_cast<size_t>(j)] * xh + beta[static_cast<size_t>(j)];
    }
  }
  return y;
}

template <typename T>
void gelu_rows(std::vector<T>& x) {
  for (T& v : x) v = static_cast<T>(arv::ad_detail::gelu_fwd(static_cast<double>(v)));
}

// Full (unmasked) multi-head attention of q_in rows over kv_in rows.
template <typename T>
std::vector<T> mha_full(const ModelParams<T>& p, const std::string& prefix, int64_t dim,
                        int64_t heads, const std::vector<T>& q_in, int64_t nq,
                        const std::vector<T>& kv_in, int64_t nk) {
  const int64_t dh = dim / heads;
  const auto& wq = p.at(prefix + ".wq").data;
  const auto& bq = p.at(prefix + ".bq").data;
  const auto& wk = p.at(prefix + ".wk").data;
  const auto& bk = p.at(prefix + ".bk").data;
  const auto& wv = p.at(prefix + ".wv").data;
  const auto& bv = p.at(prefix + ".bv").data;
  const auto& wo = p.at(prefix + ".wo").data;
  const auto& bo = p.at(prefix + ".bo").data;

  const std::vector<T> q = linear_rows(q_in, nq, dim, wq, bq, dim);
  const std::vector<T> k = linear_rows(kv_in, nk, dim, wk, bk, dim);
  const std::vector<T> v = linear_rows(kv_in, nk, dim, wv, bv, dim);

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<T> ctx(static_cast<size_t>(nq * dim), T(0));
  std::vector<T> scores(static_cast<size_t>(nk));
  for (int64_t h = 0; h < heads; ++h) {
    const int64_t off = h * dh;
    for (int64_t i = 0; i < nq; ++i) {
      for (int64_t j = 0; j < nk; ++j) {
        T acc = T(0);
        const T* qr = q.data() + i * dim + off;
        const T* kr = k.data() + j * dim + off;
        for (int64_t t = 0; t < dh; ++t) acc += qr[t] * kr[t];
        scores[static_cast<size_t>(j)] = static_cast<T>(acc * inv_sqrt);
      }
      // softmax, mirroring the production rounding: exp in double, stored as
      // T, denominator accumulated from the double values
      double maxv = -1e300;
      for (int64_t j = 0; j < nk; ++j)
        maxv = std::max(maxv, static_cast<double>(scores[static_cast<size_t>(j)]));
      double denom = 0.0;
      std::vector<T> prob(static_cast<size_t>(nk));
      for (int64_t j = 0; j < nk; ++j) {
        const double e = std::exp(static_cast<double>(scores[static_cast<size_t>(j)]) - maxv);
        prob[static_cast<size_t>(j)] = static_cast<T>(e);
        denom += e;
      }
      for (int64_t j = 0; j < nk; ++j)
        prob[static_cast<size_t>(j)] =
            static_cast<T>(static_cast<double>(prob[static_cast<size_t>(j)]) / denom);
      T* cr = ctx.data() + i * dim + off;
      for (int64_t j = 0; j < nk; ++j) {
        const T pj = prob[static_cast<size_t>(j)];
        const T* vr = v.data() + j * dim + off;
        for (int64_t t = 0; t < dh; ++t) cr[t] += pj * vr[t];
      }
    }
  }
  return linear_rows(ctx, nq, dim, wo, bo, dim);
}

template <typename T>
void mlp_rows(const ModelParams<T>& p, const std::string& prefix, int64_t dim, int64_t hidden,
              std::vector<T>& x, int64_t rows) {
  std::vector<T> h =
      linear_rows(x, rows, dim, p.at(prefix + ".w1").data, p.at(prefix + ".b1").data, hidden);
  gelu_rows(h);
  x = linear_rows(h, rows, hidden, p.at(prefix + ".w2").data, p.at(prefix + ".b2").data, dim);
}

template <typename T>
std::vector<T> positional_block(const std::vector<int32_t>& tokens, const arv::TokenGridDims& grid,
                                int32_t dim, const ModelConfig& cfg) {
  return arv::model_detail::positional_rows<T>(tokens, grid, dim, cfg.pos_base,
                                               cfg.positional_embedding);
}

// KV-cache style sequential encoder: clusters are pushed through the stack
// one order position at a time; each layer's queries attend everything
// cached so far with ordinary full attention.
template <typename T>
std::vector<T> sequential_encode(const ModelParams<T>& p, const ModelConfig& cfg,
                                 const arv::LayoutPlan& plan, const std::vector<T>& grid_values) {
  const int64_t d = cfg.embed_dim;
  std::vector<std::vector<T>> cache(static_cast<size_t>(cfg.enc_depth));  // layer inputs so far
  std::vector<T> out;

  for (size_t k = 0; k < plan.visible_tokens.size(); ++k) {
    const auto& vis = plan.visible_tokens[k];
    const int64_t rows = static_cast<int64_t>(vis.size());

    // embed: gather raw cubes, project, add positions
    const int64_t cube_dim = p.at("embed.w").shape[0];
    std::vector<T> gathered(static_cast<size_t>(rows * cube_dim));
    for (int64_t i = 0; i < rows; ++i)
      std::copy_n(grid_values.data() + int64_t(vis[static_cast<size_t>(i)]) * cube_dim, cube_dim,
                  gathered.data() + i * cube_dim);
    std::vector<T> x =
        linear_rows(gathered, rows, cube_dim, p.at("embed.w").data, p.at("embed.b").data, d);
    const std::vector<T> pos = positional_block<T>(vis, plan.grid, cfg.embed_dim, cfg);
    for (size_t i = 0; i < x.size(); ++i) x[i] += pos[i];

    for (int32_t l = 0; l < cfg.enc_depth; ++l) {
      const std::string lp = "enc.l" + std::to_string(l);
      auto& keys_cache = cache[static_cast<size_t>(l)];
      keys_cache.insert(keys_cache.end(), x.begin(), x.end());
      const int64_t nk = static_cast<int64_t>(keys_cache.size()) / d;

      const std::vector<T> hq = layernorm_rows(x, rows, d, p.at(lp + ".ln1.g").data,
                                               p.at(lp + ".ln1.b").data, cfg.ln_eps);
      const std::vector<T> hk = layernorm_rows(keys_cache, nk, d, p.at(lp + ".ln1.g").data,
                                               p.at(lp + ".ln1.b").data, cfg.ln_eps);
      const std::vector<T> attn =
          mha_full(p, lp + ".attn", d, cfg.num_heads, hq, rows, hk, nk);
      for (size_t i = 0; i < x.size(); ++i) x[i] += attn[i];

      std::vector<T> h2 = layernorm_rows(x, rows, d, p.at(lp + ".ln2.g").data,
                                         p.at(lp + ".ln2.b").data, cfg.ln_eps);
      mlp_rows(p, lp + ".mlp", d, cfg.mlp_hidden(cfg.embed_dim), h2, rows);
      for (size_t i = 0; i < x.size(); ++i) x[i] += h2[i];
    }
    out.insert(out.end(), x.begin(), x.end());
  }
  return out;
}

// Decodes one target cluster from the physically sliced prefix (all encoder
// rows of clusters at earlier order positions), no masks.
template <typename T>
std::vector<T> sequential_decode_target(const ModelParams<T>& p, const ModelConfig& cfg,
                                        const arv::LayoutPlan& plan,
                                        const std::vector<T>& enc_out, int64_t target_index) {
  const int64_t d = cfg.embed_dim;
  const int64_t dw = cfg.dec_width;

  // prefix rows: kept clusters with order position < target position
  const int32_t target_pos =
      plan.target_order_pos[static_cast<size_t>(plan.target_begin(target_index))];
  int64_t prefix_rows = 0;
  for (size_t i = 0; i < plan.enc_order_pos.size(); ++i)
    if (plan.enc_order_pos[i] < target_pos) ++prefix_rows;
  // encoder storage is ordered by position, so the prefix is contiguous
  std::vector<T> prefix(enc_out.begin(), enc_out.begin() + prefix_rows * d);
  const std::vector<T> memory = linear_rows(prefix, prefix_rows, d, p.at("dec.inproj.w").data,
                                            p.at("dec.inproj.b").data, dw);

  std::vector<int32_t> toks(
      plan.target_tokens.begin() + plan.target_begin(target_index),
      plan.target_tokens.begin() + plan.target_end(target_index));
  const int64_t rows = static_cast<int64_t>(toks.size());
  std::vector<T> x = positional_block<T>(toks, plan.grid, cfg.dec_width, cfg);
  const auto& query = p.at("dec.query").data;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < dw; ++j) x[static_cast<size_t>(i * dw + j)] += query[static_cast<size_t>(j)];

  for (int32_t l = 0; l < cfg.dec_depth; ++l) {
    const std::string lp = "dec.l" + std::to_string(l);
    const std::vector<T> hq = layernorm_rows(x, rows, dw, p.at(lp + ".lnq.g").data,
                                             p.at(lp + ".lnq.b").data, cfg.ln_eps);
    const std::vector<T> attn =
        mha_full(p, lp + ".cross", dw, cfg.num_heads, hq, rows, memory, prefix_rows);
    for (size_t i = 0; i < x.size(); ++i) x[i] += attn[i];
    std::vector<T> h2 = layernorm_rows(x, rows, dw, p.at(lp + ".ln2.g").data,
                                       p.at(lp + ".ln2.b").data, cfg.ln_eps);
    mlp_rows(p, lp + ".mlp", dw, cfg.mlp_hidden(cfg.dec_width), h2, rows);
    for (size_t i = 0; i < x.size(); ++i) x[i] += h2[i];
  }
  return linear_rows(x, rows, dw, p.at("head.w").data, p.at("head.b").data,
                     p.at("head.w").shape[1]);
}

}  // namespace ref

// Independent singular-value oracle: square roots of the eigenvalues of
// A^T A via a classical two-sided Jacobi eigenvalue sweep. A different
// algorithm and code path from the production one-sided routine.
inline std::vector<double> singular_values_eig_oracle(const std::vector<double>& a, int64_t m,
                                                      int64_t n) {
  std::vector<double> g(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t r = 0; r < m; ++r)
        s += a[static_cast<size_t>(r * n + i)] * a[static_cast<size_t>(r * n + j)];
      g[static_cast<size_t>(i * n + j)] = s;
    }
  auto at = [&](int64_t i, int64_t j) -> double& { return g[static_cast<size_t>(i * n + j)]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-28) break;
    for (int64_t p = 0; p < n - 1; ++p)
      for (int64_t q = p + 1; q < n; ++q) {
        if (std::fabs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int64_t k = 0; k < n; ++k) {
          const double gkp = at(k, p), gkq = at(k, q);
          at(k, p) = c * gkp - s * gkq;
          at(k, q) = s * gkp + c * gkq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double gpk = at(p, k), gqk = at(q, k);
          at(p, k) = c * gpk - s * gqk;
          at(q, k) = s * gpk + c * gqk;
        }
      }
  }
  std::vector<double> sigma(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    sigma[static_cast<size_t>(i)] = std::sqrt(std::max(0.0, at(i, i)));
  std::sort(sigma.begin(), sigma.end(), std::greater<double>());
  return sigma;
}

// Relative max difference between two vectors.
template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    const double denom = std::max({std::fabs(x), std::fabs(y), 1e-12});
    worst = std::max(worst, std::fabs(x - y) / denom);
  }
  return worst;
}

}  // namespace arvtest
