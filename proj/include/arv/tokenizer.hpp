#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "arv/common.hpp"
#include "arv/videodata.hpp"

namespace arv {

// Non-overlapping cube extents in (frames, pixel rows, pixel cols).
struct CubeSpec {
  int32_t p_t = 2;
  int32_t p_h = 8;
  int32_t p_w = 8;
};

// Flattened cube vectors on the token grid. Token (t, h, w) is stored
// row-major; within a cube the flatten order is (frame, row, col, channel).
template <typename T>
struct TokenGrid {
  int32_t n_t = 0, n_h = 0, n_w = 0;
  int32_t cube_dim = 0;
  std::vector<T> cubes;  // n_tokens() x cube_dim, row-major

  int64_t n_tokens() const { return int64_t(n_t) * n_h * n_w; }
  int64_t token_index(int32_t t, int32_t h, int32_t w) const {
    return (int64_t(t) * n_h + h) * n_w + w;
  }
  T* cube(int64_t token) { return cubes.data() + token * cube_dim; }
  const T* cube(int64_t token) const { return cubes.data() + token * cube_dim; }
};

// Per-token standardized regression targets plus the statistics used.
template <typename T>
struct CubeTargets {
  int64_t n_tokens = 0;
  int32_t cube_dim = 0;
  std::vector<T> values;  // n_tokens x cube_dim
  std::vector<T> means;   // n_tokens
  std::vector<T> stds;    // n_tokens, sqrt(var + eps)

  const T* row(int64_t token) const { return values.data() + token * cube_dim; }
};

template <typename T>
TokenGrid<T> cubify(const VideoTensor& v, const CubeSpec& spec) {
  if (spec.p_t < 1 || spec.p_h < 1 || spec.p_w < 1)
    throw config_error("CubeSpec extents must be >= 1");
  if (v.t_frames % spec.p_t != 0)
    throw config_error(cat("cubify: t_frames ", v.t_frames, " not divisible by p_t ", spec.p_t));
  if (v.height % spec.p_h != 0)
    throw config_error(cat("cubify: height ", v.height, " not divisible by p_h ", spec.p_h));
  if (v.width % spec.p_w != 0)
    throw config_error(cat("cubify: width ", v.width, " not divisible by p_w ", spec.p_w));

  TokenGrid<T> g;
  g.n_t = v.t_frames / spec.p_t;
  g.n_h = v.height / spec.p_h;
  g.n_w = v.width / spec.p_w;
  g.cube_dim = spec.p_t * spec.p_h * spec.p_w * v.channels;
  g.cubes.resize(static_cast<size_t>(g.n_tokens()) * g.cube_dim);

  for (int32_t ti = 0; ti < g.n_t; ++ti)
    for (int32_t hi = 0; hi < g.n_h; ++hi)
      for (int32_t wi = 0; wi < g.n_w; ++wi) {
        T* dst = g.cube(g.token_index(ti, hi, wi));
        for (int32_t ft = 0; ft < spec.p_t; ++ft)
          for (int32_t r = 0; r < spec.p_h; ++r)
            for (int32_t cc = 0; cc < spec.p_w; ++cc)
              for (int32_t ch = 0; ch < v.channels; ++ch)
                *dst++ = static_cast<T>(
                    v.at(ti * spec.p_t + ft, hi * spec.p_h + r, wi * spec.p_w + cc, ch));
      }
  return g;
}

template <typename T>
VideoTensor uncubify(const TokenGrid<T>& g, const CubeSpec& spec) {
  const int64_t per_cube = int64_t(spec.p_t) * spec.p_h * spec.p_w;
  if (per_cube <= 0 || g.cube_dim % per_cube != 0)
    throw contract_error("uncubify: cube_dim inconsistent with CubeSpec");
  const int32_t channels = static_cast<int32_t>(g.cube_dim / per_cube);

  VideoTensor v;
  v.t_frames = g.n_t * spec.p_t;
  v.height = g.n_h * spec.p_h;
  v.width = g.n_w * spec.p_w;
  v.channels = channels;
  v.data.resize(static_cast<size_t>(v.numel()));

  for (int32_t ti = 0; ti < g.n_t; ++ti)
    for (int32_t hi = 0; hi < g.n_h; ++hi)
      for (int32_t wi = 0; wi < g.n_w; ++wi) {
        const T* src = g.cube(g.token_index(ti, hi, wi));
        for (int32_t ft = 0; ft < spec.p_t; ++ft)
          for (int32_t r = 0; r < spec.p_h; ++r)
            for (int32_t cc = 0; cc < spec.p_w; ++cc)
              for (int32_t ch = 0; ch < channels; ++ch)
                v.at(ti * spec.p_t + ft, hi * spec.p_h + r, wi * spec.p_w + cc, ch) =
                    static_cast<float>(*src++);
      }
  return v;
}

// Standardize each cube vector: y -> (y - mean(y)) / sqrt(var(y) + eps),
// population variance. eps guards zero-variance cubes, whose targets come
// out exactly zero.
template <typename T>
CubeTargets<T> normalize_targets(const TokenGrid<T>& g, double eps = 1e-6) {
  if (!(eps > 0.0)) throw config_error("normalize_targets: eps must be > 0");
  CubeTargets<T> t;
  t.n_tokens = g.n_tokens();
  t.cube_dim = g.cube_dim;
  t.values.resize(g.cubes.size());
  t.means.resize(static_cast<size_t>(t.n_tokens));
  t.stds.resize(static_cast<size_t>(t.n_tokens));

  const int32_t d = g.cube_dim;
  for (int64_t i = 0; i < t.n_tokens; ++i) {
    const T* y = g.cube(i);
    bool constant = true;
    for (int32_t j = 1; j < d && constant; ++j) constant = y[j] == y[0];
    if (constant) {
      // Zero-variance cube: targets are exactly zero.
      t.means[static_cast<size_t>(i)] = y[0];
      t.stds[static_cast<size_t>(i)] = static_cast<T>(std::sqrt(eps));
      std::fill_n(t.values.data() + i * d, d, T(0));
      continue;
    }
    double mean = 0.0;
    for (int32_t j = 0; j < d; ++j) mean += static_cast<double>(y[j]);
    mean /= d;
    double var = 0.0;
    for (int32_t j = 0; j < d; ++j) {
      const double dj = static_cast<double>(y[j]) - mean;
      var += dj * dj;
    }
    var /= d;
    const double sd = std::sqrt(var + eps);
    t.means[static_cast<size_t>(i)] = static_cast<T>(mean);
    t.stds[static_cast<size_t>(i)] = static_cast<T>(sd);
    T* out = t.values.data() + i * d;
    for (int32_t j = 0; j < d; ++j)
      out[j] = static_cast<T>((static_cast<double>(y[j]) - mean) / sd);
  }
  return t;
}

// Raw (unnormalized) targets, for the normalize_targets=off configuration.
template <typename T>
CubeTargets<T> raw_targets(const TokenGrid<T>& g) {
  CubeTargets<T> t;
  t.n_tokens = g.n_tokens();
  t.cube_dim = g.cube_dim;
  t.values = g.cubes;
  t.means.assign(static_cast<size_t>(t.n_tokens), T(0));
  t.stds.assign(static_cast<size_t>(t.n_tokens), T(1));
  return t;
}

}  // namespace arv
