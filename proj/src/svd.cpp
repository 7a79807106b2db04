#include "arv/svd.hpp"

#include <algorithm>
#include <cmath>

namespace arv {

std::vector<double> singular_values(const double* a, int64_t m, int64_t n) {
  // Work on columns; transpose if needed so rows >= cols.
  int64_t rows = m, cols = n;
  std::vector<double> w;
  if (m >= n) {
    w.assign(a, a + m * n);
  } else {
    rows = n;
    cols = m;
    w.resize(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) w[static_cast<size_t>(j * m + i)] = a[i * n + j];
  }
  auto col_dot = [&](int64_t i, int64_t j) {
    double s = 0.0;
    for (int64_t r = 0; r < rows; ++r)
      s += w[static_cast<size_t>(r * cols + i)] * w[static_cast<size_t>(r * cols + j)];
    return s;
  };

  const double tol = 1e-14;
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (int64_t i = 0; i < cols - 1; ++i) {
      for (int64_t j = i + 1; j < cols; ++j) {
        const double app = col_dot(i, i);
        const double aqq = col_dot(j, j);
        const double apq = col_dot(i, j);
        if (std::fabs(apq) <= tol * std::sqrt(app * aqq) || app * aqq == 0.0) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int64_t r = 0; r < rows; ++r) {
          double& wi = w[static_cast<size_t>(r * cols + i)];
          double& wj = w[static_cast<size_t>(r * cols + j)];
          const double vi = wi, vj = wj;
          wi = c * vi - s * vj;
          wj = s * vi + c * vj;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(static_cast<size_t>(cols));
  for (int64_t j = 0; j < cols; ++j) sigma[static_cast<size_t>(j)] = std::sqrt(col_dot(j, j));
  std::sort(sigma.begin(), sigma.end(), std::greater<double>());
  return sigma;
}

int64_t numerical_rank(const std::vector<double>& sigma, double rel_tol) {
  if (sigma.empty()) return 0;
  const double cutoff = rel_tol * sigma.front();
  int64_t rank = 0;
  for (double s : sigma)
    if (s > cutoff) ++rank;
  return rank;
}

double rank_rel_tol(int64_t m, int64_t n, double machine_eps, double factor) {
  return static_cast<double>(std::max(m, n)) * machine_eps * factor;
}

}  // namespace arv
