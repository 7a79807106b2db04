#pragma once

#include <cstdint>
#include <vector>

namespace arv {

// Singular values of a dense row-major m x n matrix, descending, via
// one-sided Jacobi rotations. Double precision regardless of the caller's
// storage type.
std::vector<double> singular_values(const double* a, int64_t m, int64_t n);

// Numerical rank: #{ sigma_i > rel_tol * sigma_max }.
int64_t numerical_rank(const std::vector<double>& sigma, double rel_tol);

// Default rank threshold, relative to sigma_max:
// max(m, n) * machine_eps * factor, with machine_eps of the precision the
// attention maps were computed in.
double rank_rel_tol(int64_t m, int64_t n, double machine_eps, double factor = 1e3);

}  // namespace arv
