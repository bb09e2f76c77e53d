// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace liveupdate::lowrank {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Thin factors of G ~= U diag(sigma) V^T. sigma is non-negative and sorted
// descending; U (n x k) and V (d x k) have orthonormal columns.
struct SvdResult {
  Matrix u;
  Vector sigma;
  Matrix v;

  Matrix reconstruct() const;
};

// Best rank-k approximation of g in Frobenius norm, computed by one-sided
// (Hestenes) Jacobi rotations. Deterministic. Throws std::invalid_argument if
// k is outside [1, min(n, d)] or g has non-finite entries.
SvdResult truncated_svd(const Matrix& g, std::size_t k);

// Every singular triplet: k = min(n, d).
SvdResult full_svd(const Matrix& g);

// PCA eigenvalues of an uncentered gradient snapshot, lambda_j = sigma_j^2,
// padded with zeros to length d and sorted descending.
struct Spectrum {
  std::vector<double> eigenvalues;

  double total() const;
  std::size_t size() const { return eigenvalues.size(); }
};

Spectrum spectrum_of(const Matrix& g);

struct RankSelection {
  std::size_t rank = 1;
  // Set when the spectrum carried no energy; rank is then 1.
  bool degenerate = false;
};

// Smallest k whose leading eigenvalues hold at least `alpha` of the total.
// Throws std::invalid_argument for alpha outside (0, 1] or an empty spectrum.
RankSelection select_rank(const Spectrum& spectrum, double alpha);

struct Factors {
  Matrix a;  // m x k_new
  Matrix b;  // k_new x d
};

// Re-expresses A B (A: m x k active rows, B: k x d) at rank k_new. Growing
// zero-pads and keeps the product exactly; shrinking returns the best
// rank-k_new approximation of A B via a thin QR of A and an SVD of R B.
Factors recompact(const Matrix& a_active, const Matrix& b, std::size_t k_new);

// Leading right singular vectors (d x min(k_new, rank bound)) of A B, the
// subspace a shrinking recompaction projects onto.
Matrix dominant_right_subspace(const Matrix& a_active, const Matrix& b,
                               std::size_t k_new);

// `count` random unit rows (count x d) orthogonal to each other and to the
// columns of `basis` (d x m, orthonormal). Requires m + count <= d.
Matrix orthonormal_complement_rows(const Matrix& basis, std::size_t count, std::size_t dim,
                                   std::mt19937_64& rng);

// ||g - approx||_F^2.
double residual_energy(const Matrix& g, const Matrix& approx);

}  // namespace liveupdate::lowrank
