// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace liveupdate::lowrank {
namespace {

constexpr double kOrthTol = 1e-15;
constexpr int kMaxSweeps = 80;

void check_finite(const Matrix& g) {
  if (!g.allFinite()) throw std::invalid_argument("matrix has non-finite entries");
}

// Fills columns of `u` flagged in `missing` with unit vectors orthogonal to all
// other columns (classical Gram-Schmidt against the standard basis, twice).
void complete_basis(Matrix& u, const std::vector<bool>& missing) {
  const Eigen::Index n = u.rows();
  Eigen::Index next_basis = 0;
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (!missing[j]) continue;
    for (; next_basis < n; ++next_basis) {
      Vector cand = Vector::Unit(n, next_basis);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index c = 0; c < u.cols(); ++c) {
          if (c == j || (missing[c] && c > j)) continue;
          cand -= u.col(c).dot(cand) * u.col(c);
        }
      }
      const double norm = cand.norm();
      if (norm > 1e-8) {
        u.col(j) = cand / norm;
        ++next_basis;
        break;
      }
    }
  }
}

// Tall case (n >= d): rotate column pairs of W = G V until mutually
// orthogonal; then sigma_j = ||w_j||, u_j = w_j / sigma_j.
SvdResult jacobi_tall(Matrix w) {
  const Eigen::Index n = w.rows();
  const Eigen::Index d = w.cols();
  Matrix v = Matrix::Identity(d, d);

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < d; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= kOrthTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::abs(zeta) > 1e150
                             ? 0.5 / zeta
                             : std::copysign(1.0, zeta) /
                                   (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (Eigen::Index i = 0; i < d; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  Vector norms(d);
  for (Eigen::Index j = 0; j < d; ++j) norms[j] = w.col(j).norm();
  std::vector<Eigen::Index> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return norms[a] > norms[b]; });

  SvdResult out;
  out.u.resize(n, d);
  out.sigma.resize(d);
  out.v.resize(d, d);
  const double floor = (d > 0 ? norms.maxCoeff() : 0.0) * static_cast<double>(n) * 1e-15;
  std::vector<bool> missing(d, false);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Eigen::Index src = order[j];
    out.sigma[j] = norms[src];
    out.v.col(j) = v.col(src);
    if (norms[src] > floor && norms[src] > 0.0) {
      out.u.col(j) = w.col(src) / norms[src];
    } else {
      out.u.col(j).setZero();
      missing[j] = true;
    }
  }
  if (std::find(missing.begin(), missing.end(), true) != missing.end()) {
    complete_basis(out.u, missing);
  }
  return out;
}

}  // namespace

Matrix SvdResult::reconstruct() const {
  return u * sigma.asDiagonal() * v.transpose();
}

SvdResult full_svd(const Matrix& g) {
  check_finite(g);
  if (g.rows() == 0 || g.cols() == 0) throw std::invalid_argument("empty matrix");
  if (g.rows() >= g.cols()) return jacobi_tall(g);
  SvdResult t = jacobi_tall(g.transpose());
  std::swap(t.u, t.v);
  return t;
}

SvdResult truncated_svd(const Matrix& g, std::size_t k) {
  const auto limit = static_cast<std::size_t>(std::min(g.rows(), g.cols()));
  if (k < 1 || k > limit) {
    throw std::invalid_argument("truncated_svd rank " + std::to_string(k) +
                                " outside [1, " + std::to_string(limit) + "]");
  }
  SvdResult full = full_svd(g);
  const auto kk = static_cast<Eigen::Index>(k);
  return SvdResult{full.u.leftCols(kk), full.sigma.head(kk), full.v.leftCols(kk)};
}

double Spectrum::total() const {
  return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
}

Spectrum spectrum_of(const Matrix& g) {
  Spectrum s;
  s.eigenvalues.assign(static_cast<std::size_t>(g.cols()), 0.0);
  if (g.rows() == 0 || g.cols() == 0) return s;
  SvdResult svd = full_svd(g);
  for (Eigen::Index j = 0; j < svd.sigma.size(); ++j) {
    s.eigenvalues[static_cast<std::size_t>(j)] = svd.sigma[j] * svd.sigma[j];
  }
  return s;
}

RankSelection select_rank(const Spectrum& spectrum, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0, 1]");
  if (spectrum.eigenvalues.empty()) throw std::invalid_argument("empty spectrum");
  const double total = spectrum.total();
  if (!(total > 0.0) || !std::isfinite(total)) return RankSelection{1, true};
  // Ratios are compared with a rounding allowance so that scaling the spectrum
  // cannot flip an exact boundary.
  double cumulative = 0.0;
  const std::size_t d = spectrum.eigenvalues.size();
  for (std::size_t k = 0; k < d; ++k) {
    cumulative += spectrum.eigenvalues[k];
    if (cumulative / total >= alpha - 1e-12) return RankSelection{k + 1, false};
  }
  return RankSelection{d, false};
}

Matrix dominant_right_subspace(const Matrix& a_active, const Matrix& b,
                               std::size_t k_new) {
  if (a_active.cols() != b.rows()) throw std::invalid_argument("A and B inner dims differ");
  Matrix m;
  if (a_active.rows() == 0) {
    m = b;
  } else {
    Eigen::HouseholderQR<Matrix> qr(a_active);
    const Eigen::Index p = std::min(a_active.rows(), a_active.cols());
    Matrix r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    m = r * b;
  }
  SvdResult svd = full_svd(m);
  const Eigen::Index kk =
      std::min<Eigen::Index>(static_cast<Eigen::Index>(k_new), svd.v.cols());
  return svd.v.leftCols(kk);
}

Factors recompact(const Matrix& a_active, const Matrix& b, std::size_t k_new) {
  const Eigen::Index k = b.rows();
  const Eigen::Index d = b.cols();
  if (a_active.cols() != k) throw std::invalid_argument("A and B inner dims differ");
  if (k_new < 1 || k_new > static_cast<std::size_t>(d)) {
    throw std::invalid_argument("recompact rank " + std::to_string(k_new) +
                                " outside [1, " + std::to_string(d) + "]");
  }
  check_finite(a_active);
  check_finite(b);
  const auto kn = static_cast<Eigen::Index>(k_new);
  const Eigen::Index m = a_active.rows();

  Factors out;
  out.a = Matrix::Zero(m, kn);
  out.b = Matrix::Zero(kn, d);
  if (kn >= k) {
    out.a.leftCols(k) = a_active;
    out.b.topRows(k) = b;
    return out;
  }
  Matrix v = dominant_right_subspace(a_active, b, k_new);
  const Eigen::Index kk = v.cols();
  out.a.leftCols(kk) = a_active * (b * v);
  out.b.topRows(kk) = v.transpose();
  return out;
}

Matrix orthonormal_complement_rows(const Matrix& basis, std::size_t count, std::size_t dim,
                                   std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(dim);
  if (basis.rows() != d || basis.cols() + static_cast<Eigen::Index>(count) > d) {
    throw std::invalid_argument("complement does not fit in dim");
  }
  Matrix q(d, basis.cols() + static_cast<Eigen::Index>(count));
  q.leftCols(basis.cols()) = basis;
  Eigen::Index filled = basis.cols();
  while (filled < q.cols()) {
    Vector v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = n01(rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index c = 0; c < filled; ++c) v -= q.col(c).dot(v) * q.col(c);
    }
    const double norm = v.norm();
    if (norm < 1e-8) continue;
    q.col(filled++) = v / norm;
  }
  return q.rightCols(static_cast<Eigen::Index>(count)).transpose();
}

double residual_energy(const Matrix& g, const Matrix& approx) {
  return (g - approx).squaredNorm();
}

}  // namespace liveupdate::lowrank
