// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <Eigen/SVD>

#include "doctest.h"
#include "liveupdate/lowrank.hpp"

using namespace liveupdate::lowrank;

namespace {

Matrix gaussian(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("singular values agree with Eigen's SVD") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix g = gaussian(40, 12, seed);
    const auto ours = full_svd(g);
    const Eigen::JacobiSVD<Matrix> ref(g);
    REQUIRE(ours.sigma.size() == ref.singularValues().size());
    for (Eigen::Index j = 0; j < ours.sigma.size(); ++j) {
      CHECK(ours.sigma(j) == doctest::Approx(ref.singularValues()(j)).epsilon(1e-10));
    }
    CHECK((ours.u.transpose() * ours.u - Matrix::Identity(12, 12)).norm() < 1e-10);
    CHECK((ours.v.transpose() * ours.v - Matrix::Identity(12, 12)).norm() < 1e-10);
    CHECK((ours.reconstruct() - g).norm() < 1e-10 * g.norm());
  }
}

TEST_CASE("truncated residual equals the tail energy") {
  const Matrix g = gaussian(30, 10, 11);
  const Eigen::BDCSVD<Matrix> ref(g);
  for (std::size_t k = 1; k <= 10; ++k) {
    const auto t = truncated_svd(g, k);
    double tail = 0.0;
    for (Eigen::Index j = static_cast<Eigen::Index>(k); j < 10; ++j) {
      tail += ref.singularValues()(j) * ref.singularValues()(j);
    }
    CHECK(residual_energy(g, t.reconstruct()) == doctest::Approx(tail).epsilon(1e-9).scale(1.0));
  }
  CHECK_THROWS_AS(truncated_svd(g, 0), std::invalid_argument);
  CHECK_THROWS_AS(truncated_svd(g, 11), std::invalid_argument);
}

TEST_CASE("rank-deficient input") {
  const Matrix a = gaussian(20, 2, 3);
  const Matrix b = gaussian(2, 8, 4);
  const auto s = full_svd(a * b);
  CHECK(s.sigma(1) > 1e-6);
  CHECK(s.sigma(2) < 1e-10);
}

TEST_CASE("select_rank on hand spectra") {
  // cumulative shares 0.5, 0.8, 0.9, 1.0
  Spectrum s{{5, 3, 1, 1}};
  CHECK(select_rank(s, 0.8).rank == 2);
  CHECK(select_rank(s, 0.81).rank == 3);
  CHECK(select_rank(s, 0.5).rank == 1);
  CHECK(select_rank(s, 1.0).rank == 4);
  Spectrum zero{{0, 0, 0}};
  CHECK(select_rank(zero, 0.8).degenerate);
  CHECK(select_rank(zero, 0.8).rank == 1);
  CHECK_THROWS_AS(select_rank(s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(select_rank(s, 1.5), std::invalid_argument);
}

TEST_CASE("spectrum_of pads to d and squares singular values") {
  Matrix g = Matrix::Zero(2, 4);
  g(0, 0) = 3;
  g(1, 1) = 2;
  const auto s = spectrum_of(g);
  REQUIRE(s.size() == 4);
  CHECK(s.eigenvalues[0] == doctest::Approx(9));
  CHECK(s.eigenvalues[1] == doctest::Approx(4));
  CHECK(s.eigenvalues[3] == doctest::Approx(0));
  CHECK(s.total() == doctest::Approx(13));
}

TEST_CASE("recompact growth keeps the product, shrink gives the best fit") {
  const Matrix a = gaussian(25, 4, 5);
  const Matrix b = gaussian(4, 16, 6);
  const auto grown = recompact(a, b, 6);
  CHECK(grown.a.cols() == 6);
  CHECK((grown.a * grown.b - a * b).norm() < 1e-12);

  const auto shrunk = recompact(a, b, 2);
  const Eigen::BDCSVD<Matrix> ref(a * b);
  const double tail = ref.singularValues().tail(ref.singularValues().size() - 2).squaredNorm();
  CHECK(residual_energy(a * b, shrunk.a * shrunk.b) == doctest::Approx(tail).epsilon(1e-9));

  const Matrix v = dominant_right_subspace(a, b, 2);
  CHECK((v.transpose() * v - Matrix::Identity(2, 2)).norm() < 1e-10);
}

TEST_CASE("complement rows are orthonormal and orthogonal to the basis") {
  std::mt19937_64 rng(9);
  const Matrix basis = Eigen::HouseholderQR<Matrix>(gaussian(8, 3, 10)).householderQ() * Matrix::Identity(8, 3);
  const Matrix rows = orthonormal_complement_rows(basis, 4, 8, rng);
  CHECK((rows * rows.transpose() - Matrix::Identity(4, 4)).norm() < 1e-12);
  CHECK((rows * basis).norm() < 1e-12);
  CHECK_THROWS_AS(orthonormal_complement_rows(basis, 6, 8, rng), std::invalid_argument);
}
