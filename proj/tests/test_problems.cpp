#include "dtn/problems.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dtn;

TEST_CASE("catalog coefficients match the problem list") {
  const auto p = catalog("laplace", 32);
  CHECK(p.b(0.3, 0.7) == 0.0);
  CHECK(p.c(0.3, 0.7) == 0.0);
  CHECK(p.d(0.3, 0.7) == 0.0);

  CHECK(catalog("diffconv1", 32).b(0.1, 0.9) == 100.0);
  CHECK(catalog("diffconv2", 32).b(0.1, 0.9) == 1000.0);
  const auto dc3 = catalog("diffconv3", 32);
  CHECK(dc3.b(0.2, 0.3) ==
        doctest::Approx(125.0 * std::cos(4 * std::numbers::pi * 0.3)));
  CHECK(dc3.c(0.2, 0.3) ==
        doctest::Approx(125.0 * std::sin(4 * std::numbers::pi * 0.2)));
  const auto dc4 = catalog("diffconv4", 32);
  CHECK(dc4.b(0.2, 0.3) ==
        doctest::Approx(125.0 * std::cos(4 * std::numbers::pi * 0.2)));
  CHECK(dc4.c(0.2, 0.3) ==
        doctest::Approx(125.0 * std::sin(4 * std::numbers::pi * 0.3)));

  CHECK(catalog("helmholtz1", 32).d(0.5, 0.5) == -100.0);
  CHECK(catalog("helmholtz2", 32).d(0.5, 0.5) == -4005.0);
}

TEST_CASE("helmholtz4 tracks 40 points per wavelength") {
  for (int n : {32, 256}) {
    const double k = 2.0 * std::numbers::pi * n / 40.0;
    CHECK(catalog("helmholtz4", n).d(0.1, 0.1) == doctest::Approx(-k * k));
  }
}

TEST_CASE("helmholtz3 sits 1e-5 above the tenth eigenvalue") {
  const int n = 32;
  const double lambda10 = discrete_eigenvalue_kth(10, n);
  CHECK(catalog("helmholtz3", n).d(0.2, 0.8) ==
        doctest::Approx(-lambda10 + 1e-5));
}

TEST_CASE("random catalog entries are reproducible for a fixed seed") {
  const auto a = link_conductivities(catalog("random1", 16, 5));
  const auto b = link_conductivities(catalog("random1", 16, 5));
  CHECK(a == b);
  for (double v : link_conductivities(catalog("random2", 16, 5))) {
    CHECK(v >= 1.0);
    CHECK(v < 1000.0);
  }
}

TEST_CASE("unknown names are rejected") {
  CHECK_THROWS_AS(catalog("poisson", 16), std::invalid_argument);
}

TEST_CASE("eigenvalue formula matches a dense eigensolve of the Laplacian") {
  for (int n : {5, 9, 17}) {
    const auto op = discretize(catalog("laplace", n));
    const Matrix a = Matrix(op.A);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    // collect the analytic spectrum
    std::vector<double> analytic;
    for (int p = 1; p <= n - 2; ++p) {
      for (int q = 1; q <= n - 2; ++q) {
        analytic.push_back(discrete_eigenvalue(p, q, n));
      }
    }
    std::sort(analytic.begin(), analytic.end());
    for (Index i = 0; i < eig.eigenvalues().size(); ++i) {
      CHECK(std::abs(eig.eigenvalues()(i) - analytic[std::size_t(i)]) <=
            1e-9 * std::abs(analytic[std::size_t(i)]));
    }
    CHECK(discrete_eigenvalue_kth(1, n) == doctest::Approx(analytic.front()));
    if (analytic.size() >= 10) {
      CHECK(discrete_eigenvalue_kth(10, n) == doctest::Approx(analytic[9]));
    } else {
      CHECK_THROWS_AS(discrete_eigenvalue_kth(10, n), std::invalid_argument);
    }
  }
}

TEST_CASE("smallest eigenvalue at n=5 has the closed form value") {
  const double h = 0.25;
  const double expected = (4.0 - 4.0 * std::cos(std::numbers::pi / 4)) / (h * h);
  CHECK(discrete_eigenvalue(1, 1, 5) == doctest::Approx(expected));
}

TEST_CASE("eigenvalue symmetry and range checks") {
  CHECK(discrete_eigenvalue(2, 5, 17) == discrete_eigenvalue(5, 2, 17));
  CHECK_THROWS_AS(discrete_eigenvalue(0, 1, 17), std::invalid_argument);
  CHECK_THROWS_AS(discrete_eigenvalue(1, 16, 17), std::invalid_argument);
}

TEST_CASE("the near-resonant matrix is nearly singular at n=32") {
  const auto op = discretize(catalog("helmholtz3", 32));
  Eigen::BDCSVD<Matrix> svd(Matrix(op.A));
  CHECK(svd.singularValues().tail(1)(0) <= 1e-3);
}

TEST_CASE("every catalog problem assembles finite operators") {
  for (const auto& name : catalog_names()) {
    for (int n : {8, 16, 33}) {
      const auto op = discretize(catalog(name, n, 1));
      CHECK(Matrix(op.A).allFinite());
    }
  }
}
