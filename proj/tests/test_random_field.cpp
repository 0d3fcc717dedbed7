// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "hygropc/mesh.hpp"
#include "hygropc/random_field.hpp"

using namespace hygropc;
using namespace hygropc::rf;
using Catch::Approx;

TEST_CASE("gaussian moments of a lognormal", "[rf]") {
  const auto [mu_g, sigma_g] = gaussian_moments(100.0, 20.0);
  CHECK(sigma_g * sigma_g == Approx(0.039220713153281296).epsilon(1e-12));
  CHECK(mu_g == Approx(4.5855598294114507).epsilon(1e-12));

  // degenerate limit sigma_q -> 0
  const auto [mg, sg] = gaussian_moments(100.0, 1e-9);
  CHECK(sg == Approx(0.0).margin(1e-10));
  CHECK(mg == Approx(std::log(100.0)).epsilon(1e-10));

  CHECK_THROWS_AS(gaussian_moments(-1.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_moments(1.0, 0.0), std::invalid_argument);

  // round trip: exp(mu_g + sigma_g^2/2) = mu_q
  const auto spec = LogNormalSpec::from_moments(100.0, 20.0);
  CHECK(std::exp(spec.mu_g + 0.5 * spec.sigma_g * spec.sigma_g) ==
        Approx(100.0).epsilon(1e-12));

  // Monte Carlo: sampled lognormal mean within 3 standard errors
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 100000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = std::exp(spec.mu_g + spec.sigma_g * normal(rng));
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n;
  const double sd = std::sqrt(acc2 / n - mean * mean);
  CHECK(std::abs(mean - 100.0) < 3.0 * sd / std::sqrt(double(n)));
}

TEST_CASE("exponential covariance matrix", "[rf]") {
  const CovarianceKernel kernel{0.1, 0.04};
  CHECK(kernel({0.3, 0.1}, {0.3, 0.1}) == 1.0);
  CHECK(kernel({0.0, 0.0}, {0.1, 0.0}) == Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(kernel({0.0, 0.0}, {0.0, 0.04}) == Approx(std::exp(-1.0)).epsilon(1e-14));

  const auto mesh = fem::build_mesh(6, 4, 0.6, 0.15);
  const auto pts = mesh.centroids();
  const Eigen::MatrixXd c = covariance_matrix(pts, kernel);
  const int n = static_cast<int>(pts.size());
  CHECK(c.diagonal().isApproxToConstant(1.0, 1e-14));
  CHECK(c.isApprox(c.transpose(), 1e-14));
  // numerical positive semidefiniteness
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * n);
}

TEST_CASE("2x2 covariance eigenpairs by hand", "[rf]") {
  Eigen::MatrixXd c(2, 2);
  const double rho = 0.37;
  c << 1.0, rho, rho, 1.0;
  const auto basis = kle_decompose(c, 2);
  CHECK(basis.eigenvalues[0] == Approx(1.0 + rho).epsilon(1e-12));
  CHECK(basis.eigenvalues[1] == Approx(1.0 - rho).epsilon(1e-12));
}

TEST_CASE("kle basis invariants on the default mesh", "[rf]") {
  const auto mesh = fem::build_mesh(16, 5, 0.6, 0.15);
  const auto pts = mesh.centroids();
  const CovarianceKernel kernel;
  const Eigen::MatrixXd c = covariance_matrix(pts, kernel);
  const int n = static_cast<int>(pts.size());
  const auto basis = kle_decompose(c, n, pts, kernel);

  // orthonormal modes, descending nonnegative eigenvalues
  CHECK((basis.modes.transpose() * basis.modes - Eigen::MatrixXd::Identity(n, n))
            .cwiseAbs()
            .maxCoeff() < 1e-10);
  for (int i = 1; i < n; ++i) CHECK(basis.eigenvalues[i] <= basis.eigenvalues[i - 1]);
  CHECK(basis.eigenvalues.minCoeff() >= 0.0);

  // unit-diagonal kernel: eigenvalue sum equals the trace n
  CHECK(basis.eigenvalues.sum() == Approx(double(n)).epsilon(1e-8));

  // full-spectrum reconstruction
  const Eigen::MatrixXd rec =
      basis.modes * basis.eigenvalues.asDiagonal() * basis.modes.transpose();
  CHECK((rec - c).norm() / c.norm() < 1e-8);

  // captured variance nondecreasing, strictly increasing at the anchor
  for (int m = 1; m <= n; ++m) CHECK(basis.captured_variance(m) >= basis.captured_variance(m - 1));
  CHECK(basis.captured_variance(7) > basis.captured_variance(6));

  CHECK_THROWS_AS(kle_decompose(c, 0), std::invalid_argument);
  CHECK_THROWS_AS(kle_decompose(c, n + 1), std::invalid_argument);
}

TEST_CASE("gaussian field reconstruction statistics", "[rf]") {
  const auto mesh = fem::build_mesh(5, 3, 0.3, 0.1);
  const auto pts = mesh.centroids();
  const CovarianceKernel kernel;
  const Eigen::MatrixXd c = covariance_matrix(pts, kernel);
  const int n = static_cast<int>(pts.size());
  const auto basis = kle_decompose(c, n, pts, kernel);

  std::mt19937_64 rng(1234);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int draws = 100000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd xi(n), g(n);
  for (int s = 0; s < draws; ++s) {
    for (int k = 0; k < n; ++k) xi[k] = normal(rng);
    g = basis.gaussian_field(xi);
    acc += g * g.transpose();
  }
  acc /= double(draws);
  CHECK((acc - c).cwiseAbs().maxCoeff() < 5e-2);
}

TEST_CASE("field realisations", "[rf]") {
  const auto mesh = fem::build_mesh(16, 5, 0.6, 0.15);
  const auto pts = mesh.centroids();
  const CovarianceKernel kernel;
  const auto basis = kle_decompose(covariance_matrix(pts, kernel), 7, pts, kernel);
  const auto priors = MaterialPriors::masonry_defaults();

  // xi = 0 -> the lognormal median field, spatially constant
  const auto median = realize_fields(basis, priors, Eigen::VectorXd::Zero(7));
  for (const auto& p : median) {
    CHECK(p.dwf == Approx(std::exp(priors.dwf.mu_g)).epsilon(1e-12));
    CHECK(p.lambda0 == Approx(std::exp(priors.lambda0.mu_g)).epsilon(1e-12));
    CHECK_NOTHROW(p.validate());
  }

  // all eight log-fields share one fluctuation pattern up to scale
  Eigen::VectorXd xi(7);
  xi << 0.3, -1.2, 0.8, 0.1, -0.4, 1.7, -0.9;
  const auto fields = realize_fields(basis, priors, xi);
  for (std::size_t e = 0; e < fields.size(); ++e) {
    const double z = (std::log(fields[e].dwf) - priors.dwf.mu_g) / priors.dwf.sigma_g;
    const double z2 = (std::log(fields[e].mu) - priors.mu.mu_g) / priors.mu.sigma_g;
    CHECK(z2 == Approx(z).margin(1e-10));
    CHECK(fields[e].dwf > 0.0);
  }

  // sigma_g = 0 yields the constant field exp(mu_g)
  auto flat = priors;
  flat.btcs.sigma_g = 0.0;
  const auto f2 = realize_fields(basis, flat, xi);
  for (const auto& p : f2) CHECK(p.btcs == Approx(std::exp(priors.btcs.mu_g)).epsilon(1e-12));
}

TEST_CASE("per-element lognormal mean recovered over prior draws", "[rf]") {
  // full truncation: the field has unit pointwise variance, so the
  // lognormal mean is exactly mu_q
  const auto mesh = fem::build_mesh(4, 3, 0.3, 0.1);
  const auto pts = mesh.centroids();
  const CovarianceKernel kernel;
  const int n = static_cast<int>(pts.size());
  const auto basis = kle_decompose(covariance_matrix(pts, kernel), n, pts, kernel);
  const auto priors = MaterialPriors::masonry_defaults();

  std::mt19937_64 rng(4321);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int draws = 100000;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n), m2 = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd xi(n);
  for (int s = 0; s < draws; ++s) {
    for (int k = 0; k < n; ++k) xi[k] = normal(rng);
    const auto fields = realize_fields(basis, priors, xi);
    for (int e = 0; e < n; ++e) {
      mean[e] += fields[e].lambda0;
      m2[e] += fields[e].lambda0 * fields[e].lambda0;
    }
  }
  mean /= double(draws);
  m2 /= double(draws);
  for (int e = 0; e < n; ++e) {
    const double sd = std::sqrt(m2[e] - mean[e] * mean[e]);
    CHECK(std::abs(mean[e] - 0.3) < 3.0 * sd / std::sqrt(double(draws)));
  }
}

TEST_CASE("kle json round trip and hash", "[rf]") {
  const auto mesh = fem::build_mesh(6, 3, 0.4, 0.1);
  const auto pts = mesh.centroids();
  const CovarianceKernel kernel{0.07, 0.03};
  const auto basis = kle_decompose(covariance_matrix(pts, kernel), 5, pts, kernel);

  const auto j = to_json(basis);
  const auto back = kle_from_json(j);
  CHECK(back.eigenvalues.isApprox(basis.eigenvalues, 0.0));
  CHECK(back.modes.isApprox(basis.modes, 0.0));
  CHECK(back.kernel.lx1 == kernel.lx1);
  CHECK(back.points.size() == pts.size());
  CHECK(kle_hash(back) == kle_hash(basis));

  auto tampered = basis;
  tampered.eigenvalues[0] += 1e-12;
  CHECK(kle_hash(tampered) != kle_hash(basis));
}
