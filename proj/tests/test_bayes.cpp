// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "hygropc/bayes.hpp"
#include "hygropc/galerkin.hpp"

using namespace hygropc;
using namespace hygropc::bayes;
using Catch::Approx;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov statistic of samples against a reference CDF
double ks_statistic(Eigen::VectorXd samples, const std::function<double(double)>& cdf) {
  std::sort(samples.data(), samples.data() + samples.size());
  const int n = static_cast<int>(samples.size());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::max(std::abs(f - double(i) / n), std::abs(f - double(i + 1) / n)));
  }
  return d;
}

double ks_two_sample(Eigen::VectorXd a, Eigen::VectorXd b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  double d = 0.0;
  int i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) ++i;
    else ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

fem::TransientSolution constant_solution(int steps, int nodes, double theta, double phi) {
  fem::TransientSolution sol;
  sol.states.resize(steps, 2 * nodes);
  sol.states.leftCols(nodes).setConstant(theta);
  sol.states.rightCols(nodes).setConstant(phi);
  sol.times = Eigen::VectorXd::LinSpaced(steps, 0.0, steps - 1.0);
  return sol;
}

ProbeLayout small_layout() {
  ProbeLayout layout;
  layout.probe_nodes = {1, 3, 5};
  layout.time_steps = {2, 4};
  return layout;
}

}  // namespace

TEST_CASE("observation operator ordering and linearity", "[bayes]") {
  const auto layout = small_layout();
  auto sol = constant_solution(6, 8, 17.0, 0.6);
  const Eigen::VectorXd y = observation_operator(sol, layout);
  REQUIRE(y.size() == 12);
  CHECK(y.head(6).isApproxToConstant(17.0));
  CHECK(y.tail(6).isApproxToConstant(0.6));

  // linearity
  auto sol2 = sol;
  sol2.states.setRandom();
  auto sum = sol;
  sum.states = sol.states + sol2.states;
  CHECK((observation_operator(sum, layout) -
         observation_operator(sol, layout) - observation_operator(sol2, layout))
            .cwiseAbs()
            .maxCoeff() < 1e-14);

  ProbeLayout bad = layout;
  bad.probe_nodes.push_back(99);
  CHECK_THROWS_AS(observation_operator(sol, bad), std::out_of_range);
}

TEST_CASE("default layout has 14 probes and 3 times", "[bayes]") {
  const auto mesh = fem::build_mesh(16, 5, 0.6, 0.15);
  const auto layout = default_probe_layout(mesh, 151);
  CHECK(layout.probe_nodes.size() == 14);
  CHECK(layout.time_steps.size() == 3);
  CHECK(layout.observation_count() == 84);
  CHECK(layout.time_steps.back() == 150);
  std::set<int> unique(layout.probe_nodes.begin(), layout.probe_nodes.end());
  CHECK(unique.size() == 14);

  // also distinct on the reduced mesh
  const auto small = fem::build_mesh(8, 3, 0.6, 0.15);
  const auto l2 = default_probe_layout(small, 31);
  std::set<int> u2(l2.probe_nodes.begin(), l2.probe_nodes.end());
  CHECK(u2.size() == 14);
}

TEST_CASE("virtual experiment", "[bayes]") {
  const auto layout = small_layout();
  auto forward = [&](const Eigen::VectorXd& xi) {
    return constant_solution(6, 8, 15.0 + xi[0], 0.5 + 0.01 * xi[1]);
  };
  NoiseModel noise;
  Eigen::VectorXd truth(2);
  truth << 0.7, -0.2;

  // zero noise: values equal the observation operator at the truth
  const auto clean = virtual_experiment(truth, forward, layout, noise, 42, false);
  CHECK(clean.values.head(6).isApproxToConstant(15.7));
  CHECK((clean.values - observation_operator(forward(truth), layout)).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK_NOTHROW(clean.validate());

  // noisy replicates: empirical standard deviation near sigma_theta
  const int reps = 10000;
  double acc = 0.0, acc2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const auto obs = virtual_experiment(truth, forward, layout, noise, 1000 + r, true);
    const double v = obs.values[0];
    acc += v;
    acc2 += v * v;
  }
  const double sd = std::sqrt(acc2 / reps - (acc / reps) * (acc / reps));
  CHECK(std::abs(sd - noise.sigma_theta) < 0.05 * noise.sigma_theta);

  // empirical covariance path stays positive definite and near-diagonal
  NoiseModel emp = noise;
  emp.covariance = NoiseModel::Covariance::empirical;
  emp.replicates = 100;
  const auto obs_emp = virtual_experiment(truth, forward, layout, emp, 4242, true);
  CHECK_NOTHROW(obs_emp.validate());
  const double d0 = obs_emp.covariance(0, 0);
  CHECK(d0 > 0.5 * noise.sigma_theta * noise.sigma_theta);
  CHECK(d0 < 2.0 * noise.sigma_theta * noise.sigma_theta);
}

TEST_CASE("gaussian likelihood closed forms", "[bayes]") {
  const auto layout = small_layout();
  ObservationSet obs;
  obs.layout = layout;
  obs.values = Eigen::VectorXd::Constant(12, 2.0);
  Eigen::VectorXd sig = noise_sigmas(layout, NoiseModel{});
  obs.covariance = sig.cwiseAbs2().asDiagonal();
  GaussianLikelihood like(obs);

  CHECK(like(obs.values) == 0.0);  // maximum at the data

  Eigen::VectorXd y = obs.values;
  const double delta = 0.37;
  y[2] += delta;  // a theta entry
  CHECK(like(y) == Approx(-delta * delta / (2.0 * 0.2 * 0.2)).epsilon(1e-12));

  // quadratic decay along a ray: three-point parabola fit is exact
  Eigen::VectorXd dir = Eigen::VectorXd::LinSpaced(12, -1.0, 1.0);
  auto at = [&](double t) { return like(obs.values + t * dir); };
  const double l1 = at(1.0), l2 = at(2.0), l3 = at(3.0);
  // for a quadratic through the origin: l(t) = c t^2
  CHECK(l2 == Approx(4.0 * l1).epsilon(1e-10));
  CHECK(l3 == Approx(9.0 * l1).epsilon(1e-10));
}

TEST_CASE("log posterior limits", "[bayes]") {
  // no observations: standard normal prior
  LogPosterior prior_only;
  Eigen::VectorXd xi(3);
  xi << 0.5, -1.0, 2.0;
  CHECK(prior_only(xi) == Approx(-0.5 * xi.squaredNorm()).epsilon(1e-14));

  // nearly flat likelihood: posterior collapses to the prior
  const auto layout = small_layout();
  ObservationSet obs;
  obs.layout = layout;
  obs.values = Eigen::VectorXd::Zero(12);
  obs.covariance = 1e12 * Eigen::MatrixXd::Identity(12, 12);
  auto forward = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(Eigen::VectorXd::Constant(12, x.sum()));
  };
  LogPosterior post(forward, GaussianLikelihood(obs));
  CHECK(post(xi) == Approx(prior_only(xi)).margin(1e-6));

  // forward failure maps to -infinity
  auto failing = [](const Eigen::VectorXd&) -> Eigen::VectorXd {
    throw std::runtime_error("boom");
  };
  LogPosterior post_fail(failing, GaussianLikelihood(obs));
  CHECK(post_fail(xi) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("metropolis-hastings basic behaviour", "[bayes]") {
  auto target = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };

  // degenerate proposal: acceptance tends to one, chain barely moves
  MHOptions tiny;
  tiny.proposal_scale = 1e-8;
  const auto chain = metropolis_hastings(target, 2000, 2, 7, tiny);
  CHECK(chain.acceptance_rate > 0.99);
  CHECK((chain.samples.row(chain.size() - 1) - chain.samples.row(0)).norm() < 1e-4);

  // identical seeds give bit-identical chains
  const auto c1 = metropolis_hastings(target, 5000, 3, 123);
  const auto c2 = metropolis_hastings(target, 5000, 3, 123);
  CHECK(c1.samples == c2.samples);
  CHECK(c1.log_posterior == c2.log_posterior);
  CHECK(c1.accepted == c2.accepted);
  const auto c3 = metropolis_hastings(target, 5000, 3, 124);
  CHECK(c1.samples != c3.samples);
}

TEST_CASE("metropolis-hastings samples a 7d standard normal", "[bayes]") {
  auto target = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  const int n = 100000, dim = 7;
  const auto chain = metropolis_hastings(target, n, dim, 2024);
  CHECK(chain.acceptance_rate > 0.15);
  CHECK(chain.acceptance_rate < 0.55);

  const Eigen::MatrixXd kept = thin_chain(chain, 0.1, 1);
  const Eigen::RowVectorXd mean = kept.colwise().mean();
  Eigen::MatrixXd centered = kept.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(kept.rows() - 1);
  CHECK((cov - Eigen::MatrixXd::Identity(dim, dim)).norm() /
            Eigen::MatrixXd::Identity(dim, dim).norm() < 0.10);
}

TEST_CASE("prior recovery passes a ks test per marginal", "[bayes]") {
  auto target = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  const int n = 10000, dim = 3, stride = 10;
  const auto chain = metropolis_hastings(target, n, dim, 31337);
  const Eigen::MatrixXd kept = thin_chain(chain, 0.0, stride);
  const double critical = 1.628 / std::sqrt(double(kept.rows()));  // alpha = 0.01
  for (int k = 0; k < dim; ++k)
    CHECK(ks_statistic(kept.col(k), normal_cdf) < critical);
}

TEST_CASE("1d conjugate gaussian toy matches the closed form", "[bayes]") {
  const double a = 2.0, sigma = 0.5, z = 1.3;
  auto forward = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(Eigen::VectorXd::Constant(1, a * x[0]));
  };
  ObservationSet obs;
  obs.values = Eigen::VectorXd::Constant(1, z);
  obs.covariance = Eigen::MatrixXd::Constant(1, 1, sigma * sigma);

  LogPosterior post([&](const Eigen::VectorXd& x) { return forward(x); },
                    GaussianLikelihood(obs));

  const double prec = 1.0 + a * a / (sigma * sigma);
  const double mean_exact = (a * z / (sigma * sigma)) / prec;
  const double var_exact = 1.0 / prec;

  const int n = 50000;
  const auto chain = metropolis_hastings(post, n, 1, 99);
  const Eigen::MatrixXd kept = thin_chain(chain, 0.1, 1);

  // batch-means standard errors
  const int batches = 25;
  const int bs = int(kept.rows()) / batches;
  Eigen::VectorXd bmean(batches), bvar(batches);
  for (int b = 0; b < batches; ++b) {
    const auto seg = kept.col(0).segment(b * bs, bs);
    bmean[b] = seg.mean();
    bvar[b] = (seg.array() - seg.mean()).square().sum() / (bs - 1);
  }
  const double mean_hat = bmean.mean();
  const double se_mean = std::sqrt((bmean.array() - mean_hat).square().sum() /
                                   (batches - 1) / batches);
  const double var_hat = bvar.mean();
  const double se_var =
      std::sqrt((bvar.array() - var_hat).square().sum() / (batches - 1) / batches);

  CHECK(std::abs(mean_hat - mean_exact) < 3.0 * se_mean);
  CHECK(std::abs(var_hat - var_exact) < 3.0 * se_var);
}

TEST_CASE("detailed balance on a discretised 1d target", "[bayes]") {
  auto target = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  const auto chain = metropolis_hastings(target, 200000, 1, 606);

  const std::vector<double> edges = {-1.0, -0.3, 0.3, 1.0};
  auto bin = [&](double x) {
    int b = 0;
    while (b < int(edges.size()) && x > edges[b]) ++b;
    return b;
  };
  const int nb = int(edges.size()) + 1;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(nb, nb);
  for (int s = 1; s < chain.size(); ++s)
    counts(bin(chain.samples(s - 1, 0)), bin(chain.samples(s, 0))) += 1.0;

  for (int i = 0; i < nb; ++i)
    for (int j = i + 1; j < nb; ++j) {
      const double nij = counts(i, j), nji = counts(j, i);
      CHECK(std::abs(nij - nji) <= 5.0 * std::sqrt(nij + nji + 1.0));
    }
}

TEST_CASE("acceptance decisions depend only on posterior differences", "[bayes]") {
  // shifting the log posterior by a constant (the dropped ln kappa)
  // leaves every acceptance decision unchanged
  auto base = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  auto shifted = [&](const Eigen::VectorXd& x) { return base(x) + 123.456; };
  const auto c1 = metropolis_hastings(base, 20000, 2, 555);
  const auto c2 = metropolis_hastings(shifted, 20000, 2, 555);
  CHECK(c1.accepted == c2.accepted);
  CHECK(c1.samples == c2.samples);
}

TEST_CASE("posterior concentrates on the data as noise vanishes", "[bayes]") {
  // observations generated from the surrogate itself at a known truth
  auto mesh = fem::build_mesh(6, 3, 0.6, 0.15);
  fem::BoundaryConditions bc;
  fem::TimeIntegration ti{0.5, 9600.0, 7};
  rf::CovarianceKernel kernel;
  const auto pts = mesh.centroids();
  const auto kle = rf::kle_decompose(rf::covariance_matrix(pts, kernel), 2, pts, kernel);
  const auto priors = rf::MaterialPriors::masonry_defaults();
  const auto sur = pce::GalerkinSolver(mesh, kle, priors, bc, ti, 2, 2).solve();

  ProbeLayout layout = default_probe_layout(mesh, ti.steps);
  const double sigma = 0.01;
  Eigen::VectorXd truth(2);
  truth << 0.8, -0.5;
  const Eigen::VectorXd z = observation_operator(sur.evaluate(truth), layout);

  ObservationSet obs;
  obs.layout = layout;
  obs.values = z;
  Eigen::VectorXd sig = Eigen::VectorXd::Constant(z.size(), sigma);
  obs.covariance = sig.cwiseAbs2().asDiagonal();

  const auto dof_steps = layout.dof_steps(mesh.node_count());
  const Eigen::MatrixXd g = sur.pick_coefficients(dof_steps);
  auto forward = [&](const Eigen::VectorXd& xi) {
    return Eigen::VectorXd(g * sur.basis_values(xi));
  };
  LogPosterior post(forward, GaussianLikelihood(obs));
  const auto chain = metropolis_hastings(post, 20000, 2, 1717);
  const Eigen::MatrixXd kept = thin_chain(chain, 0.2, 1);

  Eigen::VectorXd mean_y = Eigen::VectorXd::Zero(z.size());
  for (int s = 0; s < kept.rows(); ++s) mean_y += forward(kept.row(s));
  mean_y /= double(kept.rows());
  CHECK((mean_y - z).cwiseAbs().maxCoeff() < 5.0 * sigma);
}

TEST_CASE("kernel density estimation", "[bayes]") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd samples(4000);
  for (int i = 0; i < samples.size(); ++i) samples[i] = 3.0 + 0.5 * normal(rng);

  const auto table = kde_density(samples);
  CHECK(table.integral() == Approx(1.0).margin(1e-2));
  // mode near the true mean
  int imax;
  table.density.maxCoeff(&imax);
  CHECK(std::abs(table.x[imax] - 3.0) < 0.15);

  // degenerate chain collapses to a spike at the value
  const auto spike = kde_density(Eigen::VectorXd::Constant(100, 1.5));
  int smax;
  spike.density.maxCoeff(&smax);
  CHECK(std::abs(spike.x[smax] - 1.5) < 1e-9);

  const std::string csv = density_csv(table);
  CHECK(csv.rfind("value,density\n", 0) == 0);
}

TEST_CASE("prior-only pushforward matches the analytic lognormal", "[bayes]") {
  auto mesh = fem::build_mesh(6, 3, 0.6, 0.15);
  rf::CovarianceKernel kernel;
  const auto pts = mesh.centroids();
  const int m = 3;
  const auto kle = rf::kle_decompose(rf::covariance_matrix(pts, kernel), m, pts, kernel);
  const auto priors = rf::MaterialPriors::masonry_defaults();

  auto target = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  const auto chain = metropolis_hastings(target, 40000, m, 808);
  const Eigen::MatrixXd kept = thin_chain(chain, 0.1, 10);

  const int element = 4;
  const Eigen::VectorXd q = pushforward_parameter(kept, kle, priors.lambda0, element);

  // analytic: lognormal with the captured pointwise standard deviation
  const double sd_captured = std::sqrt(kle.pointwise_variance(element, m));
  auto cdf = [&](double x) {
    return normal_cdf((std::log(x) - priors.lambda0.mu_g) /
                      (priors.lambda0.sigma_g * sd_captured));
  };
  const double critical = 1.628 / std::sqrt(double(q.size()));
  CHECK(ks_statistic(q, cdf) < critical);
}

TEST_CASE("chain csv schema", "[bayes]") {
  auto target = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  const auto chain = metropolis_hastings(target, 10, 2, 5);
  const std::string csv = chain_csv(chain);
  CHECK(csv.rfind("sample,accepted,logpost,xi_1,xi_2\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}
