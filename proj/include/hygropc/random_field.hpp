// SPDX-License-Identifier: Apache-2.0
//
// Lognormal material-parameter fields represented through one shared
// truncated Karhunen-Loeve expansion of an underlying standard Gaussian
// field with separable exponential covariance. All eight parameters share
// the spatial fluctuation pattern and differ only in the lognormal
// moments.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hygropc/io.hpp"
#include "hygropc/kunzel.hpp"

namespace hygropc::rf {

/// Second-order description of one lognormal parameter together with the
/// moments of the underlying Gaussian.
struct LogNormalSpec {
  double mu_q = 0.0;     // physical mean
  double sigma_q = 0.0;  // physical standard deviation
  double mu_g = 0.0;     // Gaussian mean
  double sigma_g = 0.0;  // Gaussian standard deviation

  static LogNormalSpec from_moments(double mu_q, double sigma_q) {
    if (!(mu_q > 0.0) || !(sigma_q > 0.0))
      throw std::invalid_argument("LogNormalSpec: moments must be strictly positive");
    LogNormalSpec s;
    s.mu_q = mu_q;
    s.sigma_q = sigma_q;
    const double r = sigma_q / mu_q;
    const double sg2 = std::log1p(r * r);
    s.sigma_g = std::sqrt(sg2);
    s.mu_g = std::log(mu_q) - 0.5 * sg2;
    return s;
  }
};

/// (mu_g, sigma_g) of the Gaussian whose exponential has the given
/// lognormal moments: sigma_g^2 = ln(1 + (sigma_q/mu_q)^2),
/// mu_g = ln(mu_q) - sigma_g^2 / 2.
inline std::pair<double, double> gaussian_moments(double mu_q, double sigma_q) {
  const auto s = LogNormalSpec::from_moments(mu_q, sigma_q);
  return {s.mu_g, s.sigma_g};
}

/// Separable exponential kernel exp(-|r1|/l1 - |r2|/l2), unit variance.
struct CovarianceKernel {
  double lx1 = 0.1;   // correlation length along x1 [m]
  double lx2 = 0.04;  // correlation length along x2 [m]

  double operator()(const Eigen::Vector2d& a, const Eigen::Vector2d& b) const {
    return std::exp(-std::abs(a.x() - b.x()) / lx1 - std::abs(a.y() - b.y()) / lx2);
  }

  void validate() const {
    if (!(lx1 > 0.0) || !(lx2 > 0.0))
      throw std::invalid_argument("CovarianceKernel: correlation lengths must be positive");
  }
};

inline Eigen::MatrixXd covariance_matrix(const std::vector<Eigen::Vector2d>& points,
                                         const CovarianceKernel& kernel) {
  kernel.validate();
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i) {
    c(i, i) = 1.0;
    for (int j = 0; j < i; ++j) c(i, j) = c(j, i) = kernel(points[i], points[j]);
  }
  return c;
}

/// Truncated spectral decomposition of the discretised covariance.
/// eigenvalues are sorted descending; modes hold the orthonormal
/// eigenvectors column-wise. A realisation of the unit-variance Gaussian
/// field is sum_i sqrt(eigenvalue_i) xi_i mode_i.
struct KLEBasis {
  Eigen::VectorXd eigenvalues;  // M, descending, nonnegative
  Eigen::MatrixXd modes;        // n x M, orthonormal columns
  std::vector<Eigen::Vector2d> points;
  CovarianceKernel kernel;
  double trace = 0.0;  // sum of all n eigenvalues (= n for a unit-diagonal kernel)

  int size() const { return static_cast<int>(modes.rows()); }
  int truncation() const { return static_cast<int>(eigenvalues.size()); }

  /// Fraction of the total variance captured by the leading m modes.
  double captured_variance(int m = -1) const {
    if (m < 0) m = truncation();
    if (m > truncation()) throw std::invalid_argument("captured_variance: m exceeds truncation");
    return eigenvalues.head(m).sum() / trace;
  }

  /// Realisation of the discretised Gaussian field from the leading
  /// xi.size() coordinates.
  Eigen::VectorXd gaussian_field(const Eigen::VectorXd& xi) const {
    const int m = static_cast<int>(xi.size());
    if (m > truncation()) throw std::invalid_argument("gaussian_field: xi longer than truncation");
    return modes.leftCols(m) * (eigenvalues.head(m).cwiseSqrt().asDiagonal() * xi);
  }

  /// Pointwise variance of the truncated field at collocation point e.
  double pointwise_variance(int e, int m = -1) const {
    if (m < 0) m = truncation();
    double v = 0.0;
    for (int i = 0; i < m; ++i) v += eigenvalues[i] * modes(e, i) * modes(e, i);
    return v;
  }
};

/// Solves the symmetric eigenproblem of the covariance matrix and keeps
/// the leading M eigenpairs.
inline KLEBasis kle_decompose(const Eigen::MatrixXd& covariance, int truncation,
                              std::vector<Eigen::Vector2d> points = {},
                              CovarianceKernel kernel = {}) {
  const int n = static_cast<int>(covariance.rows());
  if (covariance.cols() != n) throw std::invalid_argument("kle_decompose: matrix not square");
  if (!covariance.isApprox(covariance.transpose(), 1e-12))
    throw std::invalid_argument("kle_decompose: matrix not symmetric");
  if (truncation < 1 || truncation > n)
    throw std::invalid_argument("kle_decompose: truncation must lie in [1, n]");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance);
  if (eig.info() != Eigen::Success) throw std::runtime_error("kle_decompose: eigensolver failed");

  KLEBasis basis;
  basis.trace = eig.eigenvalues().sum();
  basis.eigenvalues.resize(truncation);
  basis.modes.resize(n, truncation);
  for (int i = 0; i < truncation; ++i) {
    const int src = n - 1 - i;  // solver returns ascending order
    basis.eigenvalues[i] = std::max(eig.eigenvalues()[src], 0.0);
    basis.modes.col(i) = eig.eigenvectors().col(src);
  }
  basis.points = std::move(points);
  basis.kernel = kernel;
  return basis;
}

/// Lognormal priors of the eight material parameters. Defaults follow the
/// masonry data set used throughout the study.
struct MaterialPriors {
  LogNormalSpec dwf, w80, lambda0, btcs, mu, a, cs, rhos;

  static MaterialPriors masonry_defaults() {
    MaterialPriors p;
    p.dwf = LogNormalSpec::from_moments(100.0, 20.0);
    p.w80 = LogNormalSpec::from_moments(50.0, 10.0);
    p.lambda0 = LogNormalSpec::from_moments(0.3, 0.1);
    p.btcs = LogNormalSpec::from_moments(10.0, 2.0);
    p.mu = LogNormalSpec::from_moments(12.0, 5.0);
    p.a = LogNormalSpec::from_moments(0.6, 0.2);
    p.cs = LogNormalSpec::from_moments(900.0, 100.0);
    p.rhos = LogNormalSpec::from_moments(1650.0, 50.0);
    return p;
  }

  const LogNormalSpec& operator[](int k) const {
    const LogNormalSpec* s[8] = {&dwf, &w80, &lambda0, &btcs, &mu, &a, &cs, &rhos};
    return *s[k];
  }

  static const char* name(int k) {
    const char* names[8] = {"dwf", "w80", "lambda0", "btcs", "mu", "a", "cs", "rhos"};
    return names[k];
  }
};

/// Per-element material parameters for one realisation: for parameter q
/// and element e, q_e = exp(mu_g + sigma_g sum_i sqrt(eigenvalue_i) xi_i
/// mode_i[e]). Positive by construction.
inline std::vector<kunzel::MaterialParams> realize_fields(const KLEBasis& basis,
                                                          const MaterialPriors& priors,
                                                          const Eigen::VectorXd& xi) {
  if (!xi.allFinite()) throw std::invalid_argument("realize_fields: non-finite xi");
  const Eigen::VectorXd g = basis.gaussian_field(xi);
  std::vector<kunzel::MaterialParams> fields(basis.size());
  for (int e = 0; e < basis.size(); ++e) {
    auto value = [&](const LogNormalSpec& s) { return std::exp(s.mu_g + s.sigma_g * g[e]); };
    fields[e] = kunzel::MaterialParams{value(priors.dwf), value(priors.w80),
                                       value(priors.lambda0), value(priors.btcs),
                                       value(priors.mu),  value(priors.a),
                                       value(priors.cs),  value(priors.rhos)};
  }
  return fields;
}

/// Lognormal value of parameter k at collocation point e for one xi.
inline double field_value(const KLEBasis& basis, const LogNormalSpec& spec,
                          const Eigen::VectorXd& xi, int e) {
  const int m = static_cast<int>(xi.size());
  double g = 0.0;
  for (int i = 0; i < m; ++i) g += std::sqrt(basis.eigenvalues[i]) * xi[i] * basis.modes(e, i);
  return std::exp(spec.mu_g + spec.sigma_g * g);
}

// ---- serialisation ----

inline nlohmann::json to_json(const KLEBasis& basis) {
  nlohmann::json j;
  j["kernel"] = {{"lx1", basis.kernel.lx1}, {"lx2", basis.kernel.lx2}};
  j["trace"] = basis.trace;
  j["eigenvalues"] = std::vector<double>(basis.eigenvalues.data(),
                                         basis.eigenvalues.data() + basis.eigenvalues.size());
  std::vector<double> modes(basis.modes.size());
  Eigen::Map<Eigen::MatrixXd>(modes.data(), basis.modes.rows(), basis.modes.cols()) = basis.modes;
  j["modes_column_major"] = modes;
  j["n"] = basis.size();
  j["m"] = basis.truncation();
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : basis.points) pts.push_back({p.x(), p.y()});
  j["points"] = pts;
  return j;
}

inline KLEBasis kle_from_json(const nlohmann::json& j) {
  KLEBasis basis;
  basis.kernel.lx1 = j.at("kernel").at("lx1").get<double>();
  basis.kernel.lx2 = j.at("kernel").at("lx2").get<double>();
  basis.trace = j.at("trace").get<double>();
  const int n = j.at("n").get<int>();
  const int m = j.at("m").get<int>();
  const auto eig = j.at("eigenvalues").get<std::vector<double>>();
  const auto modes = j.at("modes_column_major").get<std::vector<double>>();
  if (static_cast<int>(eig.size()) != m || static_cast<int>(modes.size()) != n * m)
    throw std::invalid_argument("kle_from_json: inconsistent dimensions");
  basis.eigenvalues = Eigen::Map<const Eigen::VectorXd>(eig.data(), m);
  basis.modes = Eigen::Map<const Eigen::MatrixXd>(modes.data(), n, m);
  for (const auto& p : j.at("points")) basis.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return basis;
}

/// Content hash used to tie surrogate containers to the basis they were
/// built with.
inline std::uint64_t kle_hash(const KLEBasis& basis) {
  return io::fnv1a64(to_json(basis).dump());
}

}  // namespace hygropc::rf
