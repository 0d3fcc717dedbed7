// SPDX-License-Identifier: Apache-2.0
//
// Bayesian updating of the KLE coordinates xi: virtual-experiment
// generation, Gaussian likelihood over probe observations, random-walk
// Metropolis-Hastings sampling and pushforward density estimates.
// The forward model handle may wrap either the full FE solver or the PC
// surrogate.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hygropc/fem.hpp"
#include "hygropc/io.hpp"
#include "hygropc/random_field.hpp"
#include "hygropc/surrogate.hpp"

namespace hygropc::bayes {

/// Probe nodes and observation steps. Observations are ordered field
/// major (all theta, then all phi), probe major, time minor.
struct ProbeLayout {
  std::vector<int> probe_nodes;
  std::vector<int> time_steps;

  int observation_count() const {
    return 2 * static_cast<int>(probe_nodes.size() * time_steps.size());
  }

  /// (dof, step) pairs in observation order for a mesh with n nodes.
  std::vector<std::pair<int, int>> dof_steps(int node_count) const {
    std::vector<std::pair<int, int>> out;
    out.reserve(observation_count());
    for (int field = 0; field < 2; ++field)
      for (int p : probe_nodes)
        for (int t : time_steps) out.emplace_back(field * node_count + p, t);
    return out;
  }
};

/// Default layout: 14 probes spread evenly over the non-loaded grid nodes
/// and three observation times at T/3, 2T/3 and T.
inline ProbeLayout default_probe_layout(const fem::Mesh& mesh, int steps, int probes = 14) {
  std::vector<int> candidates;
  for (int n = 0; n < mesh.node_count(); ++n)
    if (mesh.tags[n] == fem::BoundaryTag::none || mesh.tags[n] == fem::BoundaryTag::insulated)
      candidates.push_back(n);
  if (static_cast<int>(candidates.size()) < probes)
    throw std::invalid_argument("default_probe_layout: mesh too small for the probe count");
  ProbeLayout layout;
  for (int k = 0; k < probes; ++k)
    layout.probe_nodes.push_back(
        candidates[k * (candidates.size() - 1) / std::max(1, probes - 1)]);
  const int last = steps - 1;
  layout.time_steps = {(last + 1) / 3, 2 * (last + 1) / 3, last};
  return layout;
}

struct NoiseModel {
  double sigma_theta = 0.2;   // [degC]
  double sigma_phi = 0.02;    // [-]
  enum class Covariance { diagonal, empirical };
  Covariance covariance = Covariance::diagonal;
  int replicates = 100;       // replicate count for the empirical estimate

  void validate() const {
    if (!(sigma_theta > 0.0) || !(sigma_phi > 0.0))
      throw std::invalid_argument("NoiseModel: standard deviations must be positive");
    if (covariance == Covariance::empirical && replicates < 2)
      throw std::invalid_argument("NoiseModel: empirical covariance needs >= 2 replicates");
  }
};

struct ObservationSet {
  ProbeLayout layout;
  Eigen::VectorXd values;      // z
  Eigen::MatrixXd covariance;  // C_obs, SPD

  int size() const { return static_cast<int>(values.size()); }

  void validate() const {
    if (size() != layout.observation_count())
      throw std::invalid_argument("ObservationSet: value count does not match layout");
    if (covariance.rows() != size() || covariance.cols() != size())
      throw std::invalid_argument("ObservationSet: covariance shape mismatch");
    if (!covariance.isApprox(covariance.transpose(), 1e-10))
      throw std::invalid_argument("ObservationSet: covariance not symmetric");
    if (Eigen::LLT<Eigen::MatrixXd>(covariance).info() != Eigen::Success)
      throw std::invalid_argument("ObservationSet: covariance not positive definite");
  }
};

/// Extracts the observed nodal values in the fixed ordering; linear in u.
inline Eigen::VectorXd observation_operator(const fem::TransientSolution& u,
                                            const ProbeLayout& layout) {
  Eigen::VectorXd y(layout.observation_count());
  int k = 0;
  for (int field = 0; field < 2; ++field)
    for (int p : layout.probe_nodes) {
      if (p < 0 || p >= u.node_count()) throw std::out_of_range("observation_operator: probe node");
      for (int t : layout.time_steps) {
        if (t < 0 || t >= u.step_count()) throw std::out_of_range("observation_operator: time step");
        y[k++] = field == 0 ? u.theta(t, p) : u.phi(t, p);
      }
    }
  return y;
}

/// Per-observation noise standard deviations in observation order.
inline Eigen::VectorXd noise_sigmas(const ProbeLayout& layout, const NoiseModel& noise) {
  const int half = layout.observation_count() / 2;
  Eigen::VectorXd s(layout.observation_count());
  s.head(half).setConstant(noise.sigma_theta);
  s.tail(half).setConstant(noise.sigma_phi);
  return s;
}

/// Virtual experiment: evaluates the forward model at the stored truth
/// and perturbs the observations by Gaussian noise. The observation
/// covariance follows the noise model (diagonal, or empirical over
/// noise replicates).
inline ObservationSet virtual_experiment(const Eigen::VectorXd& truth_xi,
                                         const std::function<fem::TransientSolution(
                                             const Eigen::VectorXd&)>& forward,
                                         const ProbeLayout& layout, const NoiseModel& noise,
                                         std::uint64_t seed, bool add_noise = true) {
  noise.validate();
  ObservationSet obs;
  obs.layout = layout;
  const Eigen::VectorXd y = observation_operator(forward(truth_xi), layout);
  const Eigen::VectorXd sig = noise_sigmas(layout, noise);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  obs.values = y;
  if (add_noise)
    for (int k = 0; k < obs.values.size(); ++k) obs.values[k] += sig[k] * normal(rng);

  if (noise.covariance == NoiseModel::Covariance::diagonal) {
    obs.covariance = sig.cwiseAbs2().asDiagonal();
  } else {
    // sample covariance over noisy replicates of the observation vector
    const int m = noise.replicates;
    Eigen::MatrixXd reps(m, y.size());
    for (int rrow = 0; rrow < m; ++rrow)
      for (int k = 0; k < y.size(); ++k) reps(rrow, k) = y[k] + sig[k] * normal(rng);
    const Eigen::RowVectorXd mean = reps.colwise().mean();
    reps.rowwise() -= mean;
    obs.covariance = reps.transpose() * reps / double(m - 1);
    // ridge only if the sample estimate is numerically rank-deficient
    if (Eigen::LLT<Eigen::MatrixXd>(obs.covariance).info() != Eigen::Success)
      obs.covariance += 1e-8 * sig.cwiseAbs2().mean() *
                        Eigen::MatrixXd::Identity(y.size(), y.size());
  }
  obs.validate();
  return obs;
}

/// -(1/2) (y - z)^T C_obs^{-1} (y - z); the additive normalisation
/// constant ln(kappa) is dropped (acceptance ratios are unaffected).
class GaussianLikelihood {
 public:
  explicit GaussianLikelihood(ObservationSet obs) : obs_(std::move(obs)) {
    // factorised once; the layout consistency is the caller's concern
    if (obs_.covariance.rows() != obs_.values.size() ||
        obs_.covariance.cols() != obs_.values.size())
      throw std::invalid_argument("GaussianLikelihood: covariance shape mismatch");
    if (!obs_.covariance.isApprox(obs_.covariance.transpose(), 1e-10))
      throw std::invalid_argument("GaussianLikelihood: covariance not symmetric");
    llt_.compute(obs_.covariance);
    if (llt_.info() != Eigen::Success)
      throw std::invalid_argument("GaussianLikelihood: covariance not positive definite");
  }

  const ObservationSet& observations() const { return obs_; }

  double operator()(const Eigen::VectorXd& y) const {
    const Eigen::VectorXd d = y - obs_.values;
    return -0.5 * d.dot(llt_.solve(d));
  }

 private:
  ObservationSet obs_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// log posterior over xi up to a constant: standard normal prior plus
/// Gaussian likelihood. A forward-model failure maps to -infinity so the
/// proposal is rejected.
class LogPosterior {
 public:
  using ObservationForward = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  /// Prior-only posterior (no observations).
  LogPosterior() = default;

  LogPosterior(ObservationForward forward, GaussianLikelihood likelihood)
      : forward_(std::move(forward)),
        likelihood_(std::make_shared<GaussianLikelihood>(std::move(likelihood))) {}

  double operator()(const Eigen::VectorXd& xi) const {
    double lp = -0.5 * xi.squaredNorm();
    if (likelihood_) {
      try {
        lp += (*likelihood_)(forward_(xi));
      } catch (const std::exception&) {
        return -std::numeric_limits<double>::infinity();
      }
    }
    return lp;
  }

 private:
  ObservationForward forward_;
  std::shared_ptr<GaussianLikelihood> likelihood_;
};

struct Chain {
  Eigen::MatrixXd samples;      // n x dim
  Eigen::VectorXd log_posterior;
  std::vector<std::uint8_t> accepted;
  double acceptance_rate = 0.0;
  double proposal_scale = 0.0;
  double seconds = 0.0;         // wall clock of the sampling loop

  int size() const { return static_cast<int>(samples.rows()); }
  int dimension() const { return static_cast<int>(samples.cols()); }
};

struct MHOptions {
  double proposal_scale = 0.0;  // 0 = auto-tune during warm-up
  int warmup = 2000;            // discarded adaptation phase
  double target_low = 0.2;      // acceptance-rate window for the tuner
  double target_high = 0.4;
  Eigen::VectorXd start;        // empty = origin
};

/// Random-walk Metropolis-Hastings with isotropic Gaussian proposals.
/// Fully deterministic for a fixed seed.
inline Chain metropolis_hastings(const std::function<double(const Eigen::VectorXd&)>& log_post,
                                 int n_samples, int dimension, std::uint64_t seed,
                                 MHOptions opts = {}) {
  if (n_samples < 1) throw std::invalid_argument("metropolis_hastings: need n_samples >= 1");
  if (dimension < 1) throw std::invalid_argument("metropolis_hastings: need dimension >= 1");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Eigen::VectorXd x = opts.start.size() == dimension ? opts.start
                                                     : Eigen::VectorXd::Zero(dimension);
  double lp = log_post(x);
  if (!std::isfinite(lp))
    throw std::invalid_argument("metropolis_hastings: start point has non-finite log posterior");

  // conventional rule of thumb for a Gaussian-ish target
  double scale = opts.proposal_scale > 0.0 ? opts.proposal_scale : 2.38 / std::sqrt(dimension);

  Eigen::VectorXd prop(dimension);
  auto advance = [&](bool adapt, int block) {
    int accepted_in_block = 0;
    for (int s = 0; s < block; ++s) {
      for (int k = 0; k < dimension; ++k) prop[k] = x[k] + scale * normal(rng);
      const double lp_prop = log_post(prop);
      const double log_u = std::log(uniform(rng));
      if (lp_prop - lp > log_u) {
        x = prop;
        lp = lp_prop;
        ++accepted_in_block;
      }
    }
    if (adapt && block > 0) {
      const double rate = double(accepted_in_block) / block;
      if (rate > opts.target_high) scale *= 1.3;
      else if (rate < opts.target_low) scale /= 1.3;
    }
    return accepted_in_block;
  };

  if (opts.proposal_scale <= 0.0)
    for (int done = 0; done < opts.warmup; done += 100) advance(true, std::min(100, opts.warmup - done));

  Chain chain;
  chain.samples.resize(n_samples, dimension);
  chain.log_posterior.resize(n_samples);
  chain.accepted.assign(n_samples, 0);
  chain.proposal_scale = scale;

  io::Timer timer;
  long n_accepted = 0;
  for (int s = 0; s < n_samples; ++s) {
    for (int k = 0; k < dimension; ++k) prop[k] = x[k] + scale * normal(rng);
    const double lp_prop = log_post(prop);
    const double log_u = std::log(uniform(rng));
    const bool accept = lp_prop - lp > log_u;
    if (accept) {
      x = prop;
      lp = lp_prop;
      ++n_accepted;
    }
    chain.samples.row(s) = x;
    chain.log_posterior[s] = lp;
    chain.accepted[s] = accept ? 1 : 0;
  }
  chain.seconds = timer.seconds();
  chain.acceptance_rate = double(n_accepted) / n_samples;
  return chain;
}

inline std::string chain_csv(const Chain& chain) {
  std::ostringstream out;
  out << "sample,accepted,logpost";
  for (int k = 1; k <= chain.dimension(); ++k) out << ",xi_" << k;
  out << '\n';
  for (int s = 0; s < chain.size(); ++s) {
    out << s << ',' << int(chain.accepted[s]) << ',' << io::format_double(chain.log_posterior[s]);
    for (int k = 0; k < chain.dimension(); ++k)
      out << ',' << io::format_double(chain.samples(s, k));
    out << '\n';
  }
  return out.str();
}

// ---- kernel density estimates for pushforward posteriors ----

struct DensityTable {
  Eigen::VectorXd x;
  Eigen::VectorXd density;
  double bandwidth = 0.0;

  /// Trapezoid integral, for normalisation checks.
  double integral() const {
    double acc = 0.0;
    for (int i = 0; i + 1 < x.size(); ++i)
      acc += 0.5 * (density[i] + density[i + 1]) * (x[i + 1] - x[i]);
    return acc;
  }
};

inline double silverman_bandwidth(const Eigen::VectorXd& samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) throw std::invalid_argument("silverman_bandwidth: need at least two samples");
  const double mean = samples.mean();
  const double sd = std::sqrt((samples.array() - mean).square().sum() / (n - 1));
  std::vector<double> sorted(samples.data(), samples.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double iqr = sorted[std::size_t(0.75 * (n - 1))] - sorted[std::size_t(0.25 * (n - 1))];
  double spread = std::min(sd, iqr / 1.34);
  if (spread <= 0.0) spread = std::max(sd, 1e-12);
  return 0.9 * spread * std::pow(double(n), -0.2);
}

/// Gaussian-kernel density estimate on a regular grid padded well beyond
/// the sample range.
inline DensityTable kde_density(const Eigen::VectorXd& samples, int grid = 256,
                                double pad_bandwidths = 5.0) {
  DensityTable table;
  table.bandwidth = silverman_bandwidth(samples);
  const double lo = samples.minCoeff() - pad_bandwidths * table.bandwidth;
  const double hi = samples.maxCoeff() + pad_bandwidths * table.bandwidth;
  table.x.setLinSpaced(grid, lo, hi);
  table.density.setZero(grid);
  const double inv_h = 1.0 / table.bandwidth;
  const double norm = inv_h / std::sqrt(2.0 * M_PI) / double(samples.size());
  for (int i = 0; i < grid; ++i) {
    double acc = 0.0;
    for (int s = 0; s < samples.size(); ++s) {
      const double t = (table.x[i] - samples[s]) * inv_h;
      acc += std::exp(-0.5 * t * t);
    }
    table.density[i] = norm * acc;
  }
  return table;
}

inline std::string density_csv(const DensityTable& t) {
  std::ostringstream out;
  out << "value,density\n";
  for (int i = 0; i < t.x.size(); ++i)
    out << io::format_double(t.x[i]) << ',' << io::format_double(t.density[i]) << '\n';
  return out.str();
}

struct Density2D {
  Eigen::VectorXd x, y;
  Eigen::MatrixXd density;  // x.size() rows, y.size() cols
};

inline Density2D kde_density_2d(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                                int grid = 64, double pad_bandwidths = 5.0) {
  Density2D d;
  const double hx = silverman_bandwidth(xs), hy = silverman_bandwidth(ys);
  d.x.setLinSpaced(grid, xs.minCoeff() - pad_bandwidths * hx, xs.maxCoeff() + pad_bandwidths * hx);
  d.y.setLinSpaced(grid, ys.minCoeff() - pad_bandwidths * hy, ys.maxCoeff() + pad_bandwidths * hy);
  d.density.setZero(grid, grid);
  const double norm = 1.0 / (2.0 * M_PI * hx * hy * double(xs.size()));
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      double acc = 0.0;
      for (int s = 0; s < xs.size(); ++s) {
        const double tx = (d.x[i] - xs[s]) / hx;
        const double ty = (d.y[j] - ys[s]) / hy;
        acc += std::exp(-0.5 * (tx * tx + ty * ty));
      }
      d.density(i, j) = norm * acc;
    }
  return d;
}

inline std::string density_2d_csv(const Density2D& d) {
  std::ostringstream out;
  out << "x,y,density\n";
  for (int i = 0; i < d.x.size(); ++i)
    for (int j = 0; j < d.y.size(); ++j)
      out << io::format_double(d.x[i]) << ',' << io::format_double(d.y[j]) << ','
          << io::format_double(d.density(i, j)) << '\n';
  return out.str();
}

/// Burn-in removal and thinning for density estimation.
inline Eigen::MatrixXd thin_chain(const Chain& chain, double burnin_frac, int stride) {
  const int burn = static_cast<int>(burnin_frac * chain.size());
  if (burn >= chain.size()) throw std::invalid_argument("thin_chain: burn-in swallows the chain");
  const int kept = (chain.size() - burn + stride - 1) / stride;
  Eigen::MatrixXd out(kept, chain.dimension());
  int row = 0;
  for (int s = burn; s < chain.size(); s += stride) out.row(row++) = chain.samples.row(s);
  return out;
}

/// Pushforward samples of the lognormal parameter field at one
/// collocation point, one per chain row.
inline Eigen::VectorXd pushforward_parameter(const Eigen::MatrixXd& xi_samples,
                                             const rf::KLEBasis& kle,
                                             const rf::LogNormalSpec& spec, int element) {
  Eigen::VectorXd out(xi_samples.rows());
  for (int s = 0; s < xi_samples.rows(); ++s)
    out[s] = rf::field_value(kle, spec, xi_samples.row(s), element);
  return out;
}

/// Pushforward samples of one response entry (field, node, step) through
/// the PC surrogate.
inline Eigen::VectorXd pushforward_response(const Eigen::MatrixXd& xi_samples,
                                            const pce::Surrogate& surrogate, pce::Field field,
                                            int node, int step) {
  const int dof = (field == pce::Field::theta ? 0 : surrogate.node_count()) + node;
  const Eigen::MatrixXd g = surrogate.pick_coefficients({{dof, step}});
  Eigen::VectorXd out(xi_samples.rows());
  for (int s = 0; s < xi_samples.rows(); ++s)
    out[s] = (g * surrogate.basis_values(xi_samples.row(s)))(0);
  return out;
}

}  // namespace hygropc::bayes
