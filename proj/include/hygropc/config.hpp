// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one human-editable JSON file covering every pipeline
// stage. All randomness flows from the named seeds; the effective
// configuration is echoed verbatim into each run manifest.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hygropc/bayes.hpp"
#include "hygropc/fem.hpp"
#include "hygropc/galerkin.hpp"
#include "hygropc/mesh.hpp"
#include "hygropc/random_field.hpp"

namespace hygropc::cli {

struct RunConfig {
  // mesh
  int nx = 16, ny = 5;
  double lx = 0.6, ly = 0.15;

  fem::BoundaryConditions bc;
  fem::TimeIntegration time;

  rf::MaterialPriors priors = rf::MaterialPriors::masonry_defaults();
  rf::CovarianceKernel kernel;

  // surrogate
  int kle_modes = 7;
  int pce_degree = 2;
  int quad_level = 0;  // 0 = degree + 1

  // accuracy study emitted by build-surrogate
  std::vector<int> study_modes;
  std::vector<int> study_degrees;
  int study_samples = 50;

  // observations
  std::vector<int> probe_nodes;        // empty = default layout
  std::vector<int> observation_steps;  // empty = default layout
  bayes::NoiseModel noise;
  bool observation_noise = true;

  // mcmc
  int mcmc_samples = 100000;
  double proposal_scale = 0.0;  // 0 = auto-tuned
  int warmup = 2000;
  double burnin_frac = 0.1;
  int thin = 10;

  // solvers
  fem::SolverOptions fe;
  pce::GalerkinOptions galerkin;

  // seeds
  std::uint64_t seed_truth = 1001;
  std::uint64_t seed_noise = 2002;
  std::uint64_t seed_chain = 3003;
  std::uint64_t seed_samples = 4004;

  std::string out_dir = "out";

  int element_count() const { return (nx - 1) * (ny - 1) * 2; }

  fem::Mesh make_mesh() const { return fem::build_mesh(nx, ny, lx, ly); }

  bayes::ProbeLayout probe_layout(const fem::Mesh& mesh) const {
    if (probe_nodes.empty() != observation_steps.empty())
      throw std::invalid_argument(
          "config: observations.probe_nodes and observations.steps must be set together");
    if (probe_nodes.empty()) return bayes::default_probe_layout(mesh, time.steps);
    bayes::ProbeLayout layout;
    layout.probe_nodes = probe_nodes;
    layout.time_steps = observation_steps;
    return layout;
  }

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw std::invalid_argument("config: " + key + ": " + why);
    };
    if (nx < 2 || ny < 2) fail("mesh.nx/ny", "grid must be at least 2x2");
    if (!(lx > 0.0) || !(ly > 0.0)) fail("mesh.lx/ly", "side lengths must be positive");
    try {
      bc.validate();
    } catch (const std::exception& e) {
      fail("boundary", e.what());
    }
    try {
      time.validate();
    } catch (const std::exception& e) {
      fail("time", e.what());
    }
    if (time.gamma == 0.0) fail("time.gamma", "explicit stepping (gamma = 0) is not supported");
    try {
      kernel.validate();
    } catch (const std::exception& e) {
      fail("kernel", e.what());
    }
    if (kle_modes < 1 || kle_modes > element_count())
      fail("pce.kle_modes", "must lie in [1, element count]");
    if (pce_degree < 0) fail("pce.degree", "must be nonnegative");
    if (quad_level < 0) fail("pce.quad_level", "must be nonnegative (0 = degree + 1)");
    for (int m : study_modes)
      if (m < 1 || m > element_count()) fail("study.modes", "mode count out of range");
    for (int p : study_degrees)
      if (p < 0) fail("study.degrees", "degree must be nonnegative");
    if (study_samples < 1) fail("study.samples", "must be positive");
    try {
      noise.validate();
    } catch (const std::exception& e) {
      fail("observations", e.what());
    }
    for (int p : probe_nodes)
      if (p < 0 || p >= nx * ny) fail("observations.probe_nodes", "node index out of range");
    for (int t : observation_steps)
      if (t < 0 || t >= time.steps) fail("observations.steps", "time step out of range");
    if (mcmc_samples < 1) fail("mcmc.samples", "must be positive");
    if (proposal_scale < 0.0) fail("mcmc.proposal_scale", "must be nonnegative (0 = auto)");
    if (warmup < 0) fail("mcmc.warmup", "must be nonnegative");
    if (!(burnin_frac >= 0.0 && burnin_frac < 1.0)) fail("mcmc.burnin_frac", "must lie in [0,1)");
    if (thin < 1) fail("mcmc.thin", "must be >= 1");
    if (!(fe.newton_tol_rel > 0.0)) fail("solver.newton_tol_rel", "must be positive");
    if (fe.max_newton < 1) fail("solver.max_newton", "must be positive");
    if (!(galerkin.newton_tol_rel > 0.0)) fail("solver.galerkin_tol_rel", "must be positive");
    if (galerkin.max_newton < 1) fail("solver.galerkin_max_newton", "must be positive");
    if (!(galerkin.krylov_tol > 0.0)) fail("solver.krylov_tol", "must be positive");
    if (out_dir.empty()) fail("output.dir", "must not be empty");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["mesh"] = {{"nx", c.nx}, {"ny", c.ny}, {"lx", c.lx}, {"ly", c.ly}};
  j["boundary"] = {
      {"kind", c.bc.kind == fem::BoundaryConditions::Kind::dirichlet ? "dirichlet" : "robin"},
      {"theta_ext", c.bc.theta_ext}, {"phi_ext", c.bc.phi_ext},
      {"theta_int", c.bc.theta_int}, {"phi_int", c.bc.phi_int},
      {"theta_in", c.bc.theta_in},   {"phi_in", c.bc.phi_in},
      {"robin_alpha_theta", c.bc.robin_alpha_theta},
      {"robin_alpha_phi", c.bc.robin_alpha_phi}};
  j["time"] = {{"gamma", c.time.gamma}, {"dt_s", c.time.dt}, {"steps", c.time.steps}};
  nlohmann::json priors;
  for (int k = 0; k < 8; ++k)
    priors[rf::MaterialPriors::name(k)] = {{"mean", c.priors[k].mu_q}, {"std", c.priors[k].sigma_q}};
  j["material_priors"] = priors;
  j["kernel"] = {{"lx1", c.kernel.lx1}, {"lx2", c.kernel.lx2}};
  j["pce"] = {{"kle_modes", c.kle_modes}, {"degree", c.pce_degree}, {"quad_level", c.quad_level}};
  j["study"] = {{"modes", c.study_modes}, {"degrees", c.study_degrees}, {"samples", c.study_samples}};
  j["observations"] = {
      {"probe_nodes", c.probe_nodes},
      {"steps", c.observation_steps},
      {"sigma_theta", c.noise.sigma_theta},
      {"sigma_phi", c.noise.sigma_phi},
      {"covariance",
       c.noise.covariance == bayes::NoiseModel::Covariance::diagonal ? "diagonal" : "empirical"},
      {"replicates", c.noise.replicates},
      {"noise", c.observation_noise}};
  j["mcmc"] = {{"samples", c.mcmc_samples},
               {"proposal_scale", c.proposal_scale},
               {"warmup", c.warmup},
               {"burnin_frac", c.burnin_frac},
               {"thin", c.thin}};
  j["solver"] = {{"newton_tol_rel", c.fe.newton_tol_rel},
                 {"max_newton", c.fe.max_newton},
                 {"galerkin_tol_rel", c.galerkin.newton_tol_rel},
                 {"galerkin_max_newton", c.galerkin.max_newton},
                 {"krylov_tol", c.galerkin.krylov_tol}};
  j["seeds"] = {{"truth", c.seed_truth},
                {"noise", c.seed_noise},
                {"chain", c.seed_chain},
                {"samples", c.seed_samples}};
  j["output"] = {{"dir", c.out_dir}};
  return j;
}

/// Strict parse: every key must be present; nlohmann's error message names
/// the missing key.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    const auto& mesh = j.at("mesh");
    c.nx = mesh.at("nx").get<int>();
    c.ny = mesh.at("ny").get<int>();
    c.lx = mesh.at("lx").get<double>();
    c.ly = mesh.at("ly").get<double>();

    const auto& b = j.at("boundary");
    const std::string kind = b.at("kind").get<std::string>();
    if (kind == "dirichlet")
      c.bc.kind = fem::BoundaryConditions::Kind::dirichlet;
    else if (kind == "robin")
      c.bc.kind = fem::BoundaryConditions::Kind::robin;
    else
      throw std::invalid_argument("boundary.kind must be 'dirichlet' or 'robin'");
    c.bc.theta_ext = b.at("theta_ext").get<double>();
    c.bc.phi_ext = b.at("phi_ext").get<double>();
    c.bc.theta_int = b.at("theta_int").get<double>();
    c.bc.phi_int = b.at("phi_int").get<double>();
    c.bc.theta_in = b.at("theta_in").get<double>();
    c.bc.phi_in = b.at("phi_in").get<double>();
    c.bc.robin_alpha_theta = b.at("robin_alpha_theta").get<double>();
    c.bc.robin_alpha_phi = b.at("robin_alpha_phi").get<double>();

    const auto& t = j.at("time");
    c.time.gamma = t.at("gamma").get<double>();
    c.time.dt = t.at("dt_s").get<double>();
    c.time.steps = t.at("steps").get<int>();

    const auto& priors = j.at("material_priors");
    auto spec = [&](const char* name) {
      const auto& p = priors.at(name);
      return rf::LogNormalSpec::from_moments(p.at("mean").get<double>(),
                                             p.at("std").get<double>());
    };
    c.priors.dwf = spec("dwf");
    c.priors.w80 = spec("w80");
    c.priors.lambda0 = spec("lambda0");
    c.priors.btcs = spec("btcs");
    c.priors.mu = spec("mu");
    c.priors.a = spec("a");
    c.priors.cs = spec("cs");
    c.priors.rhos = spec("rhos");

    c.kernel.lx1 = j.at("kernel").at("lx1").get<double>();
    c.kernel.lx2 = j.at("kernel").at("lx2").get<double>();

    const auto& pce = j.at("pce");
    c.kle_modes = pce.at("kle_modes").get<int>();
    c.pce_degree = pce.at("degree").get<int>();
    c.quad_level = pce.at("quad_level").get<int>();

    const auto& study = j.at("study");
    c.study_modes = study.at("modes").get<std::vector<int>>();
    c.study_degrees = study.at("degrees").get<std::vector<int>>();
    c.study_samples = study.at("samples").get<int>();

    const auto& obs = j.at("observations");
    c.probe_nodes = obs.at("probe_nodes").get<std::vector<int>>();
    c.observation_steps = obs.at("steps").get<std::vector<int>>();
    c.noise.sigma_theta = obs.at("sigma_theta").get<double>();
    c.noise.sigma_phi = obs.at("sigma_phi").get<double>();
    const std::string cov = obs.at("covariance").get<std::string>();
    if (cov == "diagonal")
      c.noise.covariance = bayes::NoiseModel::Covariance::diagonal;
    else if (cov == "empirical")
      c.noise.covariance = bayes::NoiseModel::Covariance::empirical;
    else
      throw std::invalid_argument("observations.covariance must be 'diagonal' or 'empirical'");
    c.noise.replicates = obs.at("replicates").get<int>();
    c.observation_noise = obs.at("noise").get<bool>();

    const auto& mcmc = j.at("mcmc");
    c.mcmc_samples = mcmc.at("samples").get<int>();
    c.proposal_scale = mcmc.at("proposal_scale").get<double>();
    c.warmup = mcmc.at("warmup").get<int>();
    c.burnin_frac = mcmc.at("burnin_frac").get<double>();
    c.thin = mcmc.at("thin").get<int>();

    const auto& solver = j.at("solver");
    c.fe.newton_tol_rel = solver.at("newton_tol_rel").get<double>();
    c.fe.max_newton = solver.at("max_newton").get<int>();
    c.galerkin.newton_tol_rel = solver.at("galerkin_tol_rel").get<double>();
    c.galerkin.max_newton = solver.at("galerkin_max_newton").get<int>();
    c.galerkin.krylov_tol = solver.at("krylov_tol").get<double>();

    const auto& seeds = j.at("seeds");
    c.seed_truth = seeds.at("truth").get<std::uint64_t>();
    c.seed_noise = seeds.at("noise").get<std::uint64_t>();
    c.seed_chain = seeds.at("chain").get<std::uint64_t>();
    c.seed_samples = seeds.at("samples").get<std::uint64_t>();

    c.out_dir = j.at("output").at("dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace hygropc::cli
