// SPDX-License-Identifier: Apache-2.0
//
// Batch front end for the five pipeline stages: deterministic simulation,
// surrogate construction, virtual-experiment generation, Bayesian
// updating and report consolidation. All stage outputs are plain CSV/JSON
// under --out; manifests echo the effective configuration and carry
// content hashes of every artifact.
#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "hygropc/bayes.hpp"
#include "hygropc/config.hpp"
#include "hygropc/fem.hpp"
#include "hygropc/galerkin.hpp"
#include "hygropc/io.hpp"
#include "hygropc/mesh.hpp"
#include "hygropc/random_field.hpp"
#include "hygropc/surrogate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hygropc;

namespace {

struct StageIO {
  cli::RunConfig config;
  fs::path out;
  json manifest;

  explicit StageIO(const std::string& stage) { manifest["stage"] = stage; }

  void finish(const std::string& stage, double seconds) {
    manifest["config"] = cli::to_json(config);
    manifest["seconds"] = seconds;
    io::write_text_file(out / ("manifest_" + stage + ".json"), manifest.dump(2) + "\n");
  }

  void add_artifact(const fs::path& file, const std::string& content) {
    io::write_text_file(file, content);
    manifest["artifacts"][file.filename().string()] = io::file_hash_hex(file);
  }
};

cli::RunConfig load_config(const std::string& config_path, const std::string& out_override,
                           long long seed_override) {
  cli::RunConfig config;
  if (!config_path.empty())
    config = cli::config_from_json(json::parse(io::read_text_file(config_path)));
  if (!out_override.empty()) config.out_dir = out_override;
  if (seed_override >= 0) {
    const auto base = static_cast<std::uint64_t>(seed_override);
    config.seed_truth = base + 1;
    config.seed_noise = base + 2;
    config.seed_chain = base + 3;
    config.seed_samples = base + 4;
  }
  config.validate();
  return config;
}

Eigen::VectorXd standard_normal_vector(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd xi(n);
  for (int k = 0; k < n; ++k) xi[k] = normal(rng);
  return xi;
}

std::vector<kunzel::MaterialParams> prior_mean_fields(const cli::RunConfig& config) {
  kunzel::MaterialParams mean;
  mean.dwf = config.priors.dwf.mu_q;
  mean.w80 = config.priors.w80.mu_q;
  mean.lambda0 = config.priors.lambda0.mu_q;
  mean.btcs = config.priors.btcs.mu_q;
  mean.mu = config.priors.mu.mu_q;
  mean.a = config.priors.a.mu_q;
  mean.cs = config.priors.cs.mu_q;
  mean.rhos = config.priors.rhos.mu_q;
  return std::vector<kunzel::MaterialParams>(config.element_count(), mean);
}

rf::KLEBasis build_kle(const cli::RunConfig& config, const fem::Mesh& mesh, int modes) {
  const auto pts = mesh.centroids();
  return rf::kle_decompose(rf::covariance_matrix(pts, config.kernel), modes, pts, config.kernel);
}

json observations_to_json(const bayes::ObservationSet& obs) {
  json j;
  j["probe_nodes"] = obs.layout.probe_nodes;
  j["time_steps"] = obs.layout.time_steps;
  j["values"] = std::vector<double>(obs.values.data(), obs.values.data() + obs.values.size());
  std::vector<double> cov(obs.covariance.size());
  Eigen::Map<Eigen::MatrixXd>(cov.data(), obs.covariance.rows(), obs.covariance.cols()) =
      obs.covariance;
  j["covariance_column_major"] = cov;
  return j;
}

bayes::ObservationSet observations_from_json(const json& j) {
  bayes::ObservationSet obs;
  obs.layout.probe_nodes = j.at("probe_nodes").get<std::vector<int>>();
  obs.layout.time_steps = j.at("time_steps").get<std::vector<int>>();
  const auto values = j.at("values").get<std::vector<double>>();
  obs.values = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  const auto cov = j.at("covariance_column_major").get<std::vector<double>>();
  const int n = static_cast<int>(values.size());
  if (static_cast<int>(cov.size()) != n * n)
    throw std::invalid_argument("observations: covariance size mismatch");
  obs.covariance = Eigen::Map<const Eigen::MatrixXd>(cov.data(), n, n);
  obs.validate();
  return obs;
}

// ---- stages ----

int cmd_simulate(const std::string& config_path, const std::string& out_override,
                 long long seed_override, const std::vector<double>& xi_values) {
  StageIO stage("simulate");
  stage.config = load_config(config_path, out_override, seed_override);
  stage.out = stage.config.out_dir;
  io::Timer timer;

  const fem::Mesh mesh = stage.config.make_mesh();
  std::vector<kunzel::MaterialParams> fields;
  if (xi_values.empty()) {
    fields = prior_mean_fields(stage.config);
    stage.manifest["parameters"] = "prior means";
  } else {
    const auto kle = build_kle(stage.config, mesh, static_cast<int>(xi_values.size()));
    fields = rf::realize_fields(
        kle, stage.config.priors,
        Eigen::Map<const Eigen::VectorXd>(xi_values.data(), xi_values.size()));
    stage.manifest["parameters"] = "kle realisation";
    stage.manifest["xi"] = xi_values;
  }

  fem::TransportSolver solver(mesh, stage.config.bc, stage.config.time, stage.config.fe);
  fem::RunStats stats;
  const auto solution = solver.run(fields, &stats);

  stage.add_artifact(stage.out / "mesh_nodes.csv", fem::mesh_nodes_csv(mesh));
  stage.add_artifact(stage.out / "mesh_triangles.csv", fem::mesh_triangles_csv(mesh));
  stage.add_artifact(stage.out / "solution.csv", fem::solution_csv(solution));
  stage.manifest["diagnostics"] = {{"newton_iterations", stats.total_newton_iterations},
                                   {"phi_clamps", stats.total_clamps},
                                   {"steps", solution.step_count()}};
  stage.finish("simulate", timer.seconds());
  return 0;
}

int cmd_build_surrogate(const std::string& config_path, const std::string& out_override,
                        long long seed_override) {
  StageIO stage("build-surrogate");
  stage.config = load_config(config_path, out_override, seed_override);
  stage.out = stage.config.out_dir;
  io::Timer timer;
  const auto& config = stage.config;

  const fem::Mesh mesh = config.make_mesh();
  const int n = mesh.element_count();

  // one basis with every mode; truncated views are consistent across the
  // surrogate build and the error study
  const auto kle_full = build_kle(config, mesh, n);
  stage.add_artifact(stage.out / "kle.json", rf::to_json(kle_full).dump() + "\n");

  pce::GalerkinStats gstats;
  const auto surrogate =
      pce::GalerkinSolver(mesh, kle_full, config.priors, config.bc, config.time,
                          config.kle_modes, config.pce_degree, config.galerkin)
          .solve(&gstats);
  stage.add_artifact(stage.out / "surrogate.json", pce::to_json(surrogate).dump() + "\n");
  stage.manifest["diagnostics"] = {{"build_seconds", gstats.seconds},
                                   {"phi_clamps", gstats.clamps},
                                   {"quadrature_nodes",
                                    pce::smolyak_rule(config.kle_modes,
                                                      config.quad_level > 0
                                                          ? config.quad_level
                                                          : config.pce_degree + 1)
                                        .size()}};

  // accuracy study: eps(u) against same-mode and full-mode FE references
  if (!config.study_modes.empty() && !config.study_degrees.empty()) {
    std::ostringstream report;
    report << "m,p,r,build_seconds,field,eps_pce,eps_pce_kle\n";

    std::vector<Eigen::VectorXd> xi_full;
    for (int s = 0; s < config.study_samples; ++s)
      xi_full.push_back(standard_normal_vector(n, config.seed_samples + 100 * s));

    fem::TransportSolver fe(mesh, config.bc, config.time, config.fe);
    std::vector<fem::TransientSolution> full_mode;
    for (const auto& xi : xi_full)
      full_mode.push_back(fe.run(rf::realize_fields(kle_full, config.priors, xi)));

    for (int m : config.study_modes) {
      std::vector<fem::TransientSolution> same_mode;
      for (const auto& xi : xi_full)
        same_mode.push_back(fe.run(rf::realize_fields(kle_full, config.priors, xi.head(m))));
      for (int p : config.study_degrees) {
        io::Timer build_timer;
        const auto sur = pce::GalerkinSolver(mesh, kle_full, config.priors, config.bc,
                                             config.time, m, p, config.galerkin)
                             .solve();
        const double build_seconds = build_timer.seconds();
        std::vector<fem::TransientSolution> approx;
        for (const auto& xi : xi_full) approx.push_back(sur.evaluate(xi.head(m)));
        for (auto field : {pce::Field::theta, pce::Field::phi}) {
          const double eps_pce = pce::error_expectation(same_mode, approx, field);
          const double eps_kle = pce::error_expectation(full_mode, approx, field);
          report << m << ',' << p << ',' << sur.basis.size() << ','
                 << io::format_double(build_seconds) << ','
                 << (field == pce::Field::theta ? "theta" : "phi") << ','
                 << io::format_double(eps_pce) << ',' << io::format_double(eps_kle) << '\n';
        }
      }
    }
    stage.add_artifact(stage.out / "error_report.csv", report.str());
  }

  stage.finish("build-surrogate", timer.seconds());
  return 0;
}

int cmd_virtual_experiment(const std::string& config_path, const std::string& out_override,
                           long long seed_override) {
  StageIO stage("virtual-experiment");
  stage.config = load_config(config_path, out_override, seed_override);
  stage.out = stage.config.out_dir;
  io::Timer timer;
  const auto& config = stage.config;

  const fem::Mesh mesh = config.make_mesh();
  const auto kle = build_kle(config, mesh, config.kle_modes);
  const auto layout = config.probe_layout(mesh);
  const Eigen::VectorXd truth_xi = standard_normal_vector(config.kle_modes, config.seed_truth);

  fem::TransportSolver solver(mesh, config.bc, config.time, config.fe);
  auto forward = [&](const Eigen::VectorXd& xi) {
    return solver.run(rf::realize_fields(kle, config.priors, xi));
  };
  const auto obs = bayes::virtual_experiment(truth_xi, forward, layout, config.noise,
                                             config.seed_noise, config.observation_noise);

  stage.add_artifact(stage.out / "observations.json", observations_to_json(obs).dump() + "\n");

  // stored truth: coordinates, parameter fields and clean response
  json truth;
  truth["xi"] = std::vector<double>(truth_xi.data(), truth_xi.data() + truth_xi.size());
  const auto truth_fields = rf::realize_fields(kle, config.priors, truth_xi);
  json fields_json = json::array();
  for (const auto& p : truth_fields)
    fields_json.push_back({{"dwf", p.dwf}, {"w80", p.w80}, {"lambda0", p.lambda0},
                           {"btcs", p.btcs}, {"mu", p.mu}, {"a", p.a}, {"cs", p.cs},
                           {"rhos", p.rhos}});
  truth["fields"] = fields_json;
  const Eigen::VectorXd y_clean = bayes::observation_operator(forward(truth_xi), layout);
  truth["clean_observations"] =
      std::vector<double>(y_clean.data(), y_clean.data() + y_clean.size());
  stage.add_artifact(stage.out / "truth.json", truth.dump() + "\n");

  std::ostringstream csv;
  csv << "index,field,probe_node,step,value\n";
  int k = 0;
  for (int field = 0; field < 2; ++field)
    for (int p : layout.probe_nodes)
      for (int t : layout.time_steps) {
        csv << k << ',' << (field == 0 ? "theta" : "phi") << ',' << p << ',' << t << ','
            << io::format_double(obs.values[k]) << '\n';
        ++k;
      }
  stage.add_artifact(stage.out / "observations.csv", csv.str());

  stage.manifest["diagnostics"] = {{"observations", obs.size()},
                                   {"noise", config.observation_noise}};
  stage.finish("virtual-experiment", timer.seconds());
  return 0;
}

int cmd_update(const std::string& config_path, const std::string& out_override,
               long long seed_override, const std::string& forward_kind) {
  StageIO stage("update");
  stage.config = load_config(config_path, out_override, seed_override);
  stage.out = stage.config.out_dir;
  io::Timer timer;
  const auto& config = stage.config;

  if (forward_kind != "fe" && forward_kind != "pce")
    throw std::invalid_argument("update: --forward must be 'fe' or 'pce'");

  const fem::Mesh mesh = config.make_mesh();
  const auto obs = observations_from_json(
      json::parse(io::read_text_file(stage.out / "observations.json")));
  const auto dof_steps = obs.layout.dof_steps(mesh.node_count());

  // surrogate container, used as the pce forward and for response
  // pushforwards regardless of the chain's forward model
  pce::Surrogate surrogate;
  rf::KLEBasis kle;
  bool have_surrogate = false;
  if (fs::exists(stage.out / "surrogate.json") && fs::exists(stage.out / "kle.json")) {
    surrogate =
        pce::surrogate_from_json(json::parse(io::read_text_file(stage.out / "surrogate.json")));
    kle = rf::kle_from_json(json::parse(io::read_text_file(stage.out / "kle.json")));
    if (rf::kle_hash(kle) != surrogate.kle_hash)
      throw std::invalid_argument("update: surrogate was built against a different KLE basis");
    have_surrogate = true;
  } else {
    kle = build_kle(config, mesh, config.kle_modes);
  }
  if (forward_kind == "pce" && !have_surrogate)
    throw std::invalid_argument("update: pce forward requires surrogate.json and kle.json "
                                "(run build-surrogate first)");

  fem::TransportSolver fe(mesh, config.bc, config.time, config.fe);
  auto fe_observation = [&](const Eigen::VectorXd& xi) {
    return Eigen::VectorXd(bayes::observation_operator(
        fe.run(rf::realize_fields(kle, config.priors, xi)), obs.layout));
  };
  Eigen::MatrixXd pce_coeffs;
  if (have_surrogate) pce_coeffs = surrogate.pick_coefficients(dof_steps);
  auto pce_observation = [&](const Eigen::VectorXd& xi) {
    return Eigen::VectorXd(pce_coeffs * surrogate.basis_values(xi));
  };

  bayes::LogPosterior::ObservationForward forward;
  if (forward_kind == "fe")
    forward = fe_observation;
  else
    forward = pce_observation;
  bayes::LogPosterior log_post(forward, bayes::GaussianLikelihood(obs));

  bayes::MHOptions mh;
  mh.proposal_scale = config.proposal_scale;
  mh.warmup = config.warmup;
  const auto chain = bayes::metropolis_hastings(log_post, config.mcmc_samples,
                                                config.kle_modes, config.seed_chain, mh);
  stage.add_artifact(stage.out / ("chain_" + forward_kind + ".csv"), bayes::chain_csv(chain));

  // densities over the thinned chain
  const Eigen::MatrixXd kept = bayes::thin_chain(chain, config.burnin_frac, config.thin);
  const fs::path densdir = stage.out / "densities";
  for (int k = 0; k < config.kle_modes; ++k) {
    const auto table = bayes::kde_density(kept.col(k));
    stage.add_artifact(densdir / ("xi_" + std::to_string(k + 1) + "_" + forward_kind + ".csv"),
                       bayes::density_csv(table));
  }
  if (config.kle_modes >= 2) {
    const int pair_n = std::min<int>(2000, kept.rows());
    const auto d2 = bayes::kde_density_2d(kept.col(0).head(pair_n), kept.col(1).head(pair_n));
    stage.add_artifact(densdir / ("pair_xi1_xi2_" + forward_kind + ".csv"),
                       bayes::density_2d_csv(d2));
  }

  // parameter pushforward at the element closest to the top-right corner
  const int corner_element = [&] {
    const auto pts = mesh.centroids();
    int best = 0;
    double best_d = 1e300;
    for (int e = 0; e < mesh.element_count(); ++e) {
      const double d = (pts[e] - Eigen::Vector2d(mesh.lx, mesh.ly)).norm();
      if (d < best_d) {
        best_d = d;
        best = e;
      }
    }
    return best;
  }();
  for (auto [name, spec] : {std::pair{"lambda0", &config.priors.lambda0},
                            std::pair{"mu", &config.priors.mu}}) {
    const auto q = bayes::pushforward_parameter(kept, kle, *spec, corner_element);
    stage.add_artifact(densdir / (std::string("param_") + name + "_elem" +
                                  std::to_string(corner_element) + "_" + forward_kind + ".csv"),
                       bayes::density_csv(bayes::kde_density(q)));
  }

  // response pushforward at the first probe and the final observed step
  if (have_surrogate) {
    const int node = obs.layout.probe_nodes.front();
    const int step = obs.layout.time_steps.back();
    for (auto field : {pce::Field::theta, pce::Field::phi}) {
      const auto samples = bayes::pushforward_response(kept, surrogate, field, node, step);
      stage.add_artifact(densdir / (std::string("response_") +
                                    (field == pce::Field::theta ? "theta" : "phi") + "_node" +
                                    std::to_string(node) + "_" + forward_kind + ".csv"),
                         bayes::density_csv(bayes::kde_density(samples)));
    }
  }

  // timing: the chain's own per-sample cost plus a probe of the other
  // forward for the comparison report
  const double per_sample = chain.seconds / config.mcmc_samples;
  double other_per_sample = 0.0;
  {
    const Eigen::VectorXd probe_xi = Eigen::VectorXd::Zero(config.kle_modes);
    io::Timer probe;
    const int reps = forward_kind == "fe" ? 50 : 3;
    for (int i = 0; i < reps; ++i) {
      if (forward_kind == "fe") {
        if (have_surrogate) pce_observation(probe_xi);
      } else {
        fe_observation(probe_xi);
      }
    }
    other_per_sample = probe.seconds() / reps;
  }
  json timing;
  timing["forward"] = forward_kind;
  timing["samples"] = config.mcmc_samples;
  timing["acceptance_rate"] = chain.acceptance_rate;
  timing["proposal_scale"] = chain.proposal_scale;
  timing["chain_seconds"] = chain.seconds;
  timing["per_sample_seconds"] = per_sample;
  timing[forward_kind == "fe" ? "pce_per_sample_seconds" : "fe_per_sample_seconds"] =
      other_per_sample;
  timing["speedup_fe_over_pce"] = forward_kind == "fe"
                                      ? (other_per_sample > 0 ? per_sample / other_per_sample : 0.0)
                                      : other_per_sample / per_sample;
  io::write_text_file(stage.out / ("timing_" + forward_kind + ".json"), timing.dump(2) + "\n");

  stage.manifest["diagnostics"] = {{"acceptance_rate", chain.acceptance_rate},
                                   {"proposal_scale", chain.proposal_scale},
                                   {"kept_samples", kept.rows()}};
  stage.finish("update_" + forward_kind, timer.seconds());
  return 0;
}

int cmd_report(const std::string& out_dir) {
  if (out_dir.empty()) throw std::invalid_argument("report: --out <run dir> is required");
  const fs::path out(out_dir);
  if (!fs::exists(out) || !fs::is_directory(out))
    throw std::invalid_argument("report: run directory does not exist: " + out_dir);

  json report;
  report["run_dir"] = out.string();
  const std::vector<std::string> stages = {"simulate", "build-surrogate", "virtual-experiment",
                                           "update_fe", "update_pce"};
  json found = json::object();
  std::vector<std::string> missing;
  bool any = false;
  for (const auto& s : stages) {
    const fs::path manifest = out / ("manifest_" + s + ".json");
    if (fs::exists(manifest)) {
      any = true;
      found[s] = json::parse(io::read_text_file(manifest));
    } else {
      missing.push_back(s);
    }
  }
  if (!any)
    throw std::invalid_argument("report: no stage manifests found in " + out_dir);
  report["stages"] = found;
  report["missing_stages"] = missing;

  // re-hash every artifact on disk as an integrity check
  json artifacts = json::object();
  for (const auto& entry : fs::recursive_directory_iterator(out)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name == "report.json") continue;
    artifacts[fs::relative(entry.path(), out).string()] = io::file_hash_hex(entry.path());
  }
  report["artifact_hashes"] = artifacts;
  io::write_text_file(out / "report.json", report.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled heat-moisture transport with PC-surrogate Bayesian updating"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  long long seed_override = -1;
  app.add_option("--config", config_path, "JSON run configuration (built-in defaults if omitted)");
  app.add_option("--out", out_override, "output directory override");
  app.add_option("--seed", seed_override, "master seed override (derives all stage seeds)");

  auto* simulate = app.add_subcommand("simulate", "deterministic forward run");
  std::vector<double> xi_values;
  simulate->add_option("--xi", xi_values, "KLE coordinates of the parameter fields")
      ->delimiter(',');

  auto* build = app.add_subcommand("build-surrogate", "KLE + stochastic Galerkin surrogate");
  auto* virt = app.add_subcommand("virtual-experiment", "synthetic noisy observations");

  auto* update = app.add_subcommand("update", "Metropolis-Hastings posterior sampling");
  std::string forward_kind;
  update->add_option("--forward", forward_kind, "forward model: fe | pce")->required();

  auto* report = app.add_subcommand("report", "consolidate run artifacts");

  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (simulate->parsed())
      return cmd_simulate(config_path, out_override, seed_override, xi_values);
    if (build->parsed()) return cmd_build_surrogate(config_path, out_override, seed_override);
    if (virt->parsed()) return cmd_virtual_experiment(config_path, out_override, seed_override);
    if (update->parsed())
      return cmd_update(config_path, out_override, seed_override, forward_kind);
    if (report->parsed()) return cmd_report(out_override);
  } catch (const std::exception& e) {
    std::cerr << "error[" << stage << "]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
