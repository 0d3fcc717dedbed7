// SPDX-License-Identifier: Apache-2.0
//
// Intrusive stochastic Galerkin solver. Per time step it solves the block
// system  E[H_beta A(xi; u) H_alpha] u_alpha = E[f(xi; u) H_beta]  for the
// PC coefficients of both fields. The Kunzel coefficients are not
// polynomial in xi, so the projections are evaluated by Smolyak
// quadrature of the deterministic assembly at the quadrature nodes; the
// Hermite triple-product tensor carries the PC-times-PC products inside
// the linearised operator, and the Krylov solve is preconditioned by a
// mean-based block-Jacobi.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hygropc/fem.hpp"
#include "hygropc/hermite.hpp"
#include "hygropc/multi_index.hpp"
#include "hygropc/quadrature.hpp"
#include "hygropc/random_field.hpp"
#include "hygropc/surrogate.hpp"

namespace hygropc::pce {

struct GalerkinOptions {
  double newton_tol_rel = 1e-6;
  int max_newton = 30;
  int max_halvings = 8;
  double krylov_tol = 1e-8;
  int max_krylov = 800;
  int quad_level = 0;  // 0 -> polynomial degree + 1
  fem::SolverOptions::InitialRate initial_rate = fem::SolverOptions::InitialRate::zero;
};

struct GalerkinStepStats {
  int newton_iterations = 0;
  double residual_rel = 0.0;
  int krylov_iterations = 0;
  std::vector<double> residual_history;
};

struct GalerkinStats {
  std::vector<GalerkinStepStats> steps;
  long clamps = 0;
  double seconds = 0.0;
};

class GalerkinError : public std::runtime_error {
 public:
  GalerkinError(const std::string& what, int step, std::vector<double> residuals)
      : std::runtime_error(what), step_index(step), residual_history(std::move(residuals)) {}
  int step_index;
  std::vector<double> residual_history;
};

class GalerkinSolver {
 public:
  GalerkinSolver(const fem::Mesh& mesh, const rf::KLEBasis& kle, const rf::MaterialPriors& priors,
                 const fem::BoundaryConditions& bc, const fem::TimeIntegration& ti, int dimension,
                 int degree, GalerkinOptions opts = {}, fem::CoefficientOverrides overrides = {})
      : bc_(bc), ti_(ti), opts_(opts), assembler_(mesh, overrides) {
    bc_.validate();
    ti_.validate();
    if (ti_.gamma == 0.0)
      throw std::invalid_argument("GalerkinSolver: explicit stepping (gamma = 0) not supported");
    if (dimension < 1 || dimension > kle.truncation())
      throw std::invalid_argument("GalerkinSolver: dimension must lie in [1, KLE truncation]");

    mset_ = build_index_set(dimension, degree);
    rule_ = smolyak_rule(dimension, opts.quad_level > 0 ? opts.quad_level : degree + 1);
    kle_hash_ = rf::kle_hash(kle);

    const int r = mset_.size();
    const int q = rule_.size();
    hq_.resize(q, r);
    for (int j = 0; j < q; ++j) {
      const Eigen::VectorXd xi = rule_.nodes.row(j);
      for (int k = 0; k < r; ++k) hq_(j, k) = hermite_eval(mset_[k], xi);
    }
    norms_.resize(r);
    for (int k = 0; k < r; ++k) norms_[k] = hermite_norm2(mset_[k]);

    fields_.reserve(q);
    for (int j = 0; j < q; ++j)
      fields_.push_back(rf::realize_fields(kle, priors, rule_.nodes.row(j).transpose()));

    dirichlet_ = fem::dirichlet_values(mesh, bc_);
    dirichlet_dofs_.reserve(dirichlet_.size());
    for (auto& [d, v] : dirichlet_) dirichlet_dofs_.push_back(d);

    // contraction plan of the triple-product tensor, grouped so each
    // sparse product A_gamma v_alpha is formed once
    const TripleProductTensor tensor = triple_products(mset_);
    plan_.resize(r);
    for (int g = 0; g < r; ++g)
      for (int a = 0; a < r; ++a) {
        std::vector<std::pair<int, double>> betas;
        for (int b = 0; b < r; ++b) {
          const double v = tensor.value(g, a, b);
          if (v != 0.0) betas.emplace_back(b, v);
        }
        if (!betas.empty()) plan_[g].emplace_back(a, std::move(betas));
      }
  }

  const MultiIndexSet& basis() const { return mset_; }
  const SmolyakRule& rule() const { return rule_; }
  const fem::SystemAssembler& assembler() const { return assembler_; }

  /// PC block of the initial state: the mean column carries the initial
  /// condition with boundary loads applied, fluctuations start at zero.
  Eigen::MatrixXd initial_coeffs() const {
    const int n = assembler_.node_count();
    Eigen::MatrixXd u0 = Eigen::MatrixXd::Zero(assembler_.dof_count(), mset_.size());
    u0.col(0).head(n).setConstant(bc_.theta_in);
    u0.col(0).tail(n).setConstant(bc_.phi_in);
    for (auto& [d, v] : dirichlet_) u0(d, 0) = v;
    return u0;
  }

  /// Galerkin projection of the consistent initial rate:
  /// E[H_beta C(xi) H_alpha] udot_alpha = E[(F - K(xi) u0) H_beta].
  Eigen::MatrixXd initial_rate(const Eigen::MatrixXd& u0, GalerkinStepStats* stats = nullptr,
                               GalerkinStats* run = nullptr) const {
    Projections pr = project(u0, nullptr, true);
    if (run) run->clamps += pr.clamps;
    GalerkinStepStats local;
    GalerkinStepStats& st = stats ? *stats : local;
    // rhs rows of constrained dofs are zero, so the identity rows of the
    // operator pin the rate to zero there
    auto precond = make_preconditioner(pr.a_gamma[0]);
    return krylov_solve(pr.a_gamma, *precond, pr.rhs, st);
  }

  /// One generalised-midpoint step in PC space.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> step(const Eigen::MatrixXd& u_prev,
                                                   const Eigen::MatrixXd& udot_prev,
                                                   int step_index = 0,
                                                   GalerkinStepStats* stats = nullptr,
                                                   GalerkinStats* run = nullptr) const {
    const Eigen::MatrixXd u_hist = u_prev + ti_.dt * (1.0 - ti_.gamma) * udot_prev;

    GalerkinStepStats local;
    GalerkinStepStats& st = stats ? *stats : local;

    Eigen::MatrixXd u = u_prev;
    for (auto& [d, v] : dirichlet_) {
      u.row(d).setZero();
      u(d, 0) = v;
    }

    Projections cur = project(u, &u_hist, false);
    if (run) run->clamps += cur.clamps;

    for (int iter = 0;; ++iter) {
      const double rel = cur.norm_r / std::max(cur.norm_f, 1e-30);
      st.residual_history.push_back(rel);
      st.residual_rel = rel;
      if (rel <= opts_.newton_tol_rel) break;
      if (iter >= opts_.max_newton)
        throw GalerkinError("stochastic Galerkin Newton did not converge", step_index,
                            st.residual_history);

      const bool use_newton = rel <= fe_caps_.newton_switch_rel;
      const auto& op = use_newton ? cur.j_gamma : cur.a_gamma;
      auto precond = make_preconditioner(op[0]);
      const Eigen::MatrixXd delta = krylov_solve(op, *precond, -cur.residual, st);

      const int n = assembler_.node_count();
      double eta = 1.0;
      const double d_theta = delta.topRows(n).cwiseAbs().maxCoeff();
      const double d_phi = delta.bottomRows(n).cwiseAbs().maxCoeff();
      if (d_theta > fe_caps_.max_update_theta)
        eta = std::min(eta, fe_caps_.max_update_theta / d_theta);
      if (d_phi > fe_caps_.max_update_phi) eta = std::min(eta, fe_caps_.max_update_phi / d_phi);

      Eigen::MatrixXd u_best = u + eta * delta;
      Projections best = project(u_best, &u_hist, false);
      double best_eta = eta;
      if (run) run->clamps += best.clamps;
      for (int h = 0; h < opts_.max_halvings && best.norm_r > cur.norm_r; ++h) {
        eta *= 0.5;
        Eigen::MatrixXd u_trial = u + eta * delta;
        Projections trial = project(u_trial, &u_hist, false);
        if (run) run->clamps += trial.clamps;
        if (trial.norm_r < best.norm_r) {
          best = std::move(trial);
          best_eta = eta;
        }
      }
      u += best_eta * delta;
      cur = std::move(best);
      st.newton_iterations = iter + 1;
    }

    Eigen::MatrixXd udot =
        (u - u_prev - ti_.dt * (1.0 - ti_.gamma) * udot_prev) / (ti_.gamma * ti_.dt);
    return {std::move(u), std::move(udot)};
  }

  /// Full time loop; returns the surrogate of the transient response.
  Surrogate solve(GalerkinStats* stats = nullptr) const {
    io::Timer timer;
    Surrogate s;
    s.basis = mset_;
    s.dt = ti_.dt;
    s.gamma = ti_.gamma;
    s.kle_modes = mset_.dimension;
    s.kle_hash = kle_hash_;
    s.coeffs.reserve(ti_.steps);

    Eigen::MatrixXd u = initial_coeffs();
    GalerkinStepStats rate_stats;
    Eigen::MatrixXd udot =
        opts_.initial_rate == fem::SolverOptions::InitialRate::consistent
            ? initial_rate(u, &rate_stats, stats)
            : Eigen::MatrixXd::Zero(u.rows(), u.cols());
    s.coeffs.push_back(u);
    for (int t = 1; t < ti_.steps; ++t) {
      GalerkinStepStats st;
      std::tie(u, udot) = step(u, udot, t, &st, stats);
      s.coeffs.push_back(u);
      if (stats) stats->steps.push_back(st);
    }
    if (stats) stats->seconds = timer.seconds();
    return s;
  }

 private:
  struct Projections {
    Eigen::MatrixXd residual;              // 2N x R, constrained rows applied
    Eigen::MatrixXd rhs;                   // E[f H_beta] (only for the linear rate solve)
    std::vector<Eigen::VectorXd> a_gamma;  // PC coefficients of the Picard operator
    std::vector<Eigen::VectorXd> j_gamma;  // PC coefficients of the analytic Jacobian
    double norm_r = 0.0, norm_f = 0.0;
    long clamps = 0;
  };

  // Quadrature sweep: evaluates residual projections E[(A u - f) H_beta]
  // and the PCE of the system matrix. In rate mode the roles change to
  // A := C and f := F - K u0 with u taken as the expansion of u0.
  Projections project(const Eigen::MatrixXd& u, const Eigen::MatrixXd* u_hist,
                      bool rate_mode) const {
    const int dofs = assembler_.dof_count();
    const int r = mset_.size();
    const double gdt = ti_.gamma * ti_.dt;

    Projections pr;
    pr.residual.setZero(dofs, r);
    pr.rhs.setZero(dofs, r);
    pr.a_gamma.assign(r, Eigen::VectorXd::Zero(assembler_.nnz()));
    if (!rate_mode) pr.j_gamma.assign(r, Eigen::VectorXd::Zero(assembler_.nnz()));

    Eigen::VectorXd u_j, hist_j, f_j, r_j, tmp;
    for (int j = 0; j < rule_.size(); ++j) {
      const Eigen::VectorXd h = hq_.row(j);
      u_j = u * h;
      const double w = rule_.weights[j];

      if (rate_mode) {
        // linear solve for the rate: operator C, rhs F - K u0
        auto vals = assembler_.assemble(fields_[j], u_j, &bc_);
        pr.clamps += vals.clamp_count;
        assembler_.apply(vals.k, u_j, tmp);
        f_j = vals.load - tmp;
        for (int g = 0; g < r; ++g) {
          const double c = w * h[g] / norms_[g];
          if (c != 0.0) pr.a_gamma[g] += c * vals.c;
        }
      } else {
        hist_j = (*u_hist) * h;
        auto full = assembler_.assemble_full(fields_[j], u_j, hist_j, gdt, &bc_);
        pr.clamps += full.vals.clamp_count;
        Eigen::VectorXd a_vals = gdt * full.vals.k + full.vals.c;
        assembler_.apply(full.vals.c, hist_j, tmp);
        f_j = gdt * full.vals.load + tmp;
        assembler_.apply(a_vals, u_j, r_j);
        r_j -= f_j;
        pr.residual += (w * r_j) * h.transpose();
        for (int g = 0; g < r; ++g) {
          const double c = w * h[g] / norms_[g];
          if (c != 0.0) {
            pr.a_gamma[g] += c * a_vals;
            pr.j_gamma[g] += c * full.jacobian;
          }
        }
      }
      pr.rhs += (w * f_j) * h.transpose();
    }

    if (!rate_mode) {
      constrain_residual(pr.residual, u, false);
      Eigen::MatrixXd f_ref = pr.rhs;
      for (auto& [d, v] : dirichlet_) {
        f_ref.row(d).setZero();
        f_ref(d, 0) = v;
      }
      pr.norm_r = pr.residual.norm();
      pr.norm_f = f_ref.norm();
    } else {
      for (auto& [d, v] : dirichlet_) pr.rhs.row(d).setZero();
    }
    return pr;
  }

  // Dirichlet rows: residual(d, alpha) = u(d, alpha) - target(alpha).
  void constrain_residual(Eigen::MatrixXd& residual, const Eigen::MatrixXd& u,
                          bool rate_mode) const {
    for (auto& [d, v] : dirichlet_) {
      residual.row(d) = u.row(d);
      if (!rate_mode) residual(d, 0) = u(d, 0) - v;
    }
  }

  struct Preconditioner {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    const GalerkinSolver* solver;

    Eigen::MatrixXd apply(const Eigen::MatrixXd& r) const {
      Eigen::MatrixXd z(r.rows(), r.cols());
      for (int b = 0; b < r.cols(); ++b) z.col(b) = lu.solve(r.col(b)) / solver->norms_[b];
      for (int d : solver->dirichlet_dofs_) z.row(d) = r.row(d);
      return z;
    }
  };

  std::unique_ptr<Preconditioner> make_preconditioner(const Eigen::VectorXd& a_mean) const {
    Eigen::VectorXd vals = a_mean;
    assembler_.constrain_rows(vals, dirichlet_dofs_);
    auto p = std::make_unique<Preconditioner>();
    p->solver = this;
    p->lu.compute(assembler_.matrix(vals));
    if (p->lu.info() != Eigen::Success)
      throw GalerkinError("mean-based preconditioner factorisation failed", -1, {});
    return p;
  }

  // Linearised block operator via the Hermite algebra:
  // (J v)_beta = sum_gamma sum_alpha E[H_gamma H_alpha H_beta] A_gamma v_alpha,
  // with identity rows on constrained dofs.
  Eigen::MatrixXd apply_operator(const std::vector<Eigen::VectorXd>& a_gamma,
                                 const Eigen::MatrixXd& v) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(v.rows(), v.cols());
    Eigen::VectorXd prod;
    for (int g = 0; g < mset_.size(); ++g) {
      for (const auto& [alpha, betas] : plan_[g]) {
        assembler_.apply(a_gamma[g], v.col(alpha), prod);
        for (const auto& [beta, val] : betas) out.col(beta) += val * prod;
      }
    }
    for (int d : dirichlet_dofs_) out.row(d) = v.row(d);
    return out;
  }

  // Preconditioned BiCGStab on the flattened coefficient block.
  Eigen::MatrixXd krylov_solve(const std::vector<Eigen::VectorXd>& a_gamma,
                               const Preconditioner& precond, const Eigen::MatrixXd& b,
                               GalerkinStepStats& st) const {
    auto dot = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
      return (x.array() * y.array()).sum();
    };
    const double norm_b = b.norm();
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(b.rows(), b.cols());
    if (norm_b == 0.0) return x;
    Eigen::MatrixXd r = b;
    const Eigen::MatrixXd r0 = r;
    double rho = 1.0, alpha = 1.0, omega = 1.0;
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(b.rows(), b.cols());
    Eigen::MatrixXd p = v;

    for (int it = 0; it < opts_.max_krylov; ++it) {
      ++st.krylov_iterations;
      const double rho1 = dot(r0, r);
      if (std::abs(rho1) < 1e-300)
        throw GalerkinError("BiCGStab breakdown (rho)", -1, {});
      if (it == 0) {
        p = r;
      } else {
        const double beta = (rho1 / rho) * (alpha / omega);
        p = r + beta * (p - omega * v);
      }
      const Eigen::MatrixXd p_hat = precond.apply(p);
      v = apply_operator(a_gamma, p_hat);
      const double r0v = dot(r0, v);
      if (std::abs(r0v) < 1e-300) throw GalerkinError("BiCGStab breakdown (alpha)", -1, {});
      alpha = rho1 / r0v;
      Eigen::MatrixXd s = r - alpha * v;
      if (s.norm() <= opts_.krylov_tol * norm_b) {
        x += alpha * p_hat;
        return x;
      }
      const Eigen::MatrixXd s_hat = precond.apply(s);
      const Eigen::MatrixXd t = apply_operator(a_gamma, s_hat);
      omega = dot(t, s) / dot(t, t);
      x += alpha * p_hat + omega * s_hat;
      r = s - omega * t;
      if (r.norm() <= opts_.krylov_tol * norm_b) return x;
      rho = rho1;
    }
    throw GalerkinError("BiCGStab did not converge", -1, {});
  }

  fem::BoundaryConditions bc_;
  fem::TimeIntegration ti_;
  GalerkinOptions opts_;
  fem::SolverOptions fe_caps_;  // update caps shared with the deterministic solver
  fem::SystemAssembler assembler_;
  MultiIndexSet mset_;
  SmolyakRule rule_;
  Eigen::MatrixXd hq_;     // Q x R Hermite table at the quadrature nodes
  Eigen::VectorXd norms_;  // E[H_alpha^2]
  std::vector<std::vector<kunzel::MaterialParams>> fields_;
  std::vector<std::pair<int, double>> dirichlet_;
  std::vector<int> dirichlet_dofs_;
  std::uint64_t kle_hash_ = 0;
  // plan_[gamma] = [(alpha, [(beta, E[H_g H_a H_b])...])...]
  std::vector<std::vector<std::pair<int, std::vector<std::pair<int, double>>>>> plan_;
};

/// Convenience wrapper building the surrogate in one call.
inline Surrogate build_surrogate(const fem::Mesh& mesh, const rf::KLEBasis& kle,
                                 const rf::MaterialPriors& priors,
                                 const fem::BoundaryConditions& bc,
                                 const fem::TimeIntegration& ti, int dimension, int degree,
                                 GalerkinOptions opts = {}, GalerkinStats* stats = nullptr) {
  return GalerkinSolver(mesh, kle, priors, bc, ti, dimension, degree, opts).solve(stats);
}

/// Non-intrusive spectral projection: u_alpha = E[u(xi) H_alpha] / E[H_alpha^2]
/// with full forward runs at the quadrature nodes. Serves as the
/// independent cross-check of the intrusive path.
inline Surrogate nisp_project(
    const std::function<fem::TransientSolution(const Eigen::VectorXd&)>& forward, int dimension,
    int degree, const SmolyakRule& rule) {
  if (rule.dimension() != dimension)
    throw std::invalid_argument("nisp_project: rule dimension mismatch");
  const MultiIndexSet mset = build_index_set(dimension, degree);
  const int r = mset.size();

  Surrogate s;
  s.basis = mset;
  s.kle_modes = dimension;

  Eigen::VectorXd norms(r);
  for (int k = 0; k < r; ++k) norms[k] = hermite_norm2(mset[k]);

  for (int j = 0; j < rule.size(); ++j) {
    const Eigen::VectorXd xi = rule.nodes.row(j);
    const fem::TransientSolution sol = forward(xi);
    if (j == 0) {
      s.dt = sol.times.size() > 1 ? sol.times[1] - sol.times[0] : 0.0;
      s.coeffs.assign(sol.step_count(), Eigen::MatrixXd::Zero(sol.states.cols(), r));
    }
    Eigen::VectorXd h(r);
    for (int k = 0; k < r; ++k) h[k] = hermite_eval(mset[k], xi);
    for (int t = 0; t < static_cast<int>(s.coeffs.size()); ++t)
      for (int k = 0; k < r; ++k)
        s.coeffs[t].col(k) += rule.weights[j] * h[k] / norms[k] * sol.states.row(t).transpose();
  }
  return s;
}

/// NISP with the finite element transport solver as the forward model.
inline Surrogate nisp_project(const fem::Mesh& mesh, const rf::KLEBasis& kle,
                              const rf::MaterialPriors& priors, const fem::BoundaryConditions& bc,
                              const fem::TimeIntegration& ti, int dimension, int degree,
                              const SmolyakRule& rule, fem::SolverOptions fe_opts = {}) {
  fem::TransportSolver solver(mesh, bc, ti, fe_opts);
  auto forward = [&](const Eigen::VectorXd& xi) {
    return solver.run(rf::realize_fields(kle, priors, xi));
  };
  Surrogate s = nisp_project(forward, dimension, degree, rule);
  s.dt = ti.dt;
  s.gamma = ti.gamma;
  s.kle_hash = rf::kle_hash(kle);
  return s;
}

}  // namespace hygropc::pce
