// SPDX-License-Identifier: Apache-2.0
//
// Deterministic forward model: P1 finite-element discretisation of the
// coupled heat and moisture balance equations, generalised-midpoint time
// stepping and a damped Newton solve of the per-step nonlinear system
//
//   (gamma dt K(u) + C(u)) u = gamma dt F + C(u) [u_prev + dt (1-gamma) udot_prev].
//
// The assembler exposes raw value arrays over a fixed sparsity pattern so
// the stochastic Galerkin solver can reuse it without building matrices
// at every quadrature node.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hygropc/io.hpp"
#include "hygropc/kunzel.hpp"
#include "hygropc/mesh.hpp"

namespace hygropc::fem {

struct BoundaryConditions {
  double theta_ext = 5.0;   // exterior side load [degC]
  double phi_ext = 0.5;
  double theta_int = 24.0;  // interior side load [degC]
  double phi_int = 0.8;
  double theta_in = 14.0;   // initial values over the whole domain
  double phi_in = 0.5;

  enum class Kind { dirichlet, robin };
  Kind kind = Kind::dirichlet;
  double robin_alpha_theta = 8.0;  // surface heat transfer [W m^-2 K^-1]
  double robin_alpha_phi = 1e-2;   // surface moisture transfer [kg m^-2 s^-1]

  void validate() const {
    for (double phi : {phi_ext, phi_int, phi_in})
      if (!(phi > 0.0 && phi < 1.0))
        throw std::invalid_argument("BoundaryConditions: relative humidities must lie in (0,1)");
    if (kind == Kind::robin && (!(robin_alpha_theta > 0.0) || !(robin_alpha_phi > 0.0)))
      throw std::invalid_argument("BoundaryConditions: robin transfer coefficients must be positive");
  }
};

struct TimeIntegration {
  double gamma = 0.5;   // midpoint rule parameter; 0.5 = Crank-Nicolson
  double dt = 9600.0;   // step size [s]
  int steps = 151;      // stored states including the initial one

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0))
      throw std::invalid_argument("TimeIntegration: gamma must lie in [0,1]");
    if (!(dt > 0.0)) throw std::invalid_argument("TimeIntegration: dt must be positive");
    if (steps < 1) throw std::invalid_argument("TimeIntegration: steps must be >= 1");
  }
};

/// Nodal trajectory of both fields; row t holds
/// (u_theta,1..N, u_phi,1..N) at time t*dt.
struct TransientSolution {
  Eigen::MatrixXd states;  // T x 2N
  Eigen::VectorXd times;   // T

  int step_count() const { return static_cast<int>(states.rows()); }
  int node_count() const { return static_cast<int>(states.cols()) / 2; }
  double theta(int t, int n) const { return states(t, n); }
  double phi(int t, int n) const { return states(t, node_count() + n); }
};

inline std::string solution_csv(const TransientSolution& s) {
  std::ostringstream out;
  out << "step,time_s,node,theta_C,phi\n";
  for (int t = 0; t < s.step_count(); ++t)
    for (int n = 0; n < s.node_count(); ++n)
      out << t << ',' << io::format_double(s.times[t]) << ',' << n << ','
          << io::format_double(s.theta(t, n)) << ',' << io::format_double(s.phi(t, n)) << '\n';
  return out.str();
}

/// Switches used by tests and verification runs to decouple the system.
struct CoefficientOverrides {
  bool no_vapour = false;       // force delta_p = 0
  bool no_liquid = false;       // force D_phi = 0
  bool constant_lambda = false; // force lambda = lambda0
};

/// Nonlinear step failure; carries the step index and residual history.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int step, std::vector<double> residuals)
      : std::runtime_error(what), step_index(step), residual_history(std::move(residuals)) {}
  int step_index;
  std::vector<double> residual_history;  // relative residual per Newton iteration
};

/// Element stiffness for a linear triangle with a constant scalar
/// coefficient: k * area * grad(phi_i).grad(phi_j).
inline Eigen::Matrix3d element_stiffness(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                         const Eigen::Vector2d& c, double k = 1.0) {
  const double twoA = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  if (!(twoA > 0.0)) throw std::invalid_argument("element_stiffness: degenerate or flipped triangle");
  Eigen::Matrix<double, 3, 2> g;
  g << b.y() - c.y(), c.x() - b.x(),
       c.y() - a.y(), a.x() - c.x(),
       a.y() - b.y(), b.x() - a.x();
  g /= twoA;
  return k * (0.5 * twoA) * (g * g.transpose());
}

/// Consistent element mass for a linear triangle with a constant scalar
/// coefficient: c * area / 12 * [[2,1,1],[1,2,1],[1,1,2]].
inline Eigen::Matrix3d element_mass(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                    const Eigen::Vector2d& c, double coeff = 1.0) {
  const double twoA = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  if (!(twoA > 0.0)) throw std::invalid_argument("element_mass: degenerate or flipped triangle");
  Eigen::Matrix3d m;
  m << 2, 1, 1, 1, 2, 1, 1, 1, 2;
  return coeff * (0.5 * twoA) / 12.0 * m;
}

/// Assembles the conductivity matrix K, capacity matrix C and load vector
/// F of the semi-discrete system K(u) u + C(u) du/dt = F on a fixed
/// sparsity pattern. Material parameters are piecewise constant per
/// element; state-dependent coefficients are evaluated at the element
/// centroid state with the humidity clamped to the admissible range.
class SystemAssembler {
 public:
  struct Values {
    Eigen::VectorXd k;      // conductivity values over the shared pattern
    Eigen::VectorXd c;      // capacity values over the shared pattern
    Eigen::VectorXd load;   // nodal load vector (Robin contributions)
    long clamp_count = 0;   // humidity clamps during coefficient evaluation
  };

  explicit SystemAssembler(const Mesh& mesh, CoefficientOverrides overrides = {})
      : mesh_(&mesh), overrides_(overrides), n_(mesh.node_count()) {
    build_geometry();
    build_pattern();
  }

  int node_count() const { return n_; }
  int dof_count() const { return 2 * n_; }
  int nnz() const { return static_cast<int>(pattern_.nonZeros()); }
  const Mesh& mesh() const { return *mesh_; }

  /// theta dof of node n is n; phi dof is N + n.
  int theta_dof(int n) const { return n; }
  int phi_dof(int n) const { return n_ + n; }

  Values assemble(const std::vector<kunzel::MaterialParams>& fields, const Eigen::VectorXd& state,
                  const BoundaryConditions* robin = nullptr) const {
    if (static_cast<int>(fields.size()) != mesh_->element_count())
      throw std::invalid_argument("assemble: one MaterialParams per element required");
    if (state.size() != dof_count())
      throw std::invalid_argument("assemble: state vector has wrong length");
    if (!state.allFinite()) throw std::invalid_argument("assemble: non-finite state");

    Values out;
    out.k = Eigen::VectorXd::Zero(nnz());
    out.c = Eigen::VectorXd::Zero(nnz());
    out.load = Eigen::VectorXd::Zero(dof_count());

    for (int e = 0; e < mesh_->element_count(); ++e) {
      const auto tri = mesh_->triangles.row(e);
      const double theta_c =
          (state[tri[0]] + state[tri[1]] + state[tri[2]]) / 3.0;
      double phi_c =
          (state[n_ + tri[0]] + state[n_ + tri[1]] + state[n_ + tri[2]]) / 3.0;
      const double phi_clamped = kunzel::clamp_phi(phi_c);
      if (phi_clamped != phi_c) ++out.clamp_count;
      phi_c = phi_clamped;

      auto cs = kunzel::evaluate(fields[e], theta_c, phi_c);
      if (overrides_.no_vapour) cs.delta_p = 0.0;
      if (overrides_.no_liquid) cs.dphi_liq = 0.0;
      if (overrides_.constant_lambda) cs.lambda = fields[e].lambda0;

      const double k_tt = cs.lambda + cs.hv * cs.delta_p * phi_c * cs.dpsat;
      const double k_tp = cs.hv * cs.delta_p * cs.psat;
      const double k_pt = cs.delta_p * phi_c * cs.dpsat;
      const double k_pp = cs.dphi_liq + cs.delta_p * cs.psat;

      const double* S = &stiff_geom_[9 * e];
      const double* M = &mass_geom_[9 * e];
      const int* slot = &slots_[36 * e];
      for (int q = 0; q < 9; ++q) {
        out.k[slot[q]] += k_tt * S[q];          // theta-theta
        out.k[slot[9 + q]] += k_tp * S[q];      // theta-phi
        out.k[slot[18 + q]] += k_pt * S[q];     // phi-theta
        out.k[slot[27 + q]] += k_pp * S[q];     // phi-phi
        out.c[slot[q]] += cs.dh_cap * M[q];     // theta-theta capacity
        out.c[slot[27 + q]] += cs.dw_cap * M[q];// phi-phi capacity
      }
    }

    if (robin && robin->kind == BoundaryConditions::Kind::robin) add_robin(*robin, out);
    return out;
  }

  struct Assembled {
    Values vals;
    Eigen::VectorXd jacobian;  // d r / d u over the pattern
  };

  /// Assembly plus the analytic Jacobian of the step residual
  /// r(u) = gdt (K(u) u - F) + C(u) (u - u_hist): the base gdt K + C and
  /// the coefficient-derivative terms from the centroid state.
  Assembled assemble_full(const std::vector<kunzel::MaterialParams>& fields,
                          const Eigen::VectorXd& state, const Eigen::VectorXd& u_hist, double gdt,
                          const BoundaryConditions* robin = nullptr) const {
    Assembled out;
    out.vals = assemble(fields, state, robin);
    out.jacobian = gdt * out.vals.k + out.vals.c;

    for (int e = 0; e < mesh_->element_count(); ++e) {
      const auto tri = mesh_->triangles.row(e);
      const double theta_c = (state[tri[0]] + state[tri[1]] + state[tri[2]]) / 3.0;
      const double phi_raw =
          (state[n_ + tri[0]] + state[n_ + tri[1]] + state[n_ + tri[2]]) / 3.0;
      const double phi_c = kunzel::clamp_phi(phi_raw);
      const bool phi_active = phi_c == phi_raw;  // clamp freezes the phi dependence

      auto cs = kunzel::evaluate(fields[e], theta_c, phi_c);
      auto sl = kunzel::evaluate_slopes(fields[e], theta_c, phi_c);
      if (overrides_.no_vapour) cs.delta_p = sl.ddelta_p_dtheta = 0.0;
      if (overrides_.no_liquid) cs.dphi_liq = sl.ddphi_liq_dphi = 0.0;
      if (overrides_.constant_lambda) {
        cs.lambda = fields[e].lambda0;
        sl.dlambda_dphi = 0.0;
      }
      if (!phi_active) sl.dlambda_dphi = sl.ddphi_liq_dphi = sl.d2w_dphi2 = 0.0;

      // d(block coefficient)/d(theta_c, phi_c)
      const double dk_tt_dt = sl.dhv_dtheta * cs.delta_p * phi_c * cs.dpsat +
                              cs.hv * sl.ddelta_p_dtheta * phi_c * cs.dpsat +
                              cs.hv * cs.delta_p * phi_c * sl.d2psat_dtheta2;
      const double dk_tt_dp =
          sl.dlambda_dphi + (phi_active ? cs.hv * cs.delta_p * cs.dpsat : 0.0);
      const double dk_tp_dt = sl.dhv_dtheta * cs.delta_p * cs.psat +
                              cs.hv * sl.ddelta_p_dtheta * cs.psat +
                              cs.hv * cs.delta_p * cs.dpsat;
      const double dk_pt_dt =
          sl.ddelta_p_dtheta * phi_c * cs.dpsat + cs.delta_p * phi_c * sl.d2psat_dtheta2;
      const double dk_pt_dp = phi_active ? cs.delta_p * cs.dpsat : 0.0;
      const double dk_pp_dt = sl.ddelta_p_dtheta * cs.psat + cs.delta_p * cs.dpsat;
      const double dk_pp_dp = sl.ddphi_liq_dphi;

      // S_e u_e and M_e (u - u_hist)_e per field block
      const double* S = &stiff_geom_[9 * e];
      const double* M = &mass_geom_[9 * e];
      double su_t[3] = {0, 0, 0}, su_p[3] = {0, 0, 0}, md_p[3] = {0, 0, 0};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          su_t[i] += S[3 * i + j] * state[tri[j]];
          su_p[i] += S[3 * i + j] * state[n_ + tri[j]];
          md_p[i] += M[3 * i + j] * (state[n_ + tri[j]] - u_hist[n_ + tri[j]]);
        }

      const int* slot = &slots_[36 * e];
      // slot layout: blocks (theta,theta), (theta,phi), (phi,theta), (phi,phi),
      // 3x3 row-major within each block; centroid derivative weight is 1/3
      for (int i = 0; i < 3; ++i)
        for (int m = 0; m < 3; ++m) {
          const double third = 1.0 / 3.0;
          // theta-row tests
          out.jacobian[slot[3 * i + m]] +=
              gdt * third * (dk_tt_dt * su_t[i] + dk_tp_dt * su_p[i]);
          out.jacobian[slot[9 + 3 * i + m]] +=
              gdt * third * (dk_tt_dp * su_t[i] + 0.0 * su_p[i]);
          // phi-row tests
          out.jacobian[slot[18 + 3 * i + m]] +=
              gdt * third * (dk_pt_dt * su_t[i] + dk_pp_dt * su_p[i]);
          out.jacobian[slot[27 + 3 * i + m]] +=
              gdt * third * (dk_pt_dp * su_t[i] + dk_pp_dp * su_p[i]) +
              third * sl.d2w_dphi2 * md_p[i];
        }
    }
    return out;
  }

  /// y = M(values) x over the shared pattern.
  void apply(const Eigen::VectorXd& vals, const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    y.setZero(dof_count());
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    for (int col = 0; col < dof_count(); ++col) {
      const double xc = x[col];
      if (xc == 0.0) continue;
      for (int s = outer[col]; s < outer[col + 1]; ++s) y[inner[s]] += vals[s] * xc;
    }
  }

  Eigen::SparseMatrix<double> matrix(const Eigen::VectorXd& vals) const {
    Eigen::SparseMatrix<double> m = pattern_;
    std::copy(vals.data(), vals.data() + nnz(), m.valuePtr());
    return m;
  }

  /// Zeroes every entry of the given rows and puts 1 on their diagonal;
  /// used to impose Dirichlet constraints on an assembled value array.
  void constrain_rows(Eigen::VectorXd& vals, const std::vector<int>& dofs) const {
    std::vector<char> mask(dof_count(), 0);
    for (int d : dofs) mask[d] = 1;
    for (int s = 0; s < nnz(); ++s)
      if (mask[row_of_slot_[s]]) vals[s] = 0.0;
    for (int d : dofs) vals[diag_slot_[d]] = 1.0;
  }

 private:
  void build_geometry() {
    const int ne = mesh_->element_count();
    stiff_geom_.resize(9 * ne);
    mass_geom_.resize(9 * ne);
    for (int e = 0; e < ne; ++e) {
      const auto tri = mesh_->triangles.row(e);
      const Eigen::Vector2d a = mesh_->nodes.row(tri[0]);
      const Eigen::Vector2d b = mesh_->nodes.row(tri[1]);
      const Eigen::Vector2d c = mesh_->nodes.row(tri[2]);
      const Eigen::Matrix3d S = element_stiffness(a, b, c);
      const Eigen::Matrix3d M = element_mass(a, b, c);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          stiff_geom_[9 * e + 3 * i + j] = S(i, j);
          mass_geom_[9 * e + 3 * i + j] = M(i, j);
        }
    }
  }

  void build_pattern() {
    const int ne = mesh_->element_count();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(36 * ne + dof_count());
    for (int e = 0; e < ne; ++e) {
      const auto tri = mesh_->triangles.row(e);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          for (int bi = 0; bi < 2; ++bi)
            for (int bj = 0; bj < 2; ++bj)
              trips.emplace_back(bi * n_ + tri[i], bj * n_ + tri[j], 1.0);
    }
    for (int d = 0; d < dof_count(); ++d) trips.emplace_back(d, d, 1.0);
    pattern_.resize(dof_count(), dof_count());
    pattern_.setFromTriplets(trips.begin(), trips.end());
    pattern_.makeCompressed();
    std::fill(pattern_.valuePtr(), pattern_.valuePtr() + pattern_.nonZeros(), 0.0);

    row_of_slot_.resize(pattern_.nonZeros());
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    for (int col = 0; col < dof_count(); ++col)
      for (int s = outer[col]; s < outer[col + 1]; ++s) row_of_slot_[s] = inner[s];

    diag_slot_.resize(dof_count());
    for (int d = 0; d < dof_count(); ++d) diag_slot_[d] = find_slot(d, d);

    slots_.resize(36 * ne);
    for (int e = 0; e < ne; ++e) {
      const auto tri = mesh_->triangles.row(e);
      int q = 0;
      for (int bi = 0; bi < 2; ++bi)
        for (int bj = 0; bj < 2; ++bj)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              slots_[36 * e + q++] = find_slot(bi * n_ + tri[i], bj * n_ + tri[j]);
    }
  }

  int find_slot(int row, int col) const {
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    for (int s = outer[col]; s < outer[col + 1]; ++s)
      if (inner[s] == row) return s;
    throw std::logic_error("SystemAssembler: entry missing from pattern");
  }

  void add_robin(const BoundaryConditions& bc, Values& out) const {
    struct Side {
      BoundaryTag tag;
      double theta_env, phi_env;
    };
    const Side sides[2] = {{BoundaryTag::exterior, bc.theta_ext, bc.phi_ext},
                           {BoundaryTag::interior, bc.theta_int, bc.phi_int}};
    for (const auto& side : sides) {
      for (auto [n1, n2] : mesh_->boundary_edges(side.tag)) {
        const double len = (mesh_->nodes.row(n1) - mesh_->nodes.row(n2)).norm();
        const int nodes[2] = {n1, n2};
        for (int bi = 0; bi < 2; ++bi) {
          const double alpha = bi == 0 ? bc.robin_alpha_theta : bc.robin_alpha_phi;
          const double env = bi == 0 ? side.theta_env : side.phi_env;
          for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
              const double w = alpha * len / 6.0 * (i == j ? 2.0 : 1.0);
              out.k[find_slot(bi * n_ + nodes[i], bi * n_ + nodes[j])] += w;
            }
            out.load[bi * n_ + nodes[i]] += alpha * len / 2.0 * env;
          }
        }
      }
    }
  }

  const Mesh* mesh_;
  CoefficientOverrides overrides_;
  int n_;
  Eigen::SparseMatrix<double> pattern_;
  std::vector<double> stiff_geom_, mass_geom_;  // 3x3 row-major per element
  std::vector<int> slots_;                      // 36 pattern slots per element
  std::vector<int> row_of_slot_, diag_slot_;
};

/// Dirichlet dof/value pairs implied by the mesh tags; empty for Robin runs.
inline std::vector<std::pair<int, double>> dirichlet_values(const Mesh& mesh,
                                                            const BoundaryConditions& bc) {
  std::vector<std::pair<int, double>> out;
  if (bc.kind != BoundaryConditions::Kind::dirichlet) return out;
  const int n = mesh.node_count();
  for (int i = 0; i < n; ++i) {
    if (mesh.tags[i] == BoundaryTag::exterior) {
      out.emplace_back(i, bc.theta_ext);
      out.emplace_back(n + i, bc.phi_ext);
    } else if (mesh.tags[i] == BoundaryTag::interior) {
      out.emplace_back(i, bc.theta_int);
      out.emplace_back(n + i, bc.phi_int);
    }
  }
  return out;
}

struct SolverOptions {
  double newton_tol_rel = 1e-8;
  int max_newton = 40;
  int max_halvings = 12;
  // Far from the solution the frozen-coefficient (Picard) operator
  // descends much more robustly than the exact Jacobian, whose directions
  // overshoot the stiff moisture equation; below this relative residual
  // the solve switches to the analytic Jacobian for the quadratic
  // endgame.
  double newton_switch_rel = 1e-3;
  // per-iteration update caps; safety net against overshoot
  double max_update_theta = 50.0;
  double max_update_phi = 0.5;
  // Start-up rate. The discontinuity between initial and boundary values
  // makes the consistent rate of the stiff moisture subsystem enormous,
  // which wrecks the trapezoidal history state; zero is the robust
  // default, consistent is the right choice for smooth problems
  // (convergence studies).
  enum class InitialRate { zero, consistent };
  InitialRate initial_rate = InitialRate::zero;
};

struct StepStats {
  int newton_iterations = 0;
  double residual_rel = 0.0;
  long clamps = 0;
  std::vector<double> residual_history;  // relative residual before each iteration
};

struct RunStats {
  std::vector<StepStats> steps;
  long total_clamps = 0;
  int total_newton_iterations = 0;
};

class TransportSolver {
 public:
  TransportSolver(const Mesh& mesh, BoundaryConditions bc, TimeIntegration ti,
                  SolverOptions opt = {}, CoefficientOverrides overrides = {})
      : mesh_(&mesh), bc_(bc), ti_(ti), opt_(opt), assembler_(mesh, overrides) {
    bc_.validate();
    ti_.validate();
    if (ti_.gamma == 0.0)
      throw std::invalid_argument("TransportSolver: explicit stepping (gamma = 0) not supported");
    dirichlet_ = dirichlet_values(mesh, bc_);
    dirichlet_dofs_.reserve(dirichlet_.size());
    for (auto& [d, v] : dirichlet_) dirichlet_dofs_.push_back(d);
  }

  const SystemAssembler& assembler() const { return assembler_; }
  const Mesh& mesh() const { return *mesh_; }
  const std::vector<std::pair<int, double>>& dirichlet() const { return dirichlet_; }

  /// Initial nodal vector: initial values everywhere, Dirichlet loads on
  /// the tagged boundary nodes.
  Eigen::VectorXd initial_state() const {
    Eigen::VectorXd u(assembler_.dof_count());
    u.head(mesh_->node_count()).setConstant(bc_.theta_in);
    u.tail(mesh_->node_count()).setConstant(bc_.phi_in);
    for (auto& [d, v] : dirichlet_) u[d] = v;
    return u;
  }

  /// Consistent initial rate: solves C(u0) udot = F - K(u0) u0 on the free
  /// dofs (rate zero on constrained dofs; boundary loads are constant).
  Eigen::VectorXd initial_rate(const std::vector<kunzel::MaterialParams>& fields,
                               const Eigen::VectorXd& u0) const {
    auto vals = assembler_.assemble(fields, u0, &bc_);
    Eigen::VectorXd rhs(assembler_.dof_count());
    assembler_.apply(vals.k, u0, rhs);
    rhs = vals.load - rhs;
    Eigen::VectorXd c_vals = vals.c;
    assembler_.constrain_rows(c_vals, dirichlet_dofs_);
    for (int d : dirichlet_dofs_) rhs[d] = 0.0;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(assembler_.matrix(c_vals));
    if (lu.info() != Eigen::Success)
      throw SolverError("initial rate: capacity matrix factorisation failed", -1, {});
    return lu.solve(rhs);
  }

  /// One generalised-midpoint step; returns the new state and rate.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> step(
      const std::vector<kunzel::MaterialParams>& fields, const Eigen::VectorXd& u_prev,
      const Eigen::VectorXd& udot_prev, int step_index = 0, StepStats* stats = nullptr) const {
    const double gdt = ti_.gamma * ti_.dt;
    const Eigen::VectorXd u_hist = u_prev + ti_.dt * (1.0 - ti_.gamma) * udot_prev;

    StepStats local;
    StepStats& st = stats ? *stats : local;

    struct Iterate {
      Eigen::VectorXd picard, jac, f, r;
      double norm_r = 0.0, norm_f = 0.0;
    };
    auto eval = [&](const Eigen::VectorXd& u) {
      auto full = assembler_.assemble_full(fields, u, u_hist, gdt, &bc_);
      st.clamps += full.vals.clamp_count;
      Iterate it;
      it.picard = gdt * full.vals.k + full.vals.c;
      Eigen::VectorXd cu;
      assembler_.apply(full.vals.c, u_hist, cu);
      it.f = gdt * full.vals.load + cu;
      assembler_.constrain_rows(it.picard, dirichlet_dofs_);
      for (auto& [d, v] : dirichlet_) it.f[d] = v;
      assembler_.apply(it.picard, u, it.r);
      it.r -= it.f;
      it.norm_r = it.r.norm();
      it.norm_f = it.f.norm();
      it.jac = std::move(full.jacobian);
      assembler_.constrain_rows(it.jac, dirichlet_dofs_);
      return it;
    };

    Eigen::VectorXd u = u_prev;
    for (auto& [d, v] : dirichlet_) u[d] = v;
    Iterate cur = eval(u);

    for (int iter = 0;; ++iter) {
      const double rel = cur.norm_r / std::max(cur.norm_f, 1e-30);
      st.residual_history.push_back(rel);
      st.residual_rel = rel;
      if (rel <= opt_.newton_tol_rel) break;
      if (iter >= opt_.max_newton)
        throw SolverError("Newton did not converge within max iterations", step_index,
                          st.residual_history);
      const bool use_newton = rel <= opt_.newton_switch_rel;
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(
          assembler_.matrix(use_newton ? cur.jac : cur.picard));
      if (lu.info() != Eigen::Success)
        throw SolverError("Newton system factorisation failed", step_index, st.residual_history);
      const Eigen::VectorXd delta = lu.solve(-cur.r);

      const int n = assembler_.node_count();
      double eta = 1.0;
      const double d_theta = delta.head(n).cwiseAbs().maxCoeff();
      const double d_phi = delta.tail(n).cwiseAbs().maxCoeff();
      if (d_theta > opt_.max_update_theta) eta = std::min(eta, opt_.max_update_theta / d_theta);
      if (d_phi > opt_.max_update_phi) eta = std::min(eta, opt_.max_update_phi / d_phi);

      Iterate best = eval(u + eta * delta);
      double best_eta = eta;
      for (int h = 0; h < opt_.max_halvings && best.norm_r > cur.norm_r; ++h) {
        eta *= 0.5;
        Iterate trial = eval(u + eta * delta);
        if (trial.norm_r < best.norm_r) {
          best = std::move(trial);
          best_eta = eta;
        }
      }
      u += best_eta * delta;
      cur = std::move(best);
      st.newton_iterations = iter + 1;
    }

    // Rate update of the generalised midpoint rule.
    Eigen::VectorXd udot =
        (u - u_prev - ti_.dt * (1.0 - ti_.gamma) * udot_prev) / (ti_.gamma * ti_.dt);
    return {std::move(u), std::move(udot)};
  }

  TransientSolution run(const std::vector<kunzel::MaterialParams>& fields,
                        RunStats* stats = nullptr) const {
    TransientSolution sol;
    sol.states.resize(ti_.steps, assembler_.dof_count());
    sol.times.resize(ti_.steps);
    Eigen::VectorXd u = initial_state();
    Eigen::VectorXd udot = opt_.initial_rate == SolverOptions::InitialRate::consistent
                               ? initial_rate(fields, u)
                               : Eigen::VectorXd::Zero(assembler_.dof_count());
    sol.states.row(0) = u;
    sol.times[0] = 0.0;
    for (int t = 1; t < ti_.steps; ++t) {
      StepStats st;
      std::tie(u, udot) = step(fields, u, udot, t, &st);
      sol.states.row(t) = u;
      sol.times[t] = t * ti_.dt;
      if (stats) {
        stats->steps.push_back(st);
        stats->total_clamps += st.clamps;
        stats->total_newton_iterations += st.newton_iterations;
      }
    }
    return sol;
  }

 private:
  const Mesh* mesh_;
  BoundaryConditions bc_;
  TimeIntegration ti_;
  SolverOptions opt_;
  SystemAssembler assembler_;
  std::vector<std::pair<int, double>> dirichlet_;
  std::vector<int> dirichlet_dofs_;
};

}  // namespace hygropc::fem
