// SPDX-License-Identifier: Apache-2.0
//
// Polynomial chaos surrogate of the transient response: per time step one
// coefficient block [u_alpha] over the multi-index set, for both fields.
// Evaluation is a dense contraction, orders of magnitude cheaper than a
// finite element solve.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hygropc/fem.hpp"
#include "hygropc/hermite.hpp"
#include "hygropc/io.hpp"
#include "hygropc/multi_index.hpp"

namespace hygropc::pce {

struct Surrogate {
  MultiIndexSet basis;
  std::vector<Eigen::MatrixXd> coeffs;  // per step, (2N) x R
  double dt = 0.0;
  double gamma = 0.5;
  int kle_modes = 0;            // stochastic dimension M
  std::uint64_t kle_hash = 0;   // hash of the KLE basis used for the build

  int step_count() const { return static_cast<int>(coeffs.size()); }
  int dof_count() const { return coeffs.empty() ? 0 : static_cast<int>(coeffs.front().rows()); }
  int node_count() const { return dof_count() / 2; }

  /// H_alpha(xi) for every basis index.
  Eigen::VectorXd basis_values(const Eigen::VectorXd& xi) const {
    if (xi.size() != basis.dimension)
      throw std::invalid_argument("Surrogate: xi dimension mismatch");
    Eigen::VectorXd h(basis.size());
    for (int k = 0; k < basis.size(); ++k) h[k] = hermite_eval(basis[k], xi);
    return h;
  }

  /// Full trajectory sum_alpha u_alpha H_alpha(xi).
  fem::TransientSolution evaluate(const Eigen::VectorXd& xi) const {
    const Eigen::VectorXd h = basis_values(xi);
    fem::TransientSolution sol;
    sol.states.resize(step_count(), dof_count());
    sol.times.resize(step_count());
    for (int t = 0; t < step_count(); ++t) {
      sol.states.row(t) = (coeffs[t] * h).transpose();
      sol.times[t] = t * dt;
    }
    return sol;
  }

  /// Coefficient rows of selected (dof, step) pairs, stacked in order;
  /// the product with basis_values(xi) yields those observations only.
  Eigen::MatrixXd pick_coefficients(const std::vector<std::pair<int, int>>& dof_step) const {
    Eigen::MatrixXd g(dof_step.size(), basis.size());
    for (std::size_t k = 0; k < dof_step.size(); ++k) {
      const auto [dof, step] = dof_step[k];
      if (step < 0 || step >= step_count() || dof < 0 || dof >= dof_count())
        throw std::out_of_range("Surrogate: dof/step out of range");
      g.row(k) = coeffs[step].row(dof);
    }
    return g;
  }

  /// Mean response at one step (the zero-index coefficient).
  Eigen::VectorXd mean(int step) const { return coeffs.at(step).col(0); }

  /// Response variance at one step: sum_{alpha != 0} u_alpha^2 E[H_alpha^2].
  Eigen::VectorXd variance(int step) const {
    const auto& u = coeffs.at(step);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(u.rows());
    for (int k = 1; k < basis.size(); ++k)
      v += hermite_norm2(basis[k]) * u.col(k).cwiseAbs2();
    return v;
  }
};

enum class Field { theta, phi };

/// Monte Carlo estimate of the error expectation between two sets of
/// response trajectories: mean over samples of
/// sum_n sum_t |u^a_{n,t} - u^b_{n,t}| / u^a_{n,t}, per field.
inline double error_expectation(const std::vector<fem::TransientSolution>& a,
                                const std::vector<fem::TransientSolution>& b, Field field) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("error_expectation: sample sets must match and be nonempty");
  double acc = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    const auto& ua = a[s];
    const auto& ub = b[s];
    if (ua.states.rows() != ub.states.rows() || ua.states.cols() != ub.states.cols())
      throw std::invalid_argument("error_expectation: trajectory shapes differ");
    const int n = ua.node_count();
    const int off = field == Field::theta ? 0 : n;
    for (int t = 0; t < ua.step_count(); ++t)
      for (int k = 0; k < n; ++k) {
        const double denom = ua.states(t, off + k);
        if (std::abs(denom) < 1e-10)
          throw std::invalid_argument("error_expectation: near-zero reference entry");
        acc += std::abs(denom - ub.states(t, off + k)) / std::abs(denom);
      }
  }
  return acc / static_cast<double>(a.size());
}

// ---- serialisation ----

inline constexpr int kSurrogateFormatVersion = 1;

inline nlohmann::json to_json(const Surrogate& s) {
  nlohmann::json j;
  j["format"] = "hygropc-surrogate";
  j["version"] = kSurrogateFormatVersion;
  j["m"] = s.basis.dimension;
  j["p"] = s.basis.degree;
  j["index_set"] = s.basis.indices;
  j["kle_modes"] = s.kle_modes;
  j["kle_hash"] = io::hash_hex(s.kle_hash);
  j["dt"] = s.dt;
  j["gamma"] = s.gamma;
  j["steps"] = s.step_count();
  j["dofs"] = s.dof_count();
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& u : s.coeffs) {
    std::vector<double> flat(u.size());
    Eigen::Map<Eigen::MatrixXd>(flat.data(), u.rows(), u.cols()) = u;
    blocks.push_back(std::move(flat));
  }
  j["coeffs_column_major"] = std::move(blocks);
  return j;
}

inline Surrogate surrogate_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != std::string("hygropc-surrogate"))
    throw std::invalid_argument("surrogate_from_json: not a surrogate container");
  if (!j.contains("version"))
    throw std::invalid_argument("surrogate_from_json: missing version field");
  if (j.at("version").get<int>() != kSurrogateFormatVersion)
    throw std::invalid_argument("surrogate_from_json: unsupported container version");
  Surrogate s;
  s.basis.dimension = j.at("m").get<int>();
  s.basis.degree = j.at("p").get<int>();
  s.basis.indices = j.at("index_set").get<std::vector<MultiIndex>>();
  s.kle_modes = j.at("kle_modes").get<int>();
  s.kle_hash = std::stoull(j.at("kle_hash").get<std::string>(), nullptr, 16);
  s.dt = j.at("dt").get<double>();
  s.gamma = j.at("gamma").get<double>();
  const int steps = j.at("steps").get<int>();
  const int dofs = j.at("dofs").get<int>();
  const auto& blocks = j.at("coeffs_column_major");
  if (static_cast<int>(blocks.size()) != steps)
    throw std::invalid_argument("surrogate_from_json: step count mismatch");
  s.coeffs.reserve(steps);
  for (const auto& b : blocks) {
    const auto flat = b.get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != dofs * static_cast<int>(s.basis.indices.size()))
      throw std::invalid_argument("surrogate_from_json: coefficient block size mismatch");
    s.coeffs.push_back(
        Eigen::Map<const Eigen::MatrixXd>(flat.data(), dofs, s.basis.indices.size()));
  }
  return s;
}

}  // namespace hygropc::pce
