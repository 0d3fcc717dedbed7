// SPDX-License-Identifier: Apache-2.0
//
// Gauss-Hermite quadrature for the standard Gaussian measure and its
// Smolyak sparse tensorisation. A level-L sparse rule built from 1D rules
// with linear growth (level l uses l points) integrates multivariate
// polynomials of total degree <= 2L-1 exactly.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

namespace hygropc::pce {

struct QuadratureRule1D {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;  // sum to 1 (normalised Gaussian measure)
};

/// n-point Gauss-Hermite rule for the standard normal weight, by
/// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
/// recurrence (off-diagonal sqrt(k)).
inline QuadratureRule1D gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one point");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(double(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  if (eig.info() != Eigen::Success) throw std::runtime_error("gauss_hermite: eigensolver failed");
  QuadratureRule1D rule;
  rule.nodes = eig.eigenvalues();
  rule.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    const double v = eig.eigenvectors()(0, k);
    rule.weights[k] = v * v;
  }
  return rule;
}

/// Multivariate quadrature in R^M for the standard Gaussian measure.
struct SmolyakRule {
  Eigen::MatrixXd nodes;    // Q x M
  Eigen::VectorXd weights;  // Q, may contain negative entries
  int level = 0;

  int size() const { return static_cast<int>(weights.size()); }
  int dimension() const { return static_cast<int>(nodes.cols()); }

  /// Quadrature estimate of E[f(xi)].
  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (int q = 0; q < size(); ++q) acc += weights[q] * f(Eigen::VectorXd(nodes.row(q)));
    return acc;
  }
};

namespace detail {

// Accumulates weighted tensor-product nodes, merging duplicates. Keys
// quantise coordinates; Gauss-Hermite nodes of moderate size are well
// separated so 1e-12 resolution is safe.
class NodeMerger {
 public:
  explicit NodeMerger(int dim) : dim_(dim) {}

  void add(const Eigen::VectorXd& x, double w) {
    std::vector<std::int64_t> key(dim_);
    for (int k = 0; k < dim_; ++k) key[k] = llround(x[k] * 1e12);
    auto [it, inserted] = index_.emplace(std::move(key), nodes_.size());
    if (inserted) {
      nodes_.push_back(x);
      weights_.push_back(w);
    } else {
      weights_[it->second] += w;
    }
  }

  SmolyakRule finish(int level) const {
    SmolyakRule rule;
    rule.level = level;
    rule.nodes.resize(nodes_.size(), dim_);
    rule.weights.resize(nodes_.size());
    for (std::size_t q = 0; q < nodes_.size(); ++q) {
      rule.nodes.row(q) = nodes_[q];
      rule.weights[q] = weights_[q];
    }
    return rule;
  }

 private:
  int dim_;
  std::map<std::vector<std::int64_t>, std::size_t> index_;
  std::vector<Eigen::VectorXd> nodes_;
  std::vector<double> weights_;
};

inline void tensor_accumulate(const std::vector<QuadratureRule1D>& rules, double coeff,
                              NodeMerger& merger) {
  const int dim = static_cast<int>(rules.size());
  std::vector<int> idx(dim, 0);
  Eigen::VectorXd x(dim);
  while (true) {
    double w = coeff;
    for (int k = 0; k < dim; ++k) {
      x[k] = rules[k].nodes[idx[k]];
      w *= rules[k].weights[idx[k]];
    }
    merger.add(x, w);
    int k = 0;
    for (; k < dim; ++k) {
      if (++idx[k] < rules[k].nodes.size()) break;
      idx[k] = 0;
    }
    if (k == dim) break;
  }
}

inline double binomial(int n, int k) {
  double v = 1.0;
  for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
  return v;
}

}  // namespace detail

/// Full tensor-product Gauss-Hermite rule with n1d points per dimension.
inline SmolyakRule tensor_rule(int dimension, int n1d) {
  if (dimension < 1) throw std::invalid_argument("tensor_rule: dimension must be >= 1");
  detail::NodeMerger merger(dimension);
  std::vector<QuadratureRule1D> rules(dimension, gauss_hermite(n1d));
  detail::tensor_accumulate(rules, 1.0, merger);
  return merger.finish(0);
}

/// Smolyak sparse rule of the given level: the combination formula
/// A(q, M) = sum_{q-M+1 <= |i| <= q} (-1)^(q-|i|) C(M-1, q-|i|) U^{i_1} x
/// ... x U^{i_M} with q = M + level - 1 and l-point 1D rules.
inline SmolyakRule smolyak_rule(int dimension, int level) {
  if (dimension < 1) throw std::invalid_argument("smolyak_rule: dimension must be >= 1");
  if (level < 1) throw std::invalid_argument("smolyak_rule: level must be >= 1");

  std::vector<QuadratureRule1D> rules_1d(level + 1);
  for (int l = 1; l <= level; ++l) rules_1d[l] = gauss_hermite(l);

  const int q = dimension + level - 1;
  detail::NodeMerger merger(dimension);

  // enumerate multi-levels i with i_k >= 1 and max(dimension, q-dimension+1) <= |i| <= q
  std::vector<int> lv(dimension, 1);
  auto recurse = [&](auto&& self, int pos, int remaining_max) -> void {
    if (pos == dimension - 1) {
      for (int v = 1; v <= remaining_max; ++v) {
        lv[pos] = v;
        int total = 0;
        for (int k : lv) total += k;
        if (total < q - dimension + 1) continue;
        const double coeff =
            ((q - total) % 2 == 0 ? 1.0 : -1.0) * detail::binomial(dimension - 1, q - total);
        std::vector<QuadratureRule1D> rules(dimension);
        for (int k = 0; k < dimension; ++k) rules[k] = rules_1d[lv[k]];
        detail::tensor_accumulate(rules, coeff, merger);
      }
      return;
    }
    for (int v = 1; v <= remaining_max - (dimension - 1 - pos); ++v) {
      lv[pos] = v;
      self(self, pos + 1, remaining_max - v);
    }
  };
  recurse(recurse, 0, q);

  return merger.finish(level);
}

}  // namespace hygropc::pce
