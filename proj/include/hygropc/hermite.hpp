// SPDX-License-Identifier: Apache-2.0
//
// Probabilists' Hermite polynomials and the closed-form Hermite algebra:
// norms E[He_n^2] = n! and triple products
// E[He_i He_j He_k] = i! j! k! / ((s-i)! (s-j)! (s-k)!), s = (i+j+k)/2,
// nonzero only when i+j+k is even and s >= max(i, j, k).
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "hygropc/multi_index.hpp"

namespace hygropc::pce {

/// He_n(x) by the three-term recurrence He_{n+1} = x He_n - n He_{n-1}.
inline double hermite_value(int degree, double x) {
  if (degree < 0) throw std::invalid_argument("hermite_value: negative degree");
  double h0 = 1.0;
  if (degree == 0) return h0;
  double h1 = x;
  for (int n = 1; n < degree; ++n) {
    const double h2 = x * h1 - n * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

/// Product of univariate polynomials: H_alpha(xi) = prod He_{alpha_k}(xi_k).
inline double hermite_eval(const MultiIndex& alpha, const Eigen::VectorXd& xi) {
  if (static_cast<int>(alpha.size()) != xi.size())
    throw std::invalid_argument("hermite_eval: dimension mismatch");
  double v = 1.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) v *= hermite_value(alpha[k], xi[k]);
  return v;
}

inline double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

/// E[H_alpha^2] = prod alpha_k!.
inline double hermite_norm2(const MultiIndex& alpha) {
  double v = 1.0;
  for (int a : alpha) v *= factorial(a);
  return v;
}

/// Univariate E[He_i He_j He_k] in the standard Gaussian measure.
inline double hermite_triple_1d(int i, int j, int k) {
  const int sum = i + j + k;
  if (sum % 2 != 0) return 0.0;
  const int s = sum / 2;
  if (s < i || s < j || s < k) return 0.0;
  return factorial(i) * factorial(j) * factorial(k) /
         (factorial(s - i) * factorial(s - j) * factorial(s - k));
}

/// Sparse tensor of E[H_a H_b H_c] over one multi-index set; symmetric in
/// all three slots.
class TripleProductTensor {
 public:
  struct Entry {
    int a, b, c;  // a <= b <= c
    double value;
  };

  explicit TripleProductTensor(int size) : r_(size) {}

  int basis_size() const { return r_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void insert(int a, int b, int c, double value) {
    order(a, b, c);
    entries_.push_back({a, b, c, value});
    map_.emplace(key(a, b, c), value);
  }

  /// E[H_a H_b H_c]; zero when the triple is not stored.
  double value(int a, int b, int c) const {
    order(a, b, c);
    auto it = map_.find(key(a, b, c));
    return it == map_.end() ? 0.0 : it->second;
  }

 private:
  static void order(int& a, int& b, int& c) {
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
  }
  std::uint64_t key(int a, int b, int c) const {
    return (static_cast<std::uint64_t>(a) * r_ + b) * r_ + c;
  }

  int r_;
  std::vector<Entry> entries_;
  std::unordered_map<std::uint64_t, double> map_;
};

/// All nonzero E[H_a H_b H_c] over the set, by the univariate closed form
/// composed across dimensions.
inline TripleProductTensor triple_products(const MultiIndexSet& set) {
  TripleProductTensor tensor(set.size());
  for (int a = 0; a < set.size(); ++a)
    for (int b = a; b < set.size(); ++b)
      for (int c = b; c < set.size(); ++c) {
        double v = 1.0;
        for (int k = 0; k < set.dimension && v != 0.0; ++k)
          v *= hermite_triple_1d(set[a][k], set[b][k], set[c][k]);
        if (v != 0.0) tensor.insert(a, b, c, v);
      }
  return tensor;
}

}  // namespace hygropc::pce
